"""Image-quality metrics: PSNR and SSIM on [0, 1] images.

PSNR uses peak 1 with the mean squared error taken over every channel;
identical (or nearly identical) inputs report the capped 100 dB sentinel
instead of infinity.  SSIM follows the conventional recipe: 11x11
Gaussian window (sigma 1.5), C1 = 0.01^2, C2 = 0.03^2, averaged over
valid window positions only, with RGB scored as the per-channel mean.

Normalized cross-correlation between kernels is included as a
convenience for tests and evaluation scripts; it searches over all
relative shifts so that a translated but otherwise correct kernel still
scores 1.
"""

import json
from dataclasses import dataclass

import numpy as np
from scipy.signal import fftconvolve

from .validation import check_image, check_same_shape, n_channels, to_luminance

PSNR_CAP_DB = 100.0

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2


@dataclass(frozen=True)
class MetricReport:
    """PSNR/SSIM scores for one image pair, with per-channel breakdown."""

    psnr: float
    ssim: float
    psnr_channels: tuple
    ssim_channels: tuple
    aggregation: str  # "rgb-mean" or "luminance"

    def to_json(self):
        """Single-line JSON rendering."""
        return json.dumps(
            {
                "psnr": self.psnr,
                "ssim": self.ssim,
                "psnr_channels": list(self.psnr_channels),
                "ssim_channels": list(self.ssim_channels),
                "aggregation": self.aggregation,
            }
        )

    @staticmethod
    def csv_header():
        return "psnr,ssim,aggregation"

    def to_csv(self):
        return f"{self.psnr:.12g},{self.ssim:.12g},{self.aggregation}"


def psnr(a, b):
    """Peak signal-to-noise ratio in dB (peak 1, MSE over all channels)."""
    a = check_image(a, "a")
    b = check_image(b, "b")
    check_same_shape(a, b, names=("a", "b"))
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    return float(min(PSNR_CAP_DB, 10.0 * np.log10(1.0 / mse)))


def _gaussian_window(size=SSIM_WINDOW, sigma=SSIM_SIGMA):
    half = size // 2
    coords = np.arange(size, dtype=float) - half
    g = np.exp(-(coords**2) / (2.0 * sigma**2))
    w = np.outer(g, g)
    return w / w.sum()


def _ssim_single(a, b):
    window = _gaussian_window()
    mu_a = fftconvolve(a, window, mode="valid")
    mu_b = fftconvolve(b, window, mode="valid")
    var_a = fftconvolve(a * a, window, mode="valid") - mu_a**2
    var_b = fftconvolve(b * b, window, mode="valid") - mu_b**2
    cov = fftconvolve(a * b, window, mode="valid") - mu_a * mu_b
    num = (2.0 * mu_a * mu_b + SSIM_C1) * (2.0 * cov + SSIM_C2)
    den = (mu_a**2 + mu_b**2 + SSIM_C1) * (var_a + var_b + SSIM_C2)
    return float(np.mean(num / den))


def ssim(a, b):
    """Mean SSIM over valid 11x11 window positions; RGB = channel mean."""
    a = check_image(a, "a")
    b = check_image(b, "b")
    check_same_shape(a, b, names=("a", "b"))
    if a.shape[0] < SSIM_WINDOW or a.shape[1] < SSIM_WINDOW:
        raise ValueError(
            f"image {a.shape[:2]} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window"
        )
    if a.ndim == 2:
        return _ssim_single(a, b)
    return float(
        np.mean([_ssim_single(a[:, :, c], b[:, :, c]) for c in range(a.shape[2])])
    )


def metric_report(result, reference, aggregation="rgb-mean"):
    """Score ``result`` against ``reference`` and bundle a MetricReport.

    ``aggregation`` picks how RGB inputs collapse to the headline scores:
    "rgb-mean" pools the MSE over channels for PSNR and averages
    per-channel SSIMs; "luminance" converts both images first.
    """
    result = check_image(result, "result")
    reference = check_image(reference, "reference")
    check_same_shape(result, reference, names=("result", "reference"))
    if aggregation not in ("rgb-mean", "luminance"):
        raise ValueError(f"unknown aggregation {aggregation!r}")

    channels = n_channels(result)
    if channels == 1:
        psnr_channels = (psnr(result, reference),)
        ssim_channels = (ssim(result, reference),)
        return MetricReport(
            psnr=psnr_channels[0],
            ssim=ssim_channels[0],
            psnr_channels=psnr_channels,
            ssim_channels=ssim_channels,
            aggregation=aggregation,
        )

    psnr_channels = tuple(
        psnr(result[:, :, c], reference[:, :, c]) for c in range(channels)
    )
    ssim_channels = tuple(
        ssim(result[:, :, c], reference[:, :, c]) for c in range(channels)
    )
    if aggregation == "luminance":
        head_psnr = psnr(to_luminance(result), to_luminance(reference))
        head_ssim = ssim(to_luminance(result), to_luminance(reference))
    else:
        head_psnr = psnr(result, reference)
        head_ssim = float(np.mean(ssim_channels))
    return MetricReport(
        psnr=head_psnr,
        ssim=head_ssim,
        psnr_channels=psnr_channels,
        ssim_channels=ssim_channels,
        aggregation=aggregation,
    )


def kernel_ncc(estimated, true):
    """Max normalized cross-correlation between two kernels over all shifts.

    Returns a value in [-1, 1]; 1 means the kernels agree up to translation
    and positive scale.
    """
    a = np.asarray(estimated, dtype=float)
    b = np.asarray(true, dtype=float)
    denom = float(np.linalg.norm(a) * np.linalg.norm(b))
    if denom == 0.0:
        raise ValueError("kernel_ncc is undefined for an all-zero kernel")
    corr = fftconvolve(a, b[::-1, ::-1], mode="full")
    return float(corr.max()) / denom
