"""Image/kernel primitives: pyramids, circular gradients, FFT convolution,
salient-edge selection, and file I/O.

Everything here assumes periodic (circular) boundaries so that FFT pointwise
products are exact identities, and the same convention is shared by the
gradient operators and the kernel solver.
"""

from dataclasses import dataclass

import numpy as np
from PIL import Image as PILImage

from .validation import check_image, check_kernel

# Sobel masks for the four edge orientations (horizontal and vertical
# derivatives plus the two rotated diagonal variants).
SOBEL_H = np.array([[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]], dtype=np.float64)
SOBEL_V = SOBEL_H.T.copy()
SOBEL_P45 = np.array([[0, 1, 2], [-1, 0, 1], [-2, -1, 0]], dtype=np.float64)
SOBEL_M45 = np.array([[-2, -1, 0], [-1, 0, 1], [0, 1, 2]], dtype=np.float64)


@dataclass
class Pyramid:
    """Per-scale bundle of images, scale 0 first, each level ceil-half the last."""

    images: list
    kernel_sizes: list | None = None

    @property
    def scales(self):
        return len(self.images)


@dataclass
class EdgeMask:
    """Boolean masks of the strongest responses in four orientations.

    ``degenerate`` is set when every orientation response is identically
    zero (flat image); the masks then select all pixels.
    """

    horizontal: np.ndarray
    vertical: np.ndarray
    diag_p45: np.ndarray
    diag_m45: np.ndarray
    union: np.ndarray
    degenerate: bool


def kernel_center(m, n):
    """0-based coordinate center of an odd m x n kernel."""
    return (m - 1) // 2, (n - 1) // 2


def delta_kernel(m, n=None):
    """Identity kernel: 1 at the coordinate center, 0 elsewhere.

    Accepts either two dimensions, a single dimension (square), or an
    (m, n) shape tuple.
    """
    if n is None:
        if np.ndim(m) == 1:
            m, n = m
        else:
            n = m
    k = np.zeros((m, n), dtype=np.float64)
    r0, c0 = kernel_center(m, n)
    k[r0, c0] = 1.0
    return k


def embed_kernel(ker, shape):
    """Pad a kernel to image size with its coordinate center moved to (0, 0).

    The circular shift makes FFT multiplication implement centered circular
    convolution.  Inverse of :func:`crop_kernel`.
    """
    H, W = shape
    ker = np.asarray(ker, dtype=np.float64)
    m, n = ker.shape
    if m > H or n > W:
        raise ValueError(f"kernel {m}x{n} larger than image {H}x{W}")
    r0, c0 = kernel_center(m, n)
    out = np.zeros((H, W), dtype=np.float64)
    rows = (np.arange(m) - r0) % H
    cols = (np.arange(n) - c0) % W
    out[np.ix_(rows, cols)] = ker
    return out


def crop_kernel(full, size):
    """Circularly crop an image-size map to the m x n support around (0, 0)."""
    H, W = full.shape
    m, n = size
    r0, c0 = kernel_center(m, n)
    rows = (np.arange(m) - r0) % H
    cols = (np.arange(n) - c0) % W
    return full[np.ix_(rows, cols)].copy()


def conv_circular(img, ker):
    """Circular (periodic-boundary) 2-D convolution via FFT.

    The kernel origin is its coordinate center, so convolving with a
    centered delta is the identity.  Multi-channel images are convolved
    per channel with the same kernel.
    """
    arr = check_image(img)
    ker = check_kernel(ker, require_odd=False)
    padded = embed_kernel(ker, arr.shape[:2])
    Fk = np.fft.rfft2(padded)
    if arr.ndim == 2:
        return np.fft.irfft2(np.fft.rfft2(arr) * Fk, s=arr.shape)
    out = np.empty_like(arr)
    for c in range(arr.shape[2]):
        out[:, :, c] = np.fft.irfft2(np.fft.rfft2(arr[:, :, c]) * Fk, s=arr.shape[:2])
    return out


def corr_circular(img, ker):
    """Circular cross-correlation (convolution with the flipped kernel)."""
    return conv_circular(img, np.flip(np.asarray(ker, dtype=np.float64)))


def grad(img):
    """Forward differences along rows and columns with circular wrap.

    Returns (d_row, d_col) where d_row[i, j] = img[i+1, j] - img[i, j]
    (indices mod H) and likewise for columns.  RGB images are differenced
    per channel.
    """
    arr = check_image(img)
    dr = np.roll(arr, -1, axis=0) - arr
    dc = np.roll(arr, -1, axis=1) - arr
    return dr, dc


def grad_adjoint(dr, dc):
    """Adjoint of :func:`grad` (negative circular divergence)."""
    return (np.roll(dr, 1, axis=0) - dr) + (np.roll(dc, 1, axis=1) - dc)


def box_downsample(img):
    """2x2 box-average downsampling; odd edges are replicated before averaging."""
    arr = np.asarray(img, dtype=np.float64)
    H, W = arr.shape[:2]
    pads = [(0, H % 2), (0, W % 2)] + [(0, 0)] * (arr.ndim - 2)
    if H % 2 or W % 2:
        arr = np.pad(arr, pads, mode="edge")
    return 0.25 * (
        arr[0::2, 0::2] + arr[1::2, 0::2] + arr[0::2, 1::2] + arr[1::2, 1::2]
    )


def pyramid_shape(shape, scale):
    H, W = shape
    for _ in range(scale):
        H = -(-H // 2)
        W = -(-W // 2)
    return H, W


def kernel_size_ladder(size, scales):
    """Kernel support per scale: nearest odd integer >= m / 2^s, floored at 3."""
    m, n = size
    ladder = []
    for s in range(scales):
        ms = max(3, int(np.ceil(m / 2**s)))
        ns = max(3, int(np.ceil(n / 2**s)))
        ladder.append((ms + (ms % 2 == 0), ns + (ns % 2 == 0)))
    return ladder


def build_pyramid(img, scales, kernel_size=None, min_side=16):
    """Repeated 2x2 box-average pyramid; level 0 is the input unmodified.

    ``min_side`` rejects pyramids whose coarsest level would be too small
    for reliable estimation (default 16 px per side; callers working at
    desk scale pass a smaller bound explicitly).
    """
    arr = check_image(img)
    if scales < 1:
        raise ValueError(f"scales must be >= 1, got {scales}")
    Hc, Wc = pyramid_shape(arr.shape[:2], scales - 1)
    if Hc < min_side or Wc < min_side:
        raise ValueError(
            f"coarsest level {Hc}x{Wc} falls below {min_side} px; "
            f"use fewer scales or a larger image"
        )
    images = [arr]
    for _ in range(1, scales):
        images.append(box_downsample(images[-1]))
    sizes = None if kernel_size is None else kernel_size_ladder(kernel_size, scales)
    return Pyramid(images=images, kernel_sizes=sizes)


def _sobel_response(arr, mask):
    # Circular 3x3 correlation via rolls.  Positive and negative taps are
    # accumulated separately, each side in magnitude-sorted order: both
    # halves of every mask carry the weight multiset {1, 1, 2}, so a
    # constant image cancels to exactly zero instead of leaving a few ulps
    # of rounding residue that would defeat the degeneracy check.
    taps = []
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            w = mask[di + 1, dj + 1]
            if w != 0.0:
                taps.append((abs(w), w > 0, di, dj))
    pos = np.zeros_like(arr)
    neg = np.zeros_like(arr)
    for magnitude, positive, di, dj in sorted(taps, key=lambda t: t[0]):
        shifted = np.roll(np.roll(arr, -di, axis=0), -dj, axis=1)
        if positive:
            pos += magnitude * shifted
        else:
            neg += magnitude * shifted
    return pos - neg


def _threshold_mask(resp, keep_fraction):
    absresp = np.abs(resp)
    k = max(1, int(np.ceil(keep_fraction * absresp.size)))
    thr = np.sort(absresp, axis=None)[::-1][k - 1]
    return absresp >= thr


def select_edges(img, keep_fraction=0.10):
    """Keep the strongest Sobel responses in four orientations.

    Each orientation is thresholded so that at least ``keep_fraction`` of
    pixels survive (ties at the threshold included).  A flat image yields
    all-zero responses; the masks then cover everything and the result is
    flagged degenerate.
    """
    arr = check_image(img, allow_channels=(1,))
    if not 0.0 < keep_fraction <= 1.0:
        raise ValueError(f"keep_fraction must be in (0, 1], got {keep_fraction}")
    resps = [
        _sobel_response(arr, m) for m in (SOBEL_H, SOBEL_V, SOBEL_P45, SOBEL_M45)
    ]
    degenerate = all(np.max(np.abs(r)) == 0.0 for r in resps)
    masks = [_threshold_mask(r, keep_fraction) for r in resps]
    union = masks[0] | masks[1] | masks[2] | masks[3]
    return EdgeMask(
        horizontal=masks[0],
        vertical=masks[1],
        diag_p45=masks[2],
        diag_m45=masks[3],
        union=union,
        degenerate=degenerate,
    )


def read_png(path):
    """Load an 8-bit PNG as float64 in [0, 1]; grayscale (H, W), color (H, W, 3)."""
    with PILImage.open(path) as im:
        if im.mode == "L":
            arr = np.asarray(im, dtype=np.float64)
        else:
            arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    return arr / 255.0


def write_png(path, img):
    """Write a [0, 1] float image as 8-bit PNG (values clipped, then rounded)."""
    arr = check_image(img)
    q = np.round(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8)
    PILImage.fromarray(q).save(path, format="PNG")


def write_kernel_txt(path, ker):
    """Plain-text kernel matrix: one row per line, space-separated decimals.

    Values use repr precision so the round-trip through text is exact.
    """
    ker = check_kernel(ker, require_odd=False)
    lines = [" ".join(f"{v:.17g}" for v in row) for row in ker]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_kernel_txt(path):
    with open(path) as fh:
        rows = [
            [float(tok) for tok in line.split()]
            for line in fh
            if line.strip()
        ]
    if not rows or any(len(r) != len(rows[0]) for r in rows):
        raise ValueError(f"{path}: malformed kernel matrix")
    return np.asarray(rows, dtype=np.float64)
