"""Synthetic blur generation: parametric PSFs and the blur+noise pipeline.

Three kernel families cover the usual test cases: straight motion
(length/angle), isotropic Gaussian, and a seeded random-walk trajectory.
All are rasterized with bilinear splatting, are nonnegative, and sum to
one.  ``synthesize`` applies circular convolution and additive Gaussian
noise on the [0, 1] scale, clipping the result back into range.
"""

import numpy as np

from .imgmath import conv_circular, read_kernel_txt
from .validation import check_image, check_kernel


def _splat(points, weights):
    """Bilinearly accumulate weighted points (row, col) into an odd grid.

    Points are given relative to the kernel center; the grid is sized to
    cover them all (plus bilinear spill).
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    # Snap near-integer coordinates so tight supports stay tight and the
    # bilinear spill of an exactly-integer point never leaves the grid.
    snapped = np.round(pts)
    pts = np.where(np.abs(pts - snapped) < 1e-9, snapped, pts)
    radius = float(np.max(np.abs(pts))) if pts.size else 0.0
    half = int(np.ceil(radius))
    side = 2 * half + 1
    ker = np.zeros((side, side))
    for (dr, dc), w in zip(pts, weights):
        r = dr + half
        c = dc + half
        r0, c0 = int(np.floor(r)), int(np.floor(c))
        fr, fc = r - r0, c - c0
        for ri, wr in ((r0, 1 - fr), (r0 + 1, fr)):
            for ci, wc in ((c0, 1 - fc), (c0 + 1, fc)):
                if wr * wc > 0.0:
                    ker[ri, ci] += w * wr * wc
    return ker / ker.sum()


def motion_kernel(length, angle_deg):
    """Straight-line motion PSF of the given length (pixels) and angle.

    Angle 0 points along image columns; positive angles rotate
    counter-clockwise in conventional (x right, y up) terms.  Length 1
    degenerates to the identity kernel.
    """
    if length < 1:
        raise ValueError(f"length must be >= 1, got {length}")
    if length == 1:
        return np.ones((1, 1))
    theta = np.deg2rad(angle_deg)
    half_span = (length - 1) / 2.0
    n_samples = max(2, int(np.ceil(length * 8)))
    ts = np.linspace(-half_span, half_span, n_samples)
    points = [(-t * np.sin(theta), t * np.cos(theta)) for t in ts]
    return _splat(points, np.full(n_samples, 1.0 / n_samples))


def gaussian_kernel(sigma, size):
    """Isotropic Gaussian PSF on an odd size x size grid, sum 1."""
    if sigma <= 0:
        raise ValueError(f"sigma must be > 0, got {sigma}")
    size = int(size)
    if size < 1 or size % 2 == 0:
        raise ValueError(f"size must be odd and positive, got {size}")
    half = size // 2
    coords = np.arange(size, dtype=float) - half
    g = np.exp(-(coords**2) / (2.0 * sigma**2))
    ker = np.outer(g, g)
    return ker / ker.sum()


def walk_kernel(steps, seed):
    """Random-walk trajectory PSF: unit steps in uniformly random directions."""
    if steps < 0:
        raise ValueError(f"steps must be >= 0, got {steps}")
    rng = np.random.default_rng(seed)
    angles = rng.uniform(0.0, 2.0 * np.pi, size=steps)
    deltas = np.stack([np.sin(angles), np.cos(angles)], axis=1)
    points = np.vstack([[0.0, 0.0], np.cumsum(deltas, axis=0)])
    points -= points.mean(axis=0)
    return _splat(points, np.full(len(points), 1.0 / len(points)))


def parse_kernel_spec(spec):
    """Build a kernel from its textual description.

    Accepted forms: ``file:<path>``, ``motion:<length>,<angle>``,
    ``gauss:<sigma>,<size>``, ``walk:<steps>,<seed>``.
    """
    if ":" not in spec:
        raise ValueError(f"malformed kernel spec {spec!r} (missing ':')")
    kind, _, arg = spec.partition(":")
    try:
        if kind == "file":
            return read_kernel_txt(arg)
        if kind == "motion":
            length, angle = arg.split(",")
            return motion_kernel(float(length), float(angle))
        if kind == "gauss":
            sigma, size = arg.split(",")
            return gaussian_kernel(float(sigma), int(size))
        if kind == "walk":
            steps, seed = arg.split(",")
            return walk_kernel(int(steps), int(seed))
    except ValueError:
        raise
    except Exception as exc:
        raise ValueError(f"malformed kernel spec {spec!r}: {exc}") from exc
    raise ValueError(f"unknown kernel family {kind!r} in {spec!r}")


def synthesize(sharp, kernel, noise_sigma=0.01, seed=0):
    """Blur a sharp image and add Gaussian noise, clipped to [0, 1]."""
    sharp = check_image(sharp, "sharp")
    kernel = check_kernel(kernel, require_odd=False, require_normalized=True)
    if noise_sigma < 0:
        raise ValueError(f"noise_sigma must be >= 0, got {noise_sigma}")
    blurred = conv_circular(sharp, kernel)
    if noise_sigma > 0:
        rng = np.random.default_rng(seed)
        blurred = blurred + rng.normal(0.0, noise_sigma, size=blurred.shape)
    return np.clip(blurred, 0.0, 1.0)
