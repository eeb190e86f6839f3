"""Input validation helpers shared by the public API.

Images are plain numpy arrays: (H, W) for grayscale or (H, W, 3) for RGB,
floating point, nominally in [0, 1].  Kernels are small odd-sized 2-D
nonnegative arrays.  These checkers normalize dtype/layout and enforce the
invariants every public operation relies on.
"""

import numpy as np

LUMA_WEIGHTS = (0.299, 0.587, 0.114)


def check_image(img, name="image", allow_channels=(1, 3)):
    """Validate/coerce an image array to float64 (H, W) or (H, W, 3).

    Raises ValueError on wrong rank, unsupported channel count, empty
    dimensions, or non-finite values.
    """
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[:, :, 0]
    if arr.ndim == 2:
        channels = 1
    elif arr.ndim == 3 and arr.shape[2] == 3:
        channels = 3
    else:
        raise ValueError(
            f"{name}: expected (H, W) or (H, W, 3) array, got shape {np.shape(img)}"
        )
    if channels not in allow_channels:
        raise ValueError(f"{name}: {channels}-channel input not supported here")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError(f"{name}: empty image {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name}: contains NaN or Inf")
    return arr


def check_kernel(ker, name="kernel", require_odd=True, require_normalized=False):
    """Validate/coerce a blur kernel to a float64 2-D array."""
    arr = np.asarray(ker, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"{name}: expected 2-D array, got shape {np.shape(ker)}")
    m, n = arr.shape
    if m < 1 or n < 1:
        raise ValueError(f"{name}: empty kernel {arr.shape}")
    if require_odd and (m % 2 == 0 or n % 2 == 0):
        raise ValueError(f"{name}: dimensions must be odd, got {m}x{n}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name}: contains NaN or Inf")
    if require_normalized:
        if np.any(arr < 0):
            raise ValueError(f"{name}: negative weights")
        s = arr.sum()
        if abs(s - 1.0) > 1e-6:
            raise ValueError(f"{name}: weights sum to {s}, expected 1")
    return arr


def check_same_shape(a, b, names=("a", "b")):
    if a.shape != b.shape:
        raise ValueError(f"{names[0]} shape {a.shape} != {names[1]} shape {b.shape}")


def to_luminance(img):
    """Collapse an RGB image to luminance with fixed 0.299/0.587/0.114 weights."""
    arr = check_image(img)
    if arr.ndim == 2:
        return arr
    w = np.asarray(LUMA_WEIGHTS, dtype=np.float64)
    return arr @ w


def n_channels(img):
    return 1 if img.ndim == 2 else img.shape[2]
