"""Closed-form blur-kernel estimation in the gradient domain.

The kernel subproblem — least squares between gradients of the blurred
and latent images, with an L2 weight penalty and a quadratic pull of the
kernel's center of mass toward its geometric center — has an exact
solution.  The unconstrained part diagonalizes under the 2-D DFT, and the
centering penalty only adds a rank-2 correction, so the whole thing comes
down to a handful of FFTs plus a 2x2 solve (Woodbury identity).  A dense
solve of the same small system is kept as a fallback for the pathological
case where the 2x2 capacitance matrix is singular.

Sparse refinement (thresholding + renormalization) lives here too, along
with the cheap nonnegativity projection applied between iterations.
"""

from dataclasses import dataclass

import numpy as np

from .imgmath import (
    crop_kernel,
    delta_kernel,
    embed_kernel,
    grad,
    kernel_center,
    select_edges,
)
from .validation import check_image, check_kernel

_IMAG_RESIDUE_TOL = 1e-9


@dataclass(frozen=True)
class KernelSolveConfig:
    """Settings for the closed-form solve and the refinement step.

    lambda_h weights the L2 penalty on kernel entries, gamma the quadratic
    center-of-mass penalty, keep_fraction the share of pixels retained by
    edge selection, and refine_threshold the fraction of the max entry
    below which weights are zeroed during sparse refinement.
    """

    lambda_h: float = 10.0
    gamma: float = 10.0
    keep_fraction: float = 0.10
    refine_threshold: float = 0.05

    def __post_init__(self):
        if not self.lambda_h > 0:
            raise ValueError(f"lambda_h must be > 0, got {self.lambda_h}")
        if self.gamma < 0:
            raise ValueError(f"gamma must be >= 0, got {self.gamma}")
        if not 0.0 < self.keep_fraction <= 1.0:
            raise ValueError(
                f"keep_fraction must be in (0, 1], got {self.keep_fraction}"
            )
        if not 0.0 <= self.refine_threshold < 1.0:
            raise ValueError(
                f"refine_threshold must be in [0, 1), got {self.refine_threshold}"
            )


@dataclass
class SolveWorkspace:
    """Intermediate maps of one kernel solve, kept around for inspection.

    Psi and Gamma are the full image-size frequency-domain denominator and
    numerator; Z, F and Kmat are the spatial solutions cropped to kernel
    support; U and V are the rank-1 coordinate maps.  Together they define
    the small system (I + gamma*(f u^T + k v^T)) vec(h) = vec(Z).
    """

    Psi: np.ndarray
    Gamma: np.ndarray
    Z: np.ndarray
    F: np.ndarray
    Kmat: np.ndarray
    U: np.ndarray
    V: np.ndarray


@dataclass
class SolveReport:
    """What happened during a solve: which path ran and how well it did."""

    path: str  # "identity" (gamma == 0), "woodbury", or "dense"
    residual: float  # relative residual of the small linear system
    edge_degenerate: bool  # edge selection found no structure in x
    workspace: SolveWorkspace


def _real_part(arr, name):
    residue = float(np.max(np.abs(arr.imag)))
    if residue >= _IMAG_RESIDUE_TOL:
        raise FloatingPointError(
            f"{name} has imaginary residue {residue:.3e} after inverse FFT"
        )
    return np.ascontiguousarray(arr.real)


def _coordinate_maps(size):
    """Centered row/column offset maps U, V over the kernel support."""
    m, n = size
    r0, c0 = kernel_center(m, n)
    tm = np.arange(m, dtype=float) - r0
    tn = np.arange(n, dtype=float) - c0
    U = np.repeat(tm[:, None], n, axis=1)
    V = np.repeat(tn[None, :], m, axis=0)
    return U, V


def solve_kernel(y, x, size, cfg, *, use_edge_mask=True, method="auto",
                 full_output=False):
    """Solve the kernel subproblem in closed form.

    Both images must be single-channel (convert RGB with
    ``validation.to_luminance`` first) and share their shape; ``size`` is
    the odd (m, n) kernel support.  When ``use_edge_mask`` is set, the
    gradient maps of both images are restricted to the salient-edge
    region of ``x`` before the solve.  ``method`` picks the path for the
    rank-2 correction: "auto" uses the Woodbury identity and falls back
    to a dense solve on a singular capacitance matrix; "woodbury" and
    "dense" force one path (for cross-checking).

    Returns the raw (unrefined, possibly signed) kernel, or a
    ``(kernel, SolveReport)`` pair when ``full_output`` is true.
    """
    y = check_image(y, "y", allow_channels=(1,))
    x = check_image(x, "x", allow_channels=(1,))
    if y.shape != x.shape:
        raise ValueError(f"shape mismatch: y {y.shape} vs x {x.shape}")
    if method not in ("auto", "woodbury", "dense"):
        raise ValueError(f"unknown method {method!r}")
    m, n = size
    H, W = y.shape
    if m % 2 == 0 or n % 2 == 0 or m < 1 or n < 1:
        raise ValueError(f"kernel size must be odd and positive, got {size}")
    if m >= H or n >= W:
        raise ValueError(f"kernel size {size} must be smaller than image {y.shape}")

    dxr, dxc = grad(x)
    dyr, dyc = grad(y)

    edge_degenerate = False
    if use_edge_mask:
        edges = select_edges(x, keep_fraction=cfg.keep_fraction)
        edge_degenerate = edges.degenerate
        mask = edges.union.astype(float)
        dxr = dxr * mask
        dxc = dxc * mask
        dyr = dyr * mask
        dyc = dyc * mask

    FXr = np.fft.fft2(dxr)
    FXc = np.fft.fft2(dxc)
    FYr = np.fft.fft2(dyr)
    FYc = np.fft.fft2(dyc)

    Psi = cfg.lambda_h + np.abs(FXr) ** 2 + np.abs(FXc) ** 2
    Gamma = np.conj(FXr) * FYr + np.conj(FXc) * FYc

    Z = crop_kernel(_real_part(np.fft.ifft2(Gamma / Psi), "Z"), size)
    U, V = _coordinate_maps(size)
    F = crop_kernel(
        _real_part(np.fft.ifft2(np.fft.fft2(embed_kernel(U, (H, W))) / Psi), "F"),
        size,
    )
    Kmat = crop_kernel(
        _real_part(np.fft.ifft2(np.fft.fft2(embed_kernel(V, (H, W))) / Psi), "Kmat"),
        size,
    )
    workspace = SolveWorkspace(Psi=Psi, Gamma=Gamma, Z=Z, F=F, Kmat=Kmat, U=U, V=V)

    z = Z.ravel()
    u = U.ravel()
    v = V.ravel()
    f = F.ravel()
    k = Kmat.ravel()

    if cfg.gamma == 0.0:
        h = z.copy()
        path = "identity"
    else:
        P = cfg.gamma * np.stack([f, k], axis=1)
        Q = np.stack([u, v], axis=1)
        h = None
        path = method
        if method in ("auto", "woodbury"):
            capacitance = np.eye(2) + Q.T @ P
            if np.linalg.cond(capacitance) < 1e12:
                h = z - P @ np.linalg.solve(capacitance, Q.T @ z)
                path = "woodbury"
            elif method == "woodbury":
                raise np.linalg.LinAlgError(
                    "capacitance matrix is singular; rerun with method='dense'"
                )
        if h is None:
            A = np.eye(m * n) + np.outer(P[:, 0], u) + np.outer(P[:, 1], v)
            h = np.linalg.solve(A, z)
            path = "dense"

    # Residual of the small system with A applied implicitly.
    Ah = h + cfg.gamma * (f * (u @ h) + k * (v @ h))
    z_norm = float(np.linalg.norm(z))
    residual = float(np.linalg.norm(Ah - z)) / (z_norm if z_norm > 0 else 1.0)

    kernel = h.reshape(m, n)
    if full_output:
        return kernel, SolveReport(
            path=path,
            residual=residual,
            edge_degenerate=edge_degenerate,
            workspace=workspace,
        )
    return kernel


def center_of_mass(ker):
    """Intensity-weighted mean (row, col) of a kernel, 0-based subpixel."""
    ker = check_kernel(ker, require_odd=False)
    if float(np.sum(np.abs(ker))) == 0.0:
        raise ValueError("center of mass is undefined for an all-zero kernel")
    total = float(np.sum(ker))
    rows = np.arange(ker.shape[0], dtype=float)
    cols = np.arange(ker.shape[1], dtype=float)
    row = float(np.sum(rows[:, None] * ker)) / total
    col = float(np.sum(cols[None, :] * ker)) / total
    return row, col


def centering_penalty(ker):
    """Squared mass-weighted offset of a kernel from its geometric center.

    This is the quantity the gamma term of the solve penalizes:
    (sum U*h)^2 + (sum V*h)^2 with U, V the centered coordinate maps.
    """
    ker = np.asarray(ker, dtype=float)
    U, V = _coordinate_maps(ker.shape)
    a = float(np.sum(U * ker))
    b = float(np.sum(V * ker))
    return a * a + b * b


def project_kernel(ker):
    """Cheap between-iterations projection: clamp negatives, renormalize.

    All-nonpositive input degenerates to a centered delta so downstream
    convolutions stay well-defined.
    """
    ker = np.asarray(ker, dtype=float)
    out = np.where(ker > 0.0, ker, 0.0)
    total = float(out.sum())
    if total == 0.0:
        return delta_kernel(ker.shape)
    return out / total


def refine_kernel(ker, cfg, *, full_output=False):
    """Sparse refinement of a raw kernel.

    Clamps negatives to zero, zeroes entries below
    ``cfg.refine_threshold`` times the max entry, renormalizes to sum 1.
    If everything is wiped out the centered delta is returned instead;
    ``full_output`` adds a boolean flag marking that fallback (a sign the
    solve diverged).
    """
    ker = np.asarray(ker, dtype=float)
    out = np.where(ker > 0.0, ker, 0.0)
    peak = float(out.max()) if out.size else 0.0
    if peak > 0.0:
        out = np.where(out < cfg.refine_threshold * peak, 0.0, out)
    total = float(out.sum())
    if total == 0.0:
        fallback = delta_kernel(ker.shape)
        return (fallback, True) if full_output else fallback
    out = out / total
    return (out, False) if full_output else out
