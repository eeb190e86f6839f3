"""Self-supervised multi-scale loss and its gradient with respect to images.

The loss compares each generated image against the blurred observation at
the same scale through the current kernel estimate — circular convolution,
squared Frobenius norm over all channels — and adds Charbonnier-smoothed
total variation so plain gradient descent can handle the otherwise
non-smooth regularizer.  Kernels are constants here: gradients flow to
the images only (the generator turns those into parameter gradients by
reverse mode).

Everything in this module is plain numpy; the analytic gradient exists
independently of any autodiff framework so the two routes can be checked
against each other.
"""

from dataclasses import dataclass

import numpy as np

from .imgmath import conv_circular, corr_circular, grad, grad_adjoint
from .validation import check_image, check_kernel


@dataclass(frozen=True)
class LossConfig:
    """Loss weights: TV strength, Charbonnier smoothing, per-scale weights.

    ``scale_weights`` of None means uniform weight 1 per scale.
    ``isotropic`` selects root-of-summed-squares TV; False switches to the
    anisotropic per-direction variant.
    """

    lambda_x: float = 0.0
    charbonnier_eps: float = 1e-3
    scale_weights: tuple = None
    isotropic: bool = True

    def __post_init__(self):
        if self.lambda_x < 0:
            raise ValueError(f"lambda_x must be >= 0, got {self.lambda_x}")
        if not self.charbonnier_eps > 0:
            raise ValueError(
                f"charbonnier_eps must be > 0, got {self.charbonnier_eps}"
            )
        if self.scale_weights is not None:
            weights = tuple(float(w) for w in self.scale_weights)
            if any(w < 0 for w in weights):
                raise ValueError(f"scale_weights must be >= 0, got {weights}")
            object.__setattr__(self, "scale_weights", weights)

    def weight(self, scale):
        if self.scale_weights is None:
            return 1.0
        return self.scale_weights[scale]


@dataclass(frozen=True)
class LossBreakdown:
    """Loss value split into its reported parts.

    ``total == sum(fidelity) + tv`` holds exactly: the per-scale fidelity
    entries carry their scale weight and ``tv`` carries lambda_x.
    """

    total: float
    fidelity: tuple
    tv: float


def _check_scales(xs, hs, ys, cfg):
    if not len(xs) == len(hs) == len(ys):
        raise ValueError(
            f"scale-count mismatch: {len(xs)} images, {len(hs)} kernels, "
            f"{len(ys)} observations"
        )
    if cfg.scale_weights is not None and len(cfg.scale_weights) != len(xs):
        raise ValueError(
            f"{len(cfg.scale_weights)} scale_weights for {len(xs)} scales"
        )
    checked = []
    for s, (x, h, y) in enumerate(zip(xs, hs, ys)):
        x = check_image(x, f"x[{s}]")
        y = check_image(y, f"y[{s}]")
        h = check_kernel(h, f"h[{s}]", require_odd=False)
        if x.shape != y.shape:
            raise ValueError(
                f"scale {s}: image shape {x.shape} != observation {y.shape}"
            )
        checked.append((x, h, y))
    return checked


def _charbonnier_tv(x, eps, isotropic):
    dr, dc = grad(x)
    if isotropic:
        return float(np.sum(np.sqrt(dr**2 + dc**2 + eps**2)))
    return float(np.sum(np.sqrt(dr**2 + eps**2) + np.sqrt(dc**2 + eps**2)))


def loss_components(xs, hs, ys, cfg):
    """Evaluate the loss, returning the per-scale/TV breakdown."""
    triples = _check_scales(xs, hs, ys, cfg)
    fidelity = []
    tv = 0.0
    for s, (x, h, y) in enumerate(triples):
        w = cfg.weight(s)
        residual = conv_circular(x, h) - y
        fidelity.append(w * float(np.sum(residual**2)))
        if cfg.lambda_x > 0:
            tv += w * _charbonnier_tv(x, cfg.charbonnier_eps, cfg.isotropic)
    tv *= cfg.lambda_x
    return LossBreakdown(total=sum(fidelity) + tv, fidelity=tuple(fidelity), tv=tv)


def loss(xs, hs, ys, cfg):
    """Scalar multi-scale fidelity + smoothed-TV loss."""
    return loss_components(xs, hs, ys, cfg).total


def loss_gradient_wrt_images(xs, hs, ys, cfg):
    """Analytic dL/dx^s per scale, shapes matching the inputs.

    Fidelity contributes 2 * corr(h, h (*) x - y); the TV term contributes
    the gradient-operator adjoint applied to the Charbonnier-normalized
    image gradients.
    """
    triples = _check_scales(xs, hs, ys, cfg)
    grads = []
    for s, (x, h, y) in enumerate(triples):
        w = cfg.weight(s)
        residual = conv_circular(x, h) - y
        g = 2.0 * corr_circular(residual, h)
        if cfg.lambda_x > 0:
            dr, dc = grad(x)
            eps2 = cfg.charbonnier_eps**2
            if cfg.isotropic:
                rho = np.sqrt(dr**2 + dc**2 + eps2)
                g = g + cfg.lambda_x * grad_adjoint(dr / rho, dc / rho)
            else:
                g = g + cfg.lambda_x * grad_adjoint(
                    dr / np.sqrt(dr**2 + eps2), dc / np.sqrt(dc**2 + eps2)
                )
        grads.append(w * g)
    return grads
