"""The alternating optimization loop and its bookkeeping.

Each iteration solves the blur kernel per scale in closed form from the
current generated images (luminance channel), then takes one Adam step on
the generator parameters against the multi-scale loss with those kernels
held fixed, then regenerates the images.  The learning rate follows a
step schedule (halving every fixed number of iterations), and every
iteration appends one record to the run trace.

Adam is implemented here directly — first/second moment accumulators with
bias correction — so the update rule is inspectable and testable on its
own.
"""

import time
from dataclasses import dataclass, field, replace

import numpy as np
import torch

from .generator import GeneratorConfig, forward_images, init_generator, save_checkpoint
from .imgmath import build_pyramid, kernel_size_ladder
from .kernel_solver import (
    KernelSolveConfig,
    project_kernel,
    refine_kernel,
    solve_kernel,
)
from .objective import LossConfig, loss_components, loss_gradient_wrt_images
from .validation import check_image, to_luminance

PRESET_NAMES = ("lai", "kohler", "desk")


@dataclass(frozen=True)
class RunConfig:
    """Everything one deblurring run depends on.

    ``kernel_size`` (odd m, n at the finest scale) has no sensible
    default and must be set before calling :func:`run`.  ``timing``
    controls the ms column of the trace; disabling it makes traces
    byte-identical across repeat runs.
    """

    max_iters: int = 600
    lr: float = 0.005
    lr_halve_every: int = 0
    kernel_size: tuple = None
    solver: KernelSolveConfig = field(default_factory=KernelSolveConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    seed: int = 0
    preset_name: str = "custom"
    kernel_every: int = 1
    checkpoint_every: int = 0
    min_side: int = 8
    timing: bool = True

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError(f"max_iters must be >= 1, got {self.max_iters}")
        if not self.lr > 0:
            raise ValueError(f"lr must be > 0, got {self.lr}")
        if self.lr_halve_every < 0 or self.kernel_every < 1:
            raise ValueError("bad schedule fields")

    # Convenience pass-throughs for the headline constants.
    @property
    def lambda_h(self):
        return self.solver.lambda_h

    @property
    def gamma(self):
        return self.solver.gamma

    @property
    def lambda_x(self):
        return self.loss.lambda_x

    @property
    def scales(self):
        return self.generator.scales

    def lr_at(self, k):
        """Step-schedule learning rate: lr / 2^floor(k / halve_every)."""
        if self.lr_halve_every == 0:
            return self.lr
        return self.lr / 2 ** (k // self.lr_halve_every)


def preset(name):
    """Named constant sets: two from the evaluation protocols, one small.

    "lai": lambda_h=10, gamma=10, lambda_x=0, lr=0.001 halved every 500,
    K=2000.  "kohler": lambda_h=120, gamma=10, lambda_x=1, lr=0.01
    constant, K=2000.  "desk": a small-image configuration sized for
    64x64 tests on CPU.
    """
    if name == "lai":
        return RunConfig(
            max_iters=2000,
            lr=0.001,
            lr_halve_every=500,
            solver=KernelSolveConfig(lambda_h=10.0, gamma=10.0),
            loss=LossConfig(lambda_x=0.0),
            generator=GeneratorConfig(),
            preset_name="lai",
        )
    if name == "kohler":
        return RunConfig(
            max_iters=2000,
            lr=0.01,
            lr_halve_every=0,
            solver=KernelSolveConfig(lambda_h=120.0, gamma=10.0),
            loss=LossConfig(lambda_x=1.0),
            generator=GeneratorConfig(),
            preset_name="kohler",
        )
    if name == "desk":
        return RunConfig(
            max_iters=600,
            lr=0.0015,
            lr_halve_every=0,
            solver=KernelSolveConfig(lambda_h=30.0, gamma=10.0, keep_fraction=0.35),
            loss=LossConfig(lambda_x=0.03),
            generator=GeneratorConfig(base_width=16, width_cap=64),
            preset_name="desk",
        )
    raise ValueError(f"unknown preset {name!r} (expected one of {PRESET_NAMES})")


class AdamState:
    """First/second moment accumulators for a named parameter set."""

    def __init__(self, params, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step = 0
        self.m = {name: torch.zeros_like(p) for name, p in params.items()}
        self.v = {name: torch.zeros_like(p) for name, p in params.items()}


def adam_step(params, grads, state, lr):
    """One bias-corrected Adam update, in place on ``params``.

    ``params`` and ``grads`` are name -> tensor mappings with matching
    shapes; ``state`` accumulates moments across calls.
    """
    state.step += 1
    bc1 = 1.0 - state.beta1**state.step
    bc2 = 1.0 - state.beta2**state.step
    with torch.no_grad():
        for name, p in params.items():
            g = grads[name]
            m = state.m[name]
            v = state.v[name]
            m.mul_(state.beta1).add_(g, alpha=1.0 - state.beta1)
            v.mul_(state.beta2).addcmul_(g, g, value=1.0 - state.beta2)
            p.addcdiv_(m / bc1, (v / bc2).sqrt().add_(state.eps), value=-lr)


@dataclass(frozen=True)
class TraceRecord:
    iter: int
    loss: float
    fidelity: tuple  # per-scale, weight included
    tv: float
    lr: float
    ms: int


@dataclass
class RunTrace:
    """Per-iteration records plus counters worth reporting."""

    records: list = field(default_factory=list)
    delta_fallbacks: int = 0

    def csv_header(self, n_scales=None):
        if n_scales is None:
            n_scales = len(self.records[0].fidelity) if self.records else 1
        fid = ",".join(f"fid_s{s}" for s in range(n_scales))
        return f"iter,loss,{fid},tv,lr,ms"

    def to_csv(self):
        lines = [self.csv_header()]
        for rec in self.records:
            fid = ",".join(repr(v) for v in rec.fidelity)
            lines.append(
                f"{rec.iter},{rec.loss!r},{fid},{rec.tv!r},{rec.lr!r},{rec.ms}"
            )
        return "\n".join(lines) + "\n"

    def write_csv(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_csv())


class DivergenceError(RuntimeError):
    """Loss went non-finite; carries the trace collected so far."""

    def __init__(self, iteration, trace):
        super().__init__(f"non-finite loss at iteration {iteration}")
        self.iteration = iteration
        self.trace = trace


@dataclass
class RunResult:
    image: np.ndarray  # finest-scale output x
    kernel: np.ndarray  # sparsely refined finest-scale kernel
    trace: RunTrace
    scale_images: list  # all generated scales, finest first
    scale_kernels: list  # per-scale projected kernels from the last solve
    refine_fell_back: bool
    model: object
    inputs: list


def run(y, cfg, checkpoint_dir=None):
    """Execute the full alternating loop on one blurred image."""
    y = check_image(y, "y")
    if cfg.kernel_size is None:
        raise ValueError("cfg.kernel_size must be set (odd kernel support)")

    pyramid = build_pyramid(
        y, cfg.scales, kernel_size=tuple(cfg.kernel_size), min_side=cfg.min_side
    )
    ys = pyramid.images
    ksizes = pyramid.kernel_sizes

    gen_cfg = replace(cfg.generator, seed=cfg.seed)
    model, zs = init_generator(gen_cfg, y.shape)
    names, params_list = zip(*model.named_parameters())
    params = dict(zip(names, params_list))
    adam = AdamState(params)

    trace = RunTrace()
    xs = forward_images(model, zs)
    ys_lum = [to_luminance(ysc) for ysc in ys]
    raw_kernels = None
    kernels = None

    for k in range(cfg.max_iters):
        started = time.perf_counter() if cfg.timing else None

        if not all(np.all(np.isfinite(x)) for x in xs):
            raise DivergenceError(k, trace)

        if k % cfg.kernel_every == 0 or kernels is None:
            raw_kernels = [
                solve_kernel(ys_lum[s], to_luminance(xs[s]), ksizes[s], cfg.solver)
                for s in range(cfg.scales)
            ]
            kernels = []
            for raw in raw_kernels:
                projected, fell_back = _project_counted(raw)
                trace.delta_fallbacks += fell_back
                kernels.append(projected)

        outputs = model(zs)
        xs = [_detach_image(t) for t in outputs]
        parts = loss_components(xs, kernels, ys, cfg.loss)
        if not np.isfinite(parts.total):
            raise DivergenceError(k, trace)
        upstream = loss_gradient_wrt_images(xs, kernels, ys, cfg.loss)
        grads = torch.autograd.grad(
            outputs,
            params_list,
            grad_outputs=[_to_tensor_like(u, t) for u, t in zip(upstream, outputs)],
        )
        lr_k = cfg.lr_at(k)
        adam_step(params, dict(zip(names, grads)), adam, lr_k)

        xs = forward_images(model, zs)

        elapsed = (
            int(round((time.perf_counter() - started) * 1000.0)) if cfg.timing else 0
        )
        trace.records.append(
            TraceRecord(
                iter=k,
                loss=parts.total,
                fidelity=parts.fidelity,
                tv=parts.tv,
                lr=lr_k,
                ms=elapsed,
            )
        )
        if (
            checkpoint_dir is not None
            and cfg.checkpoint_every > 0
            and (k + 1) % cfg.checkpoint_every == 0
        ):
            save_checkpoint(model, f"{checkpoint_dir}/params_{k + 1:06d}.ckpt")

    refined, fell_back = refine_kernel(raw_kernels[0], cfg.solver, full_output=True)
    return RunResult(
        image=xs[0],
        kernel=refined,
        trace=trace,
        scale_images=xs,
        scale_kernels=kernels,
        refine_fell_back=fell_back,
        model=model,
        inputs=zs,
    )


def _project_counted(raw):
    projected = project_kernel(raw)
    fell_back = bool(np.all(raw <= 0.0))
    return projected, fell_back


def _detach_image(tensor):
    arr = tensor.detach().cpu().numpy()[0]
    if arr.shape[0] == 1:
        return arr[0]
    return np.moveaxis(arr, 0, -1)


def _to_tensor_like(upstream, output):
    arr = np.asarray(upstream, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[None, None]
    else:
        arr = np.moveaxis(arr, -1, 0)[None]
    return torch.from_numpy(np.ascontiguousarray(arr)).to(output.dtype)


def default_kernel_sizes(kernel_size, scales):
    """Kernel support per scale for a given finest-scale support."""
    return kernel_size_ladder(kernel_size, scales)
