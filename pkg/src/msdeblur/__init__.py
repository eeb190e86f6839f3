"""Self-supervised blind image deblurring.

A multi-scale generator network is trained against a single blurred
image while the blur kernel is re-solved in closed form (FFT domain)
between gradient steps — no sharp ground truth is ever seen.  The
high-level entry points are :class:`MultiScaleDeblurrer` (sklearn-style)
and :func:`run` (functional); the ``msdeblur`` CLI wraps both ends of an
experiment (data synthesis, deblurring, evaluation).
"""

from .estimator import MultiScaleDeblurrer
from .generator import GeneratorConfig, MultiScaleGenerator, init_generator
from .kernel_solver import KernelSolveConfig, project_kernel, refine_kernel, solve_kernel
from .metrics import MetricReport, kernel_ncc, metric_report, psnr, ssim
from .objective import LossConfig, loss, loss_components
from .optimizer import DivergenceError, RunConfig, RunResult, RunTrace, preset, run
from .synth import (
    gaussian_kernel,
    motion_kernel,
    parse_kernel_spec,
    synthesize,
    walk_kernel,
)

__version__ = "0.1.0"

__all__ = [
    "DivergenceError",
    "GeneratorConfig",
    "KernelSolveConfig",
    "LossConfig",
    "MetricReport",
    "MultiScaleDeblurrer",
    "MultiScaleGenerator",
    "RunConfig",
    "RunResult",
    "RunTrace",
    "gaussian_kernel",
    "init_generator",
    "kernel_ncc",
    "loss",
    "loss_components",
    "metric_report",
    "motion_kernel",
    "parse_kernel_spec",
    "preset",
    "project_kernel",
    "psnr",
    "refine_kernel",
    "run",
    "solve_kernel",
    "ssim",
    "synthesize",
    "walk_kernel",
]
