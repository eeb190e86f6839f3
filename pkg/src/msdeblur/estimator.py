"""A scikit-learn flavoured front end for the restoration loop.

``MultiScaleDeblurrer`` flattens the nested run configuration into plain
keyword hyperparameters so the estimator clones cleanly and composes with
sklearn tooling.  Fitting is self-supervised: ``fit(X)`` takes only the
blurred image and recovers both the sharp image and the blur kernel.
"""

from dataclasses import replace

import numpy as np
from sklearn.base import BaseEstimator

from .optimizer import RunConfig, preset, run
from .validation import check_image


class MultiScaleDeblurrer(BaseEstimator):
    """Blind deblurring of a single image by alternating optimization.

    Every hyperparameter defaults to ``None``, meaning "take the value
    from ``preset``" (or the library default when no preset is named);
    anything passed explicitly wins over the preset.  ``kernel_size`` is
    the one field with no usable default — set it to an odd int or an
    odd ``(rows, cols)`` pair before fitting.

    Fitted attributes: ``image_`` (restored image, same shape as the
    input), ``kernel_`` (estimated blur kernel, sums to one), ``trace_``
    (per-iteration loss records), ``scale_images_`` / ``scale_kernels_``
    (per-scale results, finest first), ``refine_fell_back_``,
    ``run_config_`` (the fully resolved configuration) and ``n_iter_``.

    There is no ``transform`` for unseen data: the model is optimized
    per image, so ``fit_transform`` is the whole story.
    """

    def __init__(
        self,
        kernel_size=None,
        preset=None,
        max_iters=None,
        lr=None,
        lr_halve_every=None,
        kernel_every=None,
        lambda_h=None,
        gamma=None,
        lambda_x=None,
        scales=None,
        base_width=None,
        width_cap=None,
        seed=0,
    ):
        self.kernel_size = kernel_size
        self.preset = preset
        self.max_iters = max_iters
        self.lr = lr
        self.lr_halve_every = lr_halve_every
        self.kernel_every = kernel_every
        self.lambda_h = lambda_h
        self.gamma = gamma
        self.lambda_x = lambda_x
        self.scales = scales
        self.base_width = base_width
        self.width_cap = width_cap
        self.seed = seed

    def _resolve(self):
        """Merge preset (or defaults) with the explicitly set fields."""
        cfg = preset(self.preset) if self.preset is not None else RunConfig()

        solver = {
            name: value
            for name, value in (("lambda_h", self.lambda_h), ("gamma", self.gamma))
            if value is not None
        }
        if solver:
            cfg = replace(cfg, solver=replace(cfg.solver, **solver))
        if self.lambda_x is not None:
            cfg = replace(cfg, loss=replace(cfg.loss, lambda_x=self.lambda_x))
        generator = {
            name: value
            for name, value in (
                ("scales", self.scales),
                ("base_width", self.base_width),
                ("width_cap", self.width_cap),
            )
            if value is not None
        }
        if generator:
            cfg = replace(cfg, generator=replace(cfg.generator, **generator))

        top = {
            name: value
            for name, value in (
                ("max_iters", self.max_iters),
                ("lr", self.lr),
                ("lr_halve_every", self.lr_halve_every),
                ("kernel_every", self.kernel_every),
                ("seed", self.seed),
            )
            if value is not None
        }
        if self.kernel_size is not None:
            size = self.kernel_size
            if np.ndim(size) == 0:
                size = (int(size), int(size))
            top["kernel_size"] = tuple(int(s) for s in size)
        if top:
            cfg = replace(cfg, **top)
        return cfg

    def fit(self, X, y=None):
        """Run the alternating loop on one blurred image.

        ``X`` is the blurred image itself, (H, W) or (H, W, 3) floats in
        [0, 1]; ``y`` is ignored (supervision comes from ``X`` alone).
        """
        X = check_image(np.asarray(X, dtype=np.float64), "X")
        cfg = self._resolve()
        if cfg.kernel_size is None:
            raise ValueError(
                "kernel_size must be set (an odd int or an odd (rows, cols) pair)"
            )
        result = run(X, cfg)
        self.run_config_ = cfg
        self.image_ = result.image
        self.kernel_ = result.kernel
        self.trace_ = result.trace
        self.scale_images_ = result.scale_images
        self.scale_kernels_ = result.scale_kernels
        self.refine_fell_back_ = result.refine_fell_back
        self.n_iter_ = len(result.trace.records)
        return self

    def fit_transform(self, X, y=None):
        """Fit on the blurred image and return the restored image."""
        return self.fit(X, y).image_
