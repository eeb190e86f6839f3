"""Multi-input multi-output generator network.

The image subproblem is parametrized by a small encoder-decoder that maps
fixed random inputs {z^s} — one per scale, 16 channels each — to latent
sharp images {x^s}.  Feature widths double per level (capped), every conv
is 3x3 with zero padding, activations are LeakyReLU(0.2), and outputs go
through a sigmoid so pixels stay in (0, 1).

Topology per forward pass:

* input converters lift each z^s to the feature width of its level, with
  extra conv layers at coarser scales so the fused features have seen
  comparable depth;
* the encoder descends with stride-2 feature-extraction blocks; at levels
  that have a random input, the features are fused with the converted
  input by an element-wise product followed by a residual add (levels
  without an input pass through unchanged, which is what the
  single-scale ablation exercises);
* the decoder climbs back with nearest-neighbor upsampling and
  concatenation of the encoder skip at each level;
* one output head per scale concatenates the decoder features with that
  scale's raw z and finishes with a sigmoid conv.

Everything is float64 and seeded: construction, initialization, and the
frozen random inputs are fully determined by (config, image shape).
"""

import struct
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

LEAKY_SLOPE = 0.2

CHECKPOINT_MAGIC = b"MSDG"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class GeneratorConfig:
    """Architecture and seeding knobs for the generator.

    ``scales`` is the number of supervised input/output resolutions
    (1 selects the single-scale ablation); ``depth`` the number of
    internal encoder levels, defaulting to max(scales, 4).  Widths start
    at ``base_width`` and double per level up to ``width_cap``.
    """

    scales: int = 4
    input_channels: int = 16
    base_width: int = 32
    width_cap: int = 128
    fe_depth: int = 2
    converter_depth: int = 1
    lff_depth: int = 2
    cfn_depth: int = 2
    depth: int = None
    seed: int = 0

    def __post_init__(self):
        if not 1 <= self.scales <= 4:
            raise ValueError(f"scales must be in 1..4, got {self.scales}")
        if self.input_channels < 1:
            raise ValueError("input_channels must be >= 1")
        for field in ("base_width", "width_cap", "fe_depth", "converter_depth",
                      "lff_depth", "cfn_depth"):
            if getattr(self, field) < 1:
                raise ValueError(f"{field} must be >= 1")
        if self.depth is not None and self.depth < self.scales:
            raise ValueError(
                f"depth {self.depth} cannot be smaller than scales {self.scales}"
            )

    @property
    def resolved_depth(self):
        return self.depth if self.depth is not None else max(self.scales, 4)

    def width(self, level):
        return min(self.base_width * 2**level, self.width_cap)


def _level_dims(height, width, depth):
    """Ceil-halving dimension ladder, matching stride-2 3x3 convolutions."""
    dims = [(height, width)]
    for _ in range(depth - 1):
        h, w = dims[-1]
        dims.append(((h + 1) // 2, (w + 1) // 2))
    return dims


def _conv(in_ch, out_ch, stride=1):
    return nn.Conv2d(in_ch, out_ch, kernel_size=3, stride=stride, padding=1)


def _conv_stack(in_ch, out_ch, n_layers, first_stride=1):
    layers = [_conv(in_ch, out_ch, stride=first_stride), nn.LeakyReLU(LEAKY_SLOPE)]
    for _ in range(n_layers - 1):
        layers += [_conv(out_ch, out_ch), nn.LeakyReLU(LEAKY_SLOPE)]
    return nn.Sequential(*layers)


class MultiScaleGenerator(nn.Module):
    """The network; see the module docstring for the topology."""

    def __init__(self, cfg, image_shape):
        super().__init__()
        if len(image_shape) == 2:
            height, width = image_shape
            out_channels = 1
        else:
            height, width, out_channels = image_shape
        depth = cfg.resolved_depth
        coarse_h = (height + 2 ** (cfg.scales - 1) - 1) // 2 ** (cfg.scales - 1)
        coarse_w = (width + 2 ** (cfg.scales - 1) - 1) // 2 ** (cfg.scales - 1)
        if coarse_h < 8 or coarse_w < 8:
            raise ValueError(
                f"image {height}x{width} leaves the coarsest of {cfg.scales} "
                f"scales below 8 pixels ({coarse_h}x{coarse_w})"
            )
        self.cfg = cfg
        self.depth = depth
        self.scales = cfg.scales
        self.out_channels = out_channels
        self.level_dims = _level_dims(height, width, depth)

        self.converters = nn.ModuleList(
            _conv_stack(cfg.input_channels, cfg.width(s), cfg.converter_depth + s)
            for s in range(cfg.scales)
        )
        self.encoders = nn.ModuleList(
            _conv_stack(cfg.width(l - 1), cfg.width(l), cfg.fe_depth, first_stride=2)
            for l in range(1, depth)
        )
        self.fusion_convs = nn.ModuleList(
            _conv(cfg.width(s), cfg.width(s)) for s in range(1, cfg.scales)
        )
        self.up_convs = nn.ModuleList(
            nn.Sequential(
                _conv(cfg.width(l + 1), cfg.width(l)), nn.LeakyReLU(LEAKY_SLOPE)
            )
            for l in range(depth - 1)
        )
        self.mergers = nn.ModuleList(
            _conv_stack(2 * cfg.width(l), cfg.width(l), cfg.lff_depth)
            for l in range(depth - 1)
        )
        heads = []
        for s in range(cfg.scales):
            w = cfg.width(s)
            layers = list(
                _conv_stack(w + cfg.input_channels, w, cfg.cfn_depth - 1)
            ) if cfg.cfn_depth > 1 else []
            head_in = w if cfg.cfn_depth > 1 else w + cfg.input_channels
            layers += [_conv(head_in, out_channels), nn.Sigmoid()]
            heads.append(nn.Sequential(*layers))
        self.heads = nn.ModuleList(heads)
        self.double()

    def forward(self, zs):
        if len(zs) != self.scales:
            raise ValueError(f"expected {self.scales} inputs, got {len(zs)}")
        feats = self.converters[0](zs[0])
        skips = [feats]
        for level in range(1, self.depth):
            feats = self.encoders[level - 1](feats)
            if level < self.scales:
                lifted = self.converters[level](zs[level])
                fused = self.fusion_convs[level - 1](feats * lifted)
                feats = feats + F.leaky_relu(fused, LEAKY_SLOPE)
            skips.append(feats)
        decoded = feats
        per_level = [None] * self.depth
        per_level[self.depth - 1] = decoded
        for level in range(self.depth - 2, -1, -1):
            h, w = self.level_dims[level]
            up = F.interpolate(decoded, scale_factor=2, mode="nearest")[..., :h, :w]
            up = self.up_convs[level](up)
            decoded = self.mergers[level](torch.cat([skips[level], up], dim=1))
            per_level[level] = decoded
        return [
            self.heads[s](torch.cat([per_level[s], zs[s]], dim=1))
            for s in range(self.scales)
        ]


def random_inputs(cfg, image_shape, generator):
    """Sample the frozen z pyramid: coarsest uniform(0,1), finer levels its
    repeated nearest-neighbor 2x upsample (cropped to the ceil-half ladder)."""
    height, width = image_shape[:2]
    dims = _level_dims(height, width, cfg.scales)
    hc, wc = dims[-1]
    z = torch.rand(
        (1, cfg.input_channels, hc, wc), generator=generator, dtype=torch.float64
    )
    zs = [z]
    for s in range(cfg.scales - 2, -1, -1):
        h, w = dims[s]
        up = F.interpolate(zs[0], scale_factor=2, mode="nearest")[..., :h, :w]
        zs.insert(0, up)
    return zs


def init_generator(cfg, image_shape):
    """Build the network and its frozen inputs from the config seed.

    Returns ``(model, zs)``.  Conv weights get He initialization matched
    to the LeakyReLU slope (std = sqrt(2 / (1 + slope^2)) / sqrt(fan_in)),
    biases start at zero, and the z pyramid is sampled first — all from
    one seeded torch.Generator, so the pair is a pure function of
    (config, image shape).
    """
    generator = torch.Generator().manual_seed(cfg.seed)
    model = MultiScaleGenerator(cfg, image_shape)
    zs = random_inputs(cfg, image_shape, generator)
    gain = (2.0 / (1.0 + LEAKY_SLOPE**2)) ** 0.5
    with torch.no_grad():
        for name, param in model.named_parameters():
            if name.endswith("bias"):
                param.zero_()
            else:
                fan_in = param.shape[1] * param.shape[2] * param.shape[3]
                param.normal_(0.0, gain / fan_in**0.5, generator=generator)
    return model, zs


def _to_numpy_image(tensor):
    arr = tensor.detach().cpu().numpy()[0]
    if arr.shape[0] == 1:
        return arr[0]
    return np.moveaxis(arr, 0, -1)


def forward_images(model, zs):
    """Run the network without building a graph; numpy images per scale."""
    with torch.no_grad():
        outputs = model(zs)
    return [_to_numpy_image(t) for t in outputs]


def _to_torch_upstream(upstream, out_channels):
    tensors = []
    for arr in upstream:
        arr = np.asarray(arr, dtype=np.float64)
        if arr.ndim == 2:
            arr = arr[None, None]
        else:
            arr = np.moveaxis(arr, -1, 0)[None]
        tensors.append(torch.from_numpy(np.ascontiguousarray(arr)))
    return tensors


def param_gradients(model, zs, upstream):
    """Reverse-mode gradients of the loss with respect to every parameter.

    ``upstream`` holds dL/dx^s per scale as numpy arrays shaped like the
    forward images.  Returns an ordered dict name -> float64 tensor.
    """
    outputs = model(zs)
    grad_outputs = _to_torch_upstream(upstream, model.out_channels)
    names, params = zip(*model.named_parameters())
    grads = torch.autograd.grad(
        outputs, params, grad_outputs=grad_outputs, allow_unused=False
    )
    return dict(zip(names, grads))


def save_checkpoint(model, path):
    """Write parameters as a name -> shape -> little-endian f32 container."""
    entries = list(model.named_parameters())
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(entries)))
        for name, param in entries:
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            shape = param.shape
            fh.write(struct.pack("<B", len(shape)))
            fh.write(struct.pack(f"<{len(shape)}I", *shape))
            data = param.detach().cpu().numpy().astype("<f4")
            fh.write(data.tobytes())


def load_checkpoint(model, path):
    """Load a checkpoint written by save_checkpoint into ``model``."""
    with open(path, "rb") as fh:
        if fh.read(4) != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a parameter checkpoint")
        version, count = struct.unpack("<II", fh.read(8))
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        loaded = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<H", fh.read(2))
            name = fh.read(name_len).decode("utf-8")
            (ndim,) = struct.unpack("<B", fh.read(1))
            shape = struct.unpack(f"<{ndim}I", fh.read(4 * ndim))
            n_items = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(fh.read(4 * n_items), dtype="<f4")
            loaded[name] = data.reshape(shape)
    params = dict(model.named_parameters())
    if set(loaded) != set(params):
        raise ValueError(f"{path}: parameter names do not match this model")
    with torch.no_grad():
        for name, values in loaded.items():
            if tuple(params[name].shape) != values.shape:
                raise ValueError(
                    f"{path}: shape mismatch for {name}: "
                    f"{values.shape} vs {tuple(params[name].shape)}"
                )
            params[name].copy_(torch.from_numpy(values.astype(np.float64)))
    return model
