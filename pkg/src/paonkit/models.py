"""Reference architectures: residual super-resolver and small classifier.

The super-resolver is head conv -> R residual blocks -> trunk-end conv
-> global skip add -> pixel-shuffle upsampler -> output conv. Blocks
hold two layers with an optional activation between and a per-channel
residual scale before the skip add. Head, trunk end, upsampler, and
output stay plain [1/0] convolutions in every family; only the block
interiors switch between classic conv+activation and PaLa layers.

The classifier is a pre-pool ResNet: stem, three stages with stride-2
transitions and 16/32/64 channels, global average pool, and a linear
or Pade-linear head. The Paon family swaps every main conv for a PaLa,
keeps batch norm, and drops every ReLU.

Both builders draw all parameters from one seeded generator, so a
(config, seed) pair pins every weight. ``trace`` walks the graph
statically for the op counter without executing anything.
"""

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import data_io, ops
from .autograd import Variable
from .layers import PaLaConv, PaLaDense, PaonDegree
from .nn import (BatchNorm2d, Conv2d, Dense, GELU, GlobalAvgPool, Identity,
                 Module, PixelShuffle, ReLU, ResidualScale)
from .shifter import ShifterConfig
from .tensor_ops import ConvSpec

FAMILIES = ("classic", "pala")
ACTIVATIONS = {"gelu": GELU, "relu": ReLU, "none": Identity}


@dataclass(frozen=True)
class SrNetConfig:
    """Residual super-resolution network configuration."""

    r_blocks: int = 2
    channels: int = 16
    width: int = 1
    family: str = "pala"
    degree: tuple = (1, 1)
    smoothed: bool = True
    activation: str = "none"
    scale: int = 2
    shared_pixelshuffle: bool = False
    residual_scale_init: float = 0.1
    in_channels: int = 3
    shifter_kind: str = "none"
    shifter_b: int = 0
    shifter_ks: int = 1

    def __post_init__(self):
        if self.scale not in (2, 4):
            raise ValueError(f"scale must be 2 or 4, got {self.scale}")
        if self.family not in FAMILIES:
            raise ValueError(f"family must be one of {FAMILIES}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {tuple(ACTIVATIONS)}")
        if self.width < 1 or self.r_blocks < 0 or self.channels < 1:
            raise ValueError("width, r_blocks, channels must be positive")
        if self.shifter_kind not in ("none", "kernelwise", "elementwise"):
            raise ValueError(f"bad shifter kind {self.shifter_kind!r}")


@dataclass(frozen=True)
class ClsNetConfig:
    """Residual classifier configuration."""

    stage_blocks: tuple = (2, 2, 2)
    stage_channels: tuple = (16, 32, 64)
    family: str = "classic"
    degree: tuple = (1, 1)
    smoothed: bool = True
    head: str = "affine"
    num_classes: int = 10
    in_channels: int = 3
    shifter_kind: str = "none"
    shifter_b: int = 0
    shifter_ks: int = 1

    def __post_init__(self):
        if len(self.stage_blocks) != 3 or any(n < 1 for n in self.stage_blocks):
            raise ValueError(f"stage_blocks must be 3 positive counts, got {self.stage_blocks}")
        if len(self.stage_channels) != 3:
            raise ValueError("stage_channels must have 3 entries")
        if self.family not in FAMILIES:
            raise ValueError(f"family must be one of {FAMILIES}")
        if self.head not in ("affine", "pade"):
            raise ValueError(f"head must be affine or pade, got {self.head!r}")
        if self.shifter_kind not in ("none", "kernelwise", "elementwise"):
            raise ValueError(f"bad shifter kind {self.shifter_kind!r}")


def _shifter_cfg(kind, b, k_s, channels):
    if kind == "none":
        return None
    return ShifterConfig(kind, b, channels, k_s)


def _make_layer(family, in_ch, out_ch, kernel, rng, degree, smoothed, shifter,
                stride=1, padding="replicate", dtype=np.float32):
    """Block-interior layer: plain conv for classic, PaLa for pala."""
    if family == "classic":
        return Conv2d(in_ch, out_ch, kernel, rng, stride=stride, padding=padding, dtype=dtype)
    spec = ConvSpec(in_ch, out_ch, kernel, stride, padding)
    return PaLaConv(PaonDegree(*degree), spec, rng, smoothed=smoothed,
                    shifter_cfg=shifter, dtype=dtype)


def conv_out_hw(h, w, kernel, stride):
    p = kernel // 2
    return (h + 2 * p - kernel) // stride + 1, (w + 2 * p - kernel) // stride + 1


class SrBlock(Module):
    def __init__(self, cfg, rng, dtype):
        c, wc = cfg.channels, cfg.channels * cfg.width
        sh1 = _shifter_cfg(cfg.shifter_kind, cfg.shifter_b, cfg.shifter_ks, c)
        sh2 = _shifter_cfg(cfg.shifter_kind, cfg.shifter_b, cfg.shifter_ks, wc)
        self.layer1 = _make_layer(cfg.family, c, wc, 3, rng, cfg.degree, cfg.smoothed, sh1, dtype=dtype)
        self.act = ACTIVATIONS[cfg.activation]()
        self.layer2 = _make_layer(cfg.family, wc, c, 3, rng, cfg.degree, cfg.smoothed, sh2, dtype=dtype)
        self.rescale = ResidualScale(c, cfg.residual_scale_init, dtype=dtype)

    def forward(self, x):
        y = self.layer2(self.act(self.layer1(x)))
        return ops.add(self.rescale(y), x)

    def trace(self, name, shape):
        yield f"{name}.layer1", self.layer1, shape
        n, _, h, w = shape
        # layer2 sees the widened interior, not the block input
        yield f"{name}.layer2", self.layer2, (n, self.layer2.spec.in_channels, h, w)


class UpsampleStage(Module):
    def __init__(self, channels, activation, rng, dtype):
        self.conv = Conv2d(channels, 4 * channels, 3, rng, dtype=dtype)
        self.act = ACTIVATIONS[activation]()
        self.shuffle = PixelShuffle(2)

    def forward(self, x):
        return self.shuffle(self.act(self.conv(x)))

    def trace(self, name, shape):
        yield f"{name}.conv", self.conv, shape


class SrNet(Module):
    def __init__(self, cfg, seed, dtype=np.float32):
        rng = np.random.default_rng(seed)
        self.cfg = cfg
        c = cfg.channels
        self.head = Conv2d(cfg.in_channels, c, 3, rng, dtype=dtype)
        self.blocks = [SrBlock(cfg, rng, dtype) for _ in range(cfg.r_blocks)]
        self.trunk_end = Conv2d(c, c, 3, rng, dtype=dtype)
        n_stages = cfg.scale // 2
        if cfg.shared_pixelshuffle and n_stages > 1:
            stage = UpsampleStage(c, cfg.activation, rng, dtype)
            self.up_stages = [stage] * n_stages
        else:
            self.up_stages = [UpsampleStage(c, cfg.activation, rng, dtype)
                              for _ in range(n_stages)]
        self.out_conv = Conv2d(c, cfg.in_channels, 3, rng, dtype=dtype)

    def forward(self, x):
        f0 = self.head(x)
        h = f0
        for block in self.blocks:
            h = block(h)
        h = self.trunk_end(h)
        h = ops.add(h, f0)
        for stage in self.up_stages:
            h = stage(h)
        return self.out_conv(h)

    def trace(self, shape):
        n, _, h, w = shape
        c = self.cfg.channels
        yield "head", self.head, shape
        shape = (n, c, h, w)
        for i, block in enumerate(self.blocks):
            yield from block.trace(f"blocks.{i}", shape)
        yield "trunk_end", self.trunk_end, shape
        for i, stage in enumerate(self.up_stages):
            yield from stage.trace(f"up_stages.{i}", shape)
            shape = (n, c, shape[2] * 2, shape[3] * 2)
        yield "out_conv", self.out_conv, shape


class ClsBlock(Module):
    """Post-activation residual block; ReLU only in the classic family."""

    def __init__(self, cfg, in_ch, out_ch, stride, rng, dtype):
        classic = cfg.family == "classic"
        sh1 = _shifter_cfg(cfg.shifter_kind, cfg.shifter_b, cfg.shifter_ks, in_ch)
        sh2 = _shifter_cfg(cfg.shifter_kind, cfg.shifter_b, cfg.shifter_ks, out_ch)
        self.layer1 = _make_layer(cfg.family, in_ch, out_ch, 3, rng, cfg.degree,
                                  cfg.smoothed, sh1, stride=stride, padding="zero", dtype=dtype)
        self.bn1 = BatchNorm2d(out_ch, dtype=dtype)
        self.act1 = ReLU() if classic else Identity()
        self.layer2 = _make_layer(cfg.family, out_ch, out_ch, 3, rng, cfg.degree,
                                  cfg.smoothed, sh2, padding="zero", dtype=dtype)
        self.bn2 = BatchNorm2d(out_ch, dtype=dtype)
        self.act_out = ReLU() if classic else Identity()
        self.stride = stride
        if stride != 1 or in_ch != out_ch:
            self.short_conv = Conv2d(in_ch, out_ch, 1, rng, stride=stride,
                                     padding="zero", bias=False, dtype=dtype)
            self.short_bn = BatchNorm2d(out_ch, dtype=dtype)
        else:
            self.short_conv = None
            self.short_bn = None

    def forward(self, x):
        y = self.act1(self.bn1(self.layer1(x)))
        y = self.bn2(self.layer2(y))
        s = x if self.short_conv is None else self.short_bn(self.short_conv(x))
        return self.act_out(ops.add(y, s))

    def trace(self, name, shape):
        yield f"{name}.layer1", self.layer1, shape
        n, _, h, w = shape
        k = self.layer1.spec.kernel
        h, w = conv_out_hw(h, w, k, self.stride)
        out_shape = (n, self.bn1.gamma.value.shape[0], h, w)
        yield f"{name}.layer2", self.layer2, out_shape
        if self.short_conv is not None:
            yield f"{name}.short_conv", self.short_conv, shape
        return


class ClsNet(Module):
    def __init__(self, cfg, seed, dtype=np.float32):
        rng = np.random.default_rng(seed)
        self.cfg = cfg
        c1, c2, c3 = cfg.stage_channels
        sh = _shifter_cfg(cfg.shifter_kind, cfg.shifter_b, cfg.shifter_ks, cfg.in_channels)
        self.stem = _make_layer(cfg.family, cfg.in_channels, c1, 3, rng, cfg.degree,
                                cfg.smoothed, sh, padding="zero", dtype=dtype)
        self.stem_bn = BatchNorm2d(c1, dtype=dtype)
        self.stem_act = ReLU() if cfg.family == "classic" else Identity()
        self.blocks = []
        in_ch = c1
        for stage, (n_blocks, out_ch) in enumerate(zip(cfg.stage_blocks, (c1, c2, c3))):
            for j in range(n_blocks):
                stride = 2 if (stage > 0 and j == 0) else 1
                self.blocks.append(ClsBlock(cfg, in_ch, out_ch, stride, rng, dtype))
                in_ch = out_ch
        self.pool = GlobalAvgPool()
        if cfg.head == "affine":
            self.head = Dense(in_ch, cfg.num_classes, rng, dtype=dtype)
        else:
            self.head = PaLaDense(PaonDegree(*cfg.degree), in_ch, cfg.num_classes,
                                  rng, smoothed=cfg.smoothed, dtype=dtype)

    def layer_count(self):
        """Stem + two main layers per block + head."""
        return 1 + 2 * sum(self.cfg.stage_blocks) + 1

    def forward(self, x):
        h = self.stem_act(self.stem_bn(self.stem(x)))
        for block in self.blocks:
            h = block(h)
        h = self.pool(h)
        return self.head(h)

    def trace(self, shape):
        n, _, h, w = shape
        yield "stem", self.stem, shape
        shape = (n, self.cfg.stage_channels[0], h, w)
        for i, block in enumerate(self.blocks):
            yield from block.trace(f"blocks.{i}", shape)
            hh, ww = conv_out_hw(shape[2], shape[3], 3, block.stride)
            shape = (n, block.bn1.gamma.value.shape[0], hh, ww)
        yield "head", self.head, (n, shape[1])


def build_srnet(cfg, seed, dtype=np.float32):
    return SrNet(cfg, seed, dtype=dtype)


def build_cls(cfg, seed, dtype=np.float32):
    return ClsNet(cfg, seed, dtype=dtype)


def model_forward(model, x):
    """Run a model on a Variable or raw array; returns a Variable."""
    if not isinstance(x, Variable):
        x = Variable(np.ascontiguousarray(x))
    return model(x)


def save_checkpoint(model, directory, manifest=None):
    """One TNSR blob per parameter and buffer, named by graph path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lines = []
    for key, value in (manifest or {}).items():
        lines.append(f"{key}={value}")
    for name, p in model.named_parameters():
        data_io.write_tnsr(directory / f"{name}.tnsr", p.value)
        lines.append(f"param:{name}={'x'.join(map(str, p.value.shape))}")
    for name, b in model.named_buffers():
        data_io.write_tnsr(directory / f"{name}.tnsr", b)
        lines.append(f"buffer:{name}={'x'.join(map(str, b.shape))}")
    (directory / "manifest.txt").write_text("\n".join(lines) + "\n")


def load_checkpoint(model, directory):
    directory = Path(directory)
    for name, p in model.named_parameters():
        arr = data_io.read_tnsr(directory / f"{name}.tnsr")
        if arr.shape != p.value.shape:
            raise ValueError(f"checkpoint {name} has shape {arr.shape}, model expects {p.value.shape}")
        p.value[:] = arr.astype(p.value.dtype, copy=False)
    for name, b in model.named_buffers():
        arr = data_io.read_tnsr(directory / f"{name}.tnsr")
        if arr.shape != b.shape:
            raise ValueError(f"checkpoint {name} has shape {arr.shape}, model expects {b.shape}")
        b[:] = arr.astype(b.dtype, copy=False)
    return model
