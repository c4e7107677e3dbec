"""Receptive-field shifters: learnable, bounded feature relocation.

Two mechanisms move each input channel before a Paon layer convolves
its powers. The kernel-wise shifter learns one (dx, dy) per channel,
either as direct parameters (b > 0) or predicted from globally pooled
features (b = 0); b < 0 deactivates it. The element-wise shifter
predicts a per-pixel (dx, dy) field per channel with a small conv
head. Raw offsets are squashed through m*tanh(raw/m), so applied
shifts stay strictly inside (-m, m) while small values pass through
almost unchanged.

Offset heads initialize to zero: a fresh shifter is a no-op, and
training grows shifts from the neutral state.
"""

from dataclasses import dataclass

import numpy as np

from . import ops
from .autograd import Variable
from .nn import Dense, Module
from .tensor_ops import ConvSpec

KINDS = ("kernelwise", "elementwise")


@dataclass(frozen=True)
class ShifterConfig:
    """kind, shift budget b, offset-head kernel k_s, input channels."""

    kind: str
    b: int
    channels: int
    k_s: int = 1

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if self.k_s < 1 or self.k_s % 2 == 0:
            raise ValueError(f"k_s must be odd and positive, got {self.k_s}")
        if self.channels < 1:
            raise ValueError("channels must be >= 1")

    @property
    def active(self):
        """A kernel-wise shifter with b < 0 is deactivated."""
        return not (self.kind == "kernelwise" and self.b < 0)


def offset_limit(b, h, w):
    """Maximum allowable shift: b when positive, else max(h, w)/4."""
    return float(b) if b > 0 else max(h, w) / 4.0


def limit_offsets(raw, m):
    """Squash raw offsets to (-m, m) via m*tanh(raw/m)."""
    if m <= 0:
        raise ValueError(f"offset limit must be positive, got {m}")
    return ops.mul(ops.tanh(ops.mul(raw, 1.0 / m)), float(m))


class KernelWiseShifter(Module):
    """One (dx, dy) per input channel.

    b > 0: the offsets are direct parameters, bounded by m = b.
    b = 0: offsets come from a zero-init dense head over the global
    spatial average, bounded by m = max(h, w)/4.
    b < 0: identity.
    """

    def __init__(self, cfg, rng, dtype=np.float32):
        if cfg.kind != "kernelwise":
            raise ValueError(f"expected kernelwise config, got {cfg.kind}")
        self.cfg = cfg
        if cfg.b > 0:
            self.raw = Variable(np.zeros((cfg.channels, 2), dtype=dtype), requires_grad=True)
        elif cfg.b == 0:
            self.head = Dense(cfg.channels, 2 * cfg.channels, rng, dtype=dtype)
            self.head.weight.value[:] = 0

    def forward(self, x):
        b = self.cfg.b
        if b < 0:
            return x
        if b > 0:
            limited = limit_offsets(self.raw, float(b))
            return ops.bilinear_sample(x, limited)
        n, c, h, w = x.value.shape
        m = offset_limit(0, h, w)
        pooled = ops.spatial_mean(x)
        raw = self.head(pooled)
        limited = limit_offsets(raw, m)
        return ops.bilinear_sample(x, ops.broadcast_spatial(limited, h, w))


class ElementWiseShifter(Module):
    """Per-pixel (dx, dy) per channel from a zero-init conv head."""

    def __init__(self, cfg, rng, dtype=np.float32):
        if cfg.kind != "elementwise":
            raise ValueError(f"expected elementwise config, got {cfg.kind}")
        self.cfg = cfg
        c = cfg.channels
        self.head_spec = ConvSpec(c, 2 * c, cfg.k_s, padding="replicate")
        self.head_weight = Variable(
            np.zeros((2 * c, c, cfg.k_s, cfg.k_s), dtype=dtype), requires_grad=True)
        self.head_bias = Variable(np.zeros(2 * c, dtype=dtype), requires_grad=True)

    def offsets(self, x):
        """The limited per-pixel offset field (N, 2C, H, W)."""
        n, c, h, w = x.value.shape
        m = offset_limit(self.cfg.b, h, w)
        raw = ops.conv2d(x, self.head_weight, self.head_bias, self.head_spec)
        return limit_offsets(raw, m)

    def forward(self, x):
        return ops.bilinear_sample(x, self.offsets(x))


def make_shifter(cfg, rng, dtype=np.float32):
    """Build the module for a config; None passes through unchanged."""
    if cfg is None:
        return None
    if cfg.kind == "kernelwise":
        return KernelWiseShifter(cfg, rng, dtype=dtype)
    return ElementWiseShifter(cfg, rng, dtype=dtype)


def kernelwise_shift(x, shifter):
    """Apply a kernel-wise shifter to x; see KernelWiseShifter."""
    return shifter.forward(x)


def elementwise_offsets(x, shifter):
    """Compute the limited element-wise offset field for x."""
    return shifter.offsets(x)
