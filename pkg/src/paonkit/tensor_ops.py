"""Deterministic tensor kernels shared by every layer.

Tensors are contiguous numpy arrays, float32 for training runs and
float64 for gradient checking; each op preserves the input dtype.
Convolution is cross-correlation (no kernel flip) and reduces every
output element in a fixed (channel, kernel row, kernel column) order,
so results are bit-reproducible across runs and backends that honor
that order.
"""

from dataclasses import dataclass, field

import numpy as np

from . import kernels

PAD_MODES = ("replicate", "zero")


@dataclass(frozen=True)
class ConvSpec:
    """Shape contract for one convolution: odd kernel, same padding."""

    in_channels: int
    out_channels: int
    kernel: int
    stride: int = 1
    padding: str = "replicate"

    def __post_init__(self):
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise ValueError(f"kernel must be odd and positive, got {self.kernel}")
        if self.stride < 1:
            raise ValueError(f"stride must be >= 1, got {self.stride}")
        if self.in_channels < 1 or self.out_channels < 1:
            raise ValueError("channel counts must be >= 1")
        if self.padding not in PAD_MODES:
            raise ValueError(f"padding must be one of {PAD_MODES}, got {self.padding!r}")


def _require_4d(t, name="input"):
    if t.ndim != 4:
        raise ValueError(f"{name} must be 4-D (N,C,H,W), got shape {t.shape}")


def replicate_pad(t, p):
    """Pad H and W by p pixels on each side, repeating the border value."""
    _require_4d(t)
    if p < 0:
        raise ValueError(f"pad must be >= 0, got {p}")
    if p == 0:
        return t
    return np.pad(t, ((0, 0), (0, 0), (p, p), (p, p)), mode="edge")


def zero_pad(t, p):
    _require_4d(t)
    if p == 0:
        return t
    return np.pad(t, ((0, 0), (0, 0), (p, p), (p, p)), mode="constant")


def conv2d(t, w, bias, spec):
    """Same-padded cross-correlation of t (N,Ci,H,W) with w (Co,Ci,k,k).

    Padding is fixed at k//2 so stride-1 output keeps the input's
    spatial size; stride > 1 then downsamples it.
    """
    _require_4d(t)
    if t.shape[1] != spec.in_channels:
        raise ValueError(f"input has {t.shape[1]} channels, spec expects {spec.in_channels}")
    expect_w = (spec.out_channels, spec.in_channels, spec.kernel, spec.kernel)
    if w.shape != expect_w:
        raise ValueError(f"weight shape {w.shape} does not match spec {expect_w}")
    pad = spec.kernel // 2
    padded = replicate_pad(t, pad) if spec.padding == "replicate" else zero_pad(t, pad)
    out = kernels.conv2d_valid(padded, w, spec.stride)
    if bias is not None:
        out = out + bias.reshape(1, -1, 1, 1)
    return out


def elem_pow(t, k):
    """Elementwise integer power by repeated multiplication.

    k = 0 is rejected: a constant term is a bias, not a power of the
    input. Repeated multiplication keeps the gradient chain exact.
    """
    if not isinstance(k, (int, np.integer)) or k < 1:
        raise ValueError(f"exponent must be a positive integer, got {k!r}")
    out = t
    for _ in range(k - 1):
        out = out * t
    return out


def pixel_shuffle(t, r):
    """Depth-to-space: (N, C*r*r, H, W) -> (N, C, r*H, r*W)."""
    _require_4d(t)
    n, c, h, w = t.shape
    if r < 1 or c % (r * r) != 0:
        raise ValueError(f"channels {c} not divisible by r*r with r={r}")
    co = c // (r * r)
    out = t.reshape(n, co, r, r, h, w).transpose(0, 1, 4, 2, 5, 3)
    return np.ascontiguousarray(out.reshape(n, co, h * r, w * r))


def pixel_unshuffle(t, r):
    """Space-to-depth inverse of pixel_shuffle."""
    _require_4d(t)
    n, c, h, w = t.shape
    if r < 1 or h % r != 0 or w % r != 0:
        raise ValueError(f"spatial size {h}x{w} not divisible by r={r}")
    out = t.reshape(n, c, h // r, r, w // r, r).transpose(0, 1, 3, 5, 2, 4)
    return np.ascontiguousarray(out.reshape(n, c * r * r, h // r, w // r))


def _offset_coords(t, offsets):
    """Build absolute sampling coordinates (cx, cy) from offsets.

    Offsets are per-channel (C, 2) rows (dx, dy), or per-pixel maps of
    shape (N, 2C, H, W) where channel 2c carries dx and 2c+1 carries dy
    for input channel c.
    """
    n, c, h, w = t.shape
    if not np.all(np.isfinite(offsets)):
        raise ValueError("offsets must be finite")
    xs = np.arange(w, dtype=t.dtype)
    ys = np.arange(h, dtype=t.dtype)
    base_x = np.broadcast_to(xs[None, None, None, :], t.shape)
    base_y = np.broadcast_to(ys[None, None, :, None], t.shape)
    if offsets.ndim == 2:
        if offsets.shape != (c, 2):
            raise ValueError(f"per-channel offsets must be ({c}, 2), got {offsets.shape}")
        dx = offsets[:, 0].astype(t.dtype, copy=False).reshape(1, c, 1, 1)
        dy = offsets[:, 1].astype(t.dtype, copy=False).reshape(1, c, 1, 1)
    elif offsets.ndim == 4:
        if offsets.shape != (n, 2 * c, h, w):
            raise ValueError(f"per-pixel offsets must be ({n}, {2 * c}, {h}, {w}), got {offsets.shape}")
        dx = offsets[:, 0::2]
        dy = offsets[:, 1::2]
    else:
        raise ValueError(f"offsets must be (C,2) or (N,2C,H,W), got shape {offsets.shape}")
    cx = np.ascontiguousarray(base_x + dx)
    cy = np.ascontiguousarray(base_y + dy)
    return cx, cy


def bilinear_sample(t, offsets):
    """Sample each channel at (x+dx, y+dy) with 4-neighbor bilinear blend.

    Out-of-range coordinates clamp to the edge, matching replicate
    padding extended indefinitely. Zero offsets reproduce the input.
    """
    _require_4d(t)
    cx, cy = _offset_coords(t, offsets)
    return kernels.bilinear_gather(np.ascontiguousarray(t), cx, cy)


@dataclass
class BatchNormState:
    """Per-channel affine parameters and running statistics."""

    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.1
    eps: float = 1e-5

    @classmethod
    def create(cls, channels, dtype=np.float32):
        return cls(
            gamma=np.ones(channels, dtype=dtype),
            beta=np.zeros(channels, dtype=dtype),
            running_mean=np.zeros(channels, dtype=dtype),
            running_var=np.ones(channels, dtype=dtype),
        )


def batch_norm(t, state, training):
    """Per-channel normalization with learnable scale and shift.

    Training mode normalizes by batch statistics (population variance)
    and folds them into the running stats with momentum; eval mode
    normalizes by the running stats.
    """
    _require_4d(t)
    if t.shape[0] == 0:
        raise ValueError("batch must be non-empty")
    c = t.shape[1]
    if training:
        mean = t.mean(axis=(0, 2, 3))
        var = ((t - mean.reshape(1, c, 1, 1)) ** 2).mean(axis=(0, 2, 3))
        m = state.momentum
        state.running_mean = ((1 - m) * state.running_mean + m * mean).astype(t.dtype)
        state.running_var = ((1 - m) * state.running_var + m * var).astype(t.dtype)
    else:
        mean = state.running_mean.astype(t.dtype)
        var = state.running_var.astype(t.dtype)
    inv = 1.0 / np.sqrt(var + np.asarray(state.eps, dtype=t.dtype))
    xhat = (t - mean.reshape(1, c, 1, 1)) * inv.reshape(1, c, 1, 1)
    return xhat * state.gamma.reshape(1, c, 1, 1) + state.beta.reshape(1, c, 1, 1)
