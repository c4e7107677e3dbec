"""Differentiable ops: forward kernels paired with backward rules.

Every function takes and returns ``Variable``s and registers its
backward rule on the active tape. Binary elementwise ops demand
identical shapes; the only implicit broadcast is a Python scalar.
Heavy backward kernels (convolution, bilinear sampling) are skipped
for inputs that no gradient consumer reaches.
"""

import logging

import numpy as np
from scipy.special import erf

from . import kernels, tensor_ops
from .autograd import Variable, record

logger = logging.getLogger(__name__)

_INV_SQRT2 = float(1.0 / np.sqrt(2.0))
_INV_SQRT2PI = float(1.0 / np.sqrt(2.0 * np.pi))


def _check_same_shape(a, b, opname):
    if a.value.shape != b.value.shape:
        raise ValueError(f"{opname} requires identical shapes, got {a.value.shape} vs {b.value.shape}")


def _is_scalar(x):
    return isinstance(x, (int, float)) and not isinstance(x, bool)


def add(a, b):
    if _is_scalar(b):
        out = Variable(a.value + b)
        record(out, (a,), lambda g: (g,))
        return out
    _check_same_shape(a, b, "add")
    out = Variable(a.value + b.value)
    record(out, (a, b), lambda g: (g, g))
    return out


def sub(a, b):
    if _is_scalar(b):
        return add(a, -b)
    _check_same_shape(a, b, "sub")
    out = Variable(a.value - b.value)
    record(out, (a, b), lambda g: (g, -g))
    return out


def mul(a, b):
    if _is_scalar(b):
        out = Variable(a.value * b)
        record(out, (a,), lambda g: (g * b,))
        return out
    _check_same_shape(a, b, "mul")
    out = Variable(a.value * b.value)
    record(out, (a, b), lambda g: (g * b.value, g * a.value))
    return out


def neg(a):
    return mul(a, -1.0)


def div(a, b):
    """Plain elementwise quotient with the standard quotient rule."""
    _check_same_shape(a, b, "div")
    out = Variable(a.value / b.value)

    def bwd(g):
        ga = g / b.value
        gb = -g * out.value / b.value
        return ga, gb

    record(out, (a, b), bwd)
    return out


def div_guarded(a, b, eps=1e-12):
    """Quotient with the denominator clamped away from zero.

    Elements with |b| < eps are replaced by sign(b)*eps in both the
    forward value and the backward rule, so a denominator collision
    produces a large but finite result instead of inf/NaN. Triggering
    the clamp is an instrumentation event and is logged.
    """
    _check_same_shape(a, b, "div_guarded")
    small = np.abs(b.value) < eps
    n_clamped = int(small.sum())
    if n_clamped:
        logger.info("denominator clamp triggered on %d element(s) (|Q| < %g)", n_clamped, eps)
        d = np.where(small, np.copysign(np.asarray(eps, dtype=b.value.dtype), b.value), b.value)
    else:
        d = b.value
    out = Variable(a.value / d)

    def bwd(g):
        ga = g / d
        gb = -g * out.value / d
        return ga, gb

    record(out, (a, b), bwd)
    return out


def power_scalar(a, p):
    """Elementwise a**p for a real exponent; requires positive base."""
    out = Variable(a.value ** p)
    record(out, (a,), lambda g: (g * p * a.value ** (p - 1.0),))
    return out


def log(a):
    out = Variable(np.log(a.value))
    record(out, (a,), lambda g: (g / a.value,))
    return out


def tanh(a):
    t = np.tanh(a.value)
    out = Variable(t)
    record(out, (a,), lambda g: (g * (1.0 - t * t),))
    return out


def relu(a):
    mask = a.value > 0
    out = Variable(np.where(mask, a.value, 0.0).astype(a.value.dtype, copy=False))
    record(out, (a,), lambda g: (g * mask,))
    return out


def gelu(a):
    """Exact Gaussian-error-function gelu: x * Phi(x)."""
    phi_cdf = 0.5 * (1.0 + erf(a.value * _INV_SQRT2))
    out = Variable(a.value * phi_cdf)

    def bwd(g):
        pdf = np.exp(-0.5 * a.value * a.value) * _INV_SQRT2PI
        return (g * (phi_cdf + a.value * pdf),)

    record(out, (a,), bwd)
    return out


def elem_pow(a, k):
    """Integer power by repeated multiplication; k = 0 rejected."""
    if not isinstance(k, (int, np.integer)) or k < 1:
        raise ValueError(f"exponent must be a positive integer, got {k!r}")
    out = a
    for _ in range(k - 1):
        out = mul(out, a)
    return out


def matmul(a, w):
    out = Variable(a.value @ w.value)

    def bwd(g):
        ga = g @ w.value.T if a.needs_grad() else None
        gw = a.value.T @ g if w.needs_grad() else None
        return ga, gw

    record(out, (a, w), bwd)
    return out


def sum_all(a):
    out = Variable(np.asarray(a.value.sum()))
    record(out, (a,), lambda g: (np.broadcast_to(g, a.value.shape),))
    return out


def mean_all(a):
    n = a.value.size
    out = Variable(np.asarray(a.value.mean()))
    record(out, (a,), lambda g: (np.broadcast_to(g / n, a.value.shape),))
    return out


def spatial_mean(a):
    """(N,C,H,W) -> (N,C) mean over the spatial axes."""
    n, c, h, w = a.value.shape
    out = Variable(a.value.mean(axis=(2, 3)))
    record(out, (a,), lambda g: (np.broadcast_to(g[:, :, None, None] / (h * w), a.value.shape),))
    return out


def batch_channel_mean(a):
    """(N,C,H,W) -> (C,) mean over batch and spatial axes."""
    n, c, h, w = a.value.shape
    out = Variable(a.value.mean(axis=(0, 2, 3)))
    record(out, (a,), lambda g: (np.broadcast_to(g.reshape(1, c, 1, 1) / (n * h * w), a.value.shape),))
    return out


def broadcast_features(v, like_shape):
    """Broadcast a per-feature vector across a batch.

    (C,) -> (N,C,H,W) or (K,) -> (N,K); the backward rule sums the
    incoming gradient over the broadcast axes.
    """
    c = v.value.shape[0]
    if len(like_shape) == 4:
        if like_shape[1] != c:
            raise ValueError(f"feature size {c} does not match target {like_shape}")
        shaped = v.value.reshape(1, c, 1, 1)
        axes = (0, 2, 3)
    elif len(like_shape) == 2:
        if like_shape[1] != c:
            raise ValueError(f"feature size {c} does not match target {like_shape}")
        shaped = v.value.reshape(1, c)
        axes = (0,)
    else:
        raise ValueError(f"unsupported broadcast target {like_shape}")
    out = Variable(np.ascontiguousarray(np.broadcast_to(shaped, like_shape)))
    record(out, (v,), lambda g: (g.sum(axis=axes),))
    return out


def broadcast_spatial(v, h, w):
    """(N,K) -> (N,K,H,W), repeating each value over the spatial grid."""
    n, k = v.value.shape
    out = Variable(np.ascontiguousarray(np.broadcast_to(v.value[:, :, None, None], (n, k, h, w))))
    record(out, (v,), lambda g: (g.sum(axis=(2, 3)),))
    return out


def reshape(a, shape):
    out = Variable(a.value.reshape(shape))
    record(out, (a,), lambda g: (g.reshape(a.value.shape),))
    return out


def pad_replicate(a, p):
    n, c, h, w = a.value.shape
    out = Variable(tensor_ops.replicate_pad(a.value, p))

    def bwd(gp):
        g = gp[:, :, p:p + h, p:p + w].copy()
        if p > 0:
            g[:, :, 0, :] += gp[:, :, :p, p:p + w].sum(axis=2)
            g[:, :, -1, :] += gp[:, :, p + h:, p:p + w].sum(axis=2)
            g[:, :, :, 0] += gp[:, :, p:p + h, :p].sum(axis=3)
            g[:, :, :, -1] += gp[:, :, p:p + h, p + w:].sum(axis=3)
            g[:, :, 0, 0] += gp[:, :, :p, :p].sum(axis=(2, 3))
            g[:, :, 0, -1] += gp[:, :, :p, p + w:].sum(axis=(2, 3))
            g[:, :, -1, 0] += gp[:, :, p + h:, :p].sum(axis=(2, 3))
            g[:, :, -1, -1] += gp[:, :, p + h:, p + w:].sum(axis=(2, 3))
        return (g,)

    record(out, (a,), bwd)
    return out


def pad_zero(a, p):
    n, c, h, w = a.value.shape
    out = Variable(tensor_ops.zero_pad(a.value, p))
    record(out, (a,), lambda gp: (np.ascontiguousarray(gp[:, :, p:p + h, p:p + w]),))
    return out


def _conv_valid(x, w, stride):
    in_h, in_w = x.value.shape[2], x.value.shape[3]
    out = Variable(kernels.conv2d_valid(x.value, w.value, stride))

    def bwd(g):
        gx = kernels.conv2d_valid_grad_input(g, w.value, stride, in_h, in_w) if x.needs_grad() else None
        gw = kernels.conv2d_valid_grad_weight(x.value, g, w.value.shape[2], stride) if w.needs_grad() else None
        return gx, gw

    record(out, (x, w), bwd)
    return out


def conv2d(x, w, bias, spec):
    """Same-padded cross-correlation; see tensor_ops.conv2d for semantics."""
    if x.value.shape[1] != spec.in_channels:
        raise ValueError(f"input has {x.value.shape[1]} channels, spec expects {spec.in_channels}")
    expect_w = (spec.out_channels, spec.in_channels, spec.kernel, spec.kernel)
    if w.value.shape != expect_w:
        raise ValueError(f"weight shape {w.value.shape} does not match spec {expect_w}")
    p = spec.kernel // 2
    if p > 0:
        xp = pad_replicate(x, p) if spec.padding == "replicate" else pad_zero(x, p)
    else:
        xp = x
    y = _conv_valid(xp, w, spec.stride)
    if bias is not None:
        y = add(y, broadcast_features(bias, y.value.shape))
    return y


def pixel_shuffle(a, r):
    out = Variable(tensor_ops.pixel_shuffle(a.value, r))
    record(out, (a,), lambda g: (tensor_ops.pixel_unshuffle(g, r),))
    return out


def pixel_unshuffle(a, r):
    out = Variable(tensor_ops.pixel_unshuffle(a.value, r))
    record(out, (a,), lambda g: (tensor_ops.pixel_shuffle(g, r),))
    return out


def bilinear_sample(x, offsets):
    """Differentiable warp; gradients reach both the image and offsets.

    Offsets follow tensor_ops conventions: (C,2) per-channel rows or
    (N,2C,H,W) per-pixel maps with dx on even and dy on odd channels.
    """
    xv = np.ascontiguousarray(x.value)
    cx, cy = tensor_ops._offset_coords(xv, offsets.value)
    out = Variable(kernels.bilinear_gather(xv, cx, cy))

    def bwd(g):
        gimg, gcx, gcy = kernels.bilinear_gather_backward(xv, cx, cy, np.ascontiguousarray(g))
        if offsets.value.ndim == 2:
            goff = np.stack([gcx.sum(axis=(0, 2, 3)), gcy.sum(axis=(0, 2, 3))], axis=1)
        else:
            goff = np.empty_like(offsets.value)
            goff[:, 0::2] = gcx
            goff[:, 1::2] = gcy
        return (gimg if x.needs_grad() else None), goff

    record(out, (x, offsets), bwd)
    return out


def cross_entropy(logits, labels):
    """Mean softmax cross-entropy; labels are an int array of shape (N,)."""
    z = logits.value
    n = z.shape[0]
    labels = np.asarray(labels)
    zmax = z.max(axis=1, keepdims=True)
    ez = np.exp(z - zmax)
    p = ez / ez.sum(axis=1, keepdims=True)
    picked = z[np.arange(n), labels] - zmax[:, 0] - np.log(ez.sum(axis=1))
    out = Variable(np.asarray(-picked.mean()))

    def bwd(g):
        gl = p.copy()
        gl[np.arange(n), labels] -= 1.0
        return (gl * (g / n),)

    record(out, (logits,), bwd)
    return out
