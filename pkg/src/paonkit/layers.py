"""Pade neuron layers: rational activations built from K+L convolutions.

A Paon layer of degree [K/L] computes P_K(x)/Q_L(x) where
P_K = a0 + sum_k A_k (*) x^k and Q_L = 1 + sum_k B_k (*) x^k; the
constant 1 in Q is fixed, never a parameter. The smoothed form

    out = (Q_L P_K + Q_{L-1} P_{K-1}) / (Q_L^2 + Q_{L-1}^2)

keeps the denominator positive; the lower-degree polynomials truncate
(share) the coefficients of P_K and Q_L, so smoothing adds no weights
and the parameter count stays (K+L) * C_o * C_i * k^2 + C_o. Degree
zero means P_0 = a0 and Q_0 = 1; with L = 0 the smoothed form
degenerates to the plain polynomial P_K and no division happens.

Input powers x^k are computed once and shared by both polynomial
branches. An optional shifter relocates features before any power is
taken. No bounding activation is applied inside the layer.
"""

import enum
from dataclasses import dataclass

import numpy as np

from . import ops
from .autograd import Variable
from .nn import Module, uniform_fanin
from .shifter import make_shifter
from .tensor_ops import ConvSpec


@dataclass(frozen=True)
class PaonDegree:
    """Numerator order K and denominator order L."""

    K: int
    L: int

    def __post_init__(self):
        if self.K < 0 or self.L < 0:
            raise ValueError(f"degrees must be >= 0, got [{self.K}/{self.L}]")
        if self.K + self.L < 1:
            raise ValueError("K + L must be >= 1")

    @property
    def smoothable(self):
        return self.L == 0 or abs(self.K - self.L) <= 1


class NeuronFamily(enum.Enum):
    ORDINARY = "ordinary"
    QUADRATIC = "quadratic"
    GENERATIVE = "generative"
    SUPER = "super"
    PADE = "pade"


def reduce_config(degree, shifter_cfg):
    """Classify which classical neuron model a configuration reduces to."""
    shifted = shifter_cfg is not None and shifter_cfg.active
    if degree.L == 0:
        if not shifted:
            if degree.K == 1:
                return NeuronFamily.ORDINARY
            if degree.K == 2:
                return NeuronFamily.QUADRATIC
            return NeuronFamily.GENERATIVE
        if degree.K >= 2:
            return NeuronFamily.SUPER
    return NeuronFamily.PADE


def pala_param_count(degree, in_channels, out_channels, kernel=1):
    """(K+L) weight sets of C_o*C_i*k^2 each, plus the C_o bias a0."""
    return (degree.K + degree.L) * out_channels * in_channels * kernel * kernel + out_channels


def _powers(x, kmax):
    powers = [x]
    for _ in range(kmax - 1):
        powers.append(ops.mul(powers[-1], x))
    return powers


def _rational(a0, K, L, smoothed, num_term, den_term, out_shape):
    """Compose the Paon output from per-order polynomial terms.

    Returns (output Variable, denominator magnitude array or None).
    The magnitude is |Q_L| for the vanilla form and Q_L^2 + Q_{L-1}^2
    for the smoothed form; polynomial outputs (L = 0) report None.
    """
    ps = [ops.broadcast_features(a0, out_shape)]
    for k in range(1, K + 1):
        ps.append(ops.add(ps[-1], num_term(k)))
    qs = [None]
    for k in range(1, L + 1):
        t = den_term(k)
        qs.append(ops.add(t, 1.0) if qs[-1] is None else ops.add(qs[-1], t))

    if not smoothed:
        p = ps[K]
        if L == 0:
            return p, None
        q = qs[L]
        return ops.div_guarded(p, q), np.abs(q.value)

    if L == 0:
        return ps[K], None
    pk = ps[K]
    pkm1 = ps[K - 1] if K >= 1 else None
    ql = qs[L]
    qlm1 = qs[L - 1]
    num = ops.mul(ql, pk)
    if pkm1 is not None:
        num = ops.add(num, pkm1 if qlm1 is None else ops.mul(qlm1, pkm1))
    den = ops.mul(ql, ql)
    den = ops.add(den, 1.0) if qlm1 is None else ops.add(den, ops.mul(qlm1, qlm1))
    return ops.div(num, den), den.value


def _validate_smoothed(degree, smoothed):
    if smoothed and not degree.smoothable:
        raise ValueError(
            f"smoothed form needs |K-L| <= 1 or L == 0, got [{degree.K}/{degree.L}]")


class _DenominatorMonitor:
    """Mixin exposing the last forward pass's denominator statistics."""

    def denominator_events(self, threshold=0.01):
        """How many elements of the last denominator fell below threshold."""
        if self._last_denominator is None:
            return 0
        return int((self._last_denominator < threshold).sum())

    def denominator_min(self):
        if self._last_denominator is None:
            return None
        return float(self._last_denominator.min())


class PaLaConv(_DenominatorMonitor, Module):
    """Convolutional Paon layer, optionally shifted and/or smoothed."""

    def __init__(self, degree, spec, rng, smoothed=False, shifter_cfg=None, dtype=np.float32):
        _validate_smoothed(degree, smoothed)
        if shifter_cfg is not None and shifter_cfg.channels != spec.in_channels:
            raise ValueError(
                f"shifter channels {shifter_cfg.channels} != input channels {spec.in_channels}")
        self.degree = degree
        self.spec = spec
        self.smoothed = smoothed
        self.shifter = make_shifter(shifter_cfg, rng, dtype)
        wshape = (spec.out_channels, spec.in_channels, spec.kernel, spec.kernel)
        fan_in = spec.in_channels * spec.kernel * spec.kernel
        self.a0 = Variable(np.zeros(spec.out_channels, dtype=dtype), requires_grad=True)
        self.A = [
            Variable(uniform_fanin(rng, wshape, fan_in, dtype) if k == 1
                     else np.zeros(wshape, dtype=dtype), requires_grad=True)
            for k in range(1, degree.K + 1)
        ]
        self.B = [Variable(np.zeros(wshape, dtype=dtype), requires_grad=True)
                  for _ in range(degree.L)]
        self._last_denominator = None

    def param_count(self):
        own = pala_param_count(self.degree, self.spec.in_channels,
                               self.spec.out_channels, self.spec.kernel)
        if self.shifter is not None:
            own += sum(p.value.size for p in self.shifter.parameters())
        return own

    def _out_shape(self, in_shape):
        n, _, h, w = in_shape
        p = self.spec.kernel // 2
        ho = (h + 2 * p - self.spec.kernel) // self.spec.stride + 1
        wo = (w + 2 * p - self.spec.kernel) // self.spec.stride + 1
        return (n, self.spec.out_channels, ho, wo)

    def forward(self, x):
        if self.shifter is not None:
            x = self.shifter(x)
        powers = _powers(x, max(self.degree.K, self.degree.L))
        out, den = _rational(
            self.a0, self.degree.K, self.degree.L, self.smoothed,
            num_term=lambda k: ops.conv2d(powers[k - 1], self.A[k - 1], None, self.spec),
            den_term=lambda k: ops.conv2d(powers[k - 1], self.B[k - 1], None, self.spec),
            out_shape=self._out_shape(x.value.shape),
        )
        self._last_denominator = den
        return out


class PaLaDense(_DenominatorMonitor, Module):
    """Fully-connected Paon layer; the polynomial op is matrix product."""

    def __init__(self, degree, in_features, out_features, rng, smoothed=False, dtype=np.float32):
        _validate_smoothed(degree, smoothed)
        self.degree = degree
        self.in_features = in_features
        self.out_features = out_features
        self.smoothed = smoothed
        wshape = (in_features, out_features)
        self.a0 = Variable(np.zeros(out_features, dtype=dtype), requires_grad=True)
        self.A = [
            Variable(uniform_fanin(rng, wshape, in_features, dtype) if k == 1
                     else np.zeros(wshape, dtype=dtype), requires_grad=True)
            for k in range(1, degree.K + 1)
        ]
        self.B = [Variable(np.zeros(wshape, dtype=dtype), requires_grad=True)
                  for _ in range(degree.L)]
        self._last_denominator = None

    def param_count(self):
        return pala_param_count(self.degree, self.in_features, self.out_features)

    def forward(self, x):
        if x.value.ndim != 2 or x.value.shape[1] != self.in_features:
            raise ValueError(
                f"expected (N, {self.in_features}) input, got {x.value.shape}")
        powers = _powers(x, max(self.degree.K, self.degree.L))
        out, den = _rational(
            self.a0, self.degree.K, self.degree.L, self.smoothed,
            num_term=lambda k: ops.matmul(powers[k - 1], self.A[k - 1]),
            den_term=lambda k: ops.matmul(powers[k - 1], self.B[k - 1]),
            out_shape=(x.value.shape[0], self.out_features),
        )
        self._last_denominator = den
        return out


def pala_init(layer, seed):
    """Reset a PaLa layer's polynomial weights to the standard init.

    A_1 is uniform with the fan-in bound, higher-order A_k and every
    B_k are zero (so Q == 1 and the layer starts affine), a0 is zero.
    Deterministic for a given seed.
    """
    rng = np.random.default_rng(seed)
    fan_in = (layer.spec.in_channels * layer.spec.kernel ** 2
              if isinstance(layer, PaLaConv) else layer.in_features)
    dtype = layer.a0.value.dtype
    layer.a0.value[:] = 0
    for k, a in enumerate(layer.A, start=1):
        if k == 1:
            a.value[:] = uniform_fanin(rng, a.value.shape, fan_in, dtype)
        else:
            a.value[:] = 0
    for b in layer.B:
        b.value[:] = 0
    return layer


def pala_forward_vanilla(layer, x):
    """Eq-3 style forward: P_K/Q_L with the guarded elementwise divide."""
    if layer.smoothed:
        raise ValueError("layer is configured smoothed; use pala_forward_smoothed")
    return layer.forward(x)


def pala_forward_smoothed(layer, x):
    """Smoothed forward with the sum-of-squares denominator."""
    if not layer.smoothed:
        raise ValueError("layer is configured vanilla; use pala_forward_vanilla")
    return layer.forward(x)


def pala_dense_forward(layer, x):
    """Fully-connected Paon forward on flat (N, F) features."""
    return layer.forward(x)
