"""Fidelity metrics, the analytic op counter, and singularity scans.

The counter never executes the model: it walks the static trace and
applies closed-form per-layer formulas, so a report on a 256x256 input
costs microseconds. PSNR/SSIM follow the usual 8-bit conventions
(quantize first, peak 255, BT.601 full-range Y).
"""

import csv
import io
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import convolve2d

from .data_io import to_u8
from .layers import PaLaConv, PaLaDense, _DenominatorMonitor
from .models import conv_out_hw
from .nn import Conv2d, Dense, Module


@dataclass
class LayerCount:
    name: str
    kind: str
    mults: int
    divisions: int = 0
    aux_ops: int = 0
    shifter_mults: int = 0
    shifter_interp: int = 0

    @property
    def macs(self):
        return self.mults + self.shifter_mults

    @property
    def flops(self):
        return 2 * self.macs


@dataclass
class OpCountReport:
    layers: list = field(default_factory=list)

    def total(self, attr):
        return sum(getattr(lc, attr) for lc in self.layers)

    @property
    def macs(self):
        return self.total("macs")

    @property
    def flops(self):
        return self.total("flops")

    _COLS = ("mults", "divisions", "aux_ops", "shifter_mults",
             "shifter_interp", "macs", "flops")

    def to_csv(self):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(("layer", "kind") + self._COLS)
        for lc in self.layers:
            writer.writerow([lc.name, lc.kind] + [getattr(lc, c) for c in self._COLS])
        writer.writerow(["total", ""] + [self.total(c) for c in self._COLS])
        return buf.getvalue()

    def to_table(self):
        rows = [("layer", "kind") + self._COLS]
        for lc in self.layers:
            rows.append((lc.name, lc.kind) + tuple(f"{getattr(lc, c):,}" for c in self._COLS))
        rows.append(("total", "") + tuple(f"{self.total(c):,}" for c in self._COLS))
        widths = [max(len(str(r[i])) for r in rows) for i in range(len(rows[0]))]
        lines = []
        for r in rows:
            lines.append("  ".join(str(v).rjust(w) for v, w in zip(r, widths)))
        return "\n".join(lines)


def _shifter_counts(shifter, c_in, h, w):
    """(mults, interpolation ops) for one shifter at input h x w."""
    if shifter is None or not shifter.cfg.active:
        return 0, 0
    cfg = shifter.cfg
    interp = 4 * h * w * c_in
    if cfg.kind == "elementwise":
        return 2 * c_in * cfg.k_s * cfg.k_s * h * w * c_in, interp
    if cfg.b == 0:
        # pooled feature through the dense offset head, once per image
        return 2 * c_in * c_in, interp
    return 0, interp


def count_layer(name, layer, input_shape):
    """Closed-form counts for one atomic layer on one input shape.

    Conv shapes are (c, h, w) or (n, c, h, w); dense shapes (f,) or
    (n, f). Counts scale with the batch dimension when present.
    """
    shape = tuple(int(s) for s in input_shape)
    if isinstance(layer, (Conv2d, PaLaConv)):
        if len(shape) == 3:
            n, (c, h, w) = 1, shape
        elif len(shape) == 4:
            n, c, h, w = shape
        else:
            raise ValueError(f"conv layer needs a 3- or 4-d shape, got {shape}")
        spec = layer.spec
        if c != spec.in_channels:
            raise ValueError(f"{name}: shape has {c} channels, layer expects {spec.in_channels}")
        ho, wo = conv_out_hw(h, w, spec.kernel, spec.stride)
        base = spec.in_channels * spec.kernel * spec.kernel * ho * wo * spec.out_channels
        if isinstance(layer, PaLaConv):
            K, L = layer.degree.K, layer.degree.L
            sm, si = _shifter_counts(layer.shifter, spec.in_channels, h, w)
            return LayerCount(
                name, f"paon[{K}/{L}]",
                mults=n * (K + L) * base,
                divisions=n * ho * wo * spec.out_channels if L >= 1 else 0,
                aux_ops=n * 4 * ho * wo * spec.out_channels if (layer.smoothed and L >= 1) else 0,
                shifter_mults=n * sm,
                shifter_interp=n * si)
        return LayerCount(name, "conv", mults=n * base)
    if isinstance(layer, (Dense, PaLaDense)):
        if len(shape) == 1:
            n, f = 1, shape[0]
        elif len(shape) == 2:
            n, f = shape
        else:
            raise ValueError(f"dense layer needs a 1- or 2-d shape, got {shape}")
        if isinstance(layer, PaLaDense):
            if f != layer.in_features:
                raise ValueError(f"{name}: shape has {f} features, layer expects {layer.in_features}")
            K, L = layer.degree.K, layer.degree.L
            return LayerCount(
                name, f"paon[{K}/{L}]",
                mults=n * (K + L) * layer.in_features * layer.out_features,
                divisions=n * layer.out_features if L >= 1 else 0,
                aux_ops=n * 4 * layer.out_features if (layer.smoothed and L >= 1) else 0)
        fi, fo = layer.weight.value.shape
        if f != fi:
            raise ValueError(f"{name}: shape has {f} features, layer expects {fi}")
        return LayerCount(name, "dense", mults=n * fi * fo)
    raise TypeError(f"{name}: cannot count {type(layer).__name__}")


def count_ops(model, input_shape):
    """OpCountReport for a model (via its trace) or a bare layer.

    Pure arithmetic over static shapes; nothing is executed.
    """
    if any(int(s) <= 0 for s in input_shape):
        raise ValueError(f"shape must be positive, got {tuple(input_shape)}")
    report = OpCountReport()
    if hasattr(model, "trace"):
        shape = tuple(input_shape)
        if len(shape) == 3:
            shape = (1,) + shape
        for name, layer, lshape in model.trace(shape):
            report.layers.append(count_layer(name, layer, lshape))
    else:
        report.layers.append(count_layer("layer", model, input_shape))
    return report


def psnr_rgb(a, b, peak=255.0):
    """PSNR in dB over 8-bit-quantized RGB; identical images give inf.

    Inputs are [-1, 1] floats of the same shape.
    """
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    qa = to_u8(a).astype(np.float64)
    qb = to_u8(b).astype(np.float64)
    mse = float(((qa - qb) ** 2).mean())
    if mse == 0:
        return float("inf")
    return float(10.0 * np.log10(peak * peak / mse))


def cap_db(value, cap=100.0):
    """Sentinel used when writing PSNR to CSV."""
    return min(float(value), cap)


def _gauss_window(size=11, sigma=1.5):
    half = (size - 1) / 2.0
    x = np.arange(size) - half
    g = np.exp(-(x * x) / (2 * sigma * sigma))
    k = np.outer(g, g)
    return k / k.sum()


def _to_y(img):
    if img.ndim == 2:
        return to_u8(img).astype(np.float64)
    if img.ndim == 3 and img.shape[0] == 3:
        u = to_u8(img).astype(np.float64)
        return 0.299 * u[0] + 0.587 * u[1] + 0.114 * u[2]
    raise ValueError(f"expected (3, h, w) rgb or (h, w) gray, got {img.shape}")


def ssim_y(a, b, window=11, sigma=1.5, k1=0.01, k2=0.03, peak=255.0):
    """Mean structural similarity on the luma channel.

    Valid-window convolution, so images must be at least window-sized.
    """
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    ya = _to_y(a)
    yb = _to_y(b)
    if min(ya.shape) < window:
        raise ValueError(f"image {ya.shape} smaller than the {window}x{window} window")
    w = _gauss_window(window, sigma)
    mu_a = convolve2d(ya, w, mode="valid")
    mu_b = convolve2d(yb, w, mode="valid")
    var_a = convolve2d(ya * ya, w, mode="valid") - mu_a * mu_a
    var_b = convolve2d(yb * yb, w, mode="valid") - mu_b * mu_b
    cov = convolve2d(ya * yb, w, mode="valid") - mu_a * mu_b
    c1 = (k1 * peak) ** 2
    c2 = (k2 * peak) ** 2
    s = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / (
        (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2))
    return float(s.mean())


def singularity_scan(target, threshold=0.01):
    """Denominator-event counts, as {layer name: count}.

    ``target`` is a Module (every Paon layer with a recorded forward is
    scanned) or a mapping/list of raw denominator arrays.
    """
    if isinstance(target, Module):
        out = {}
        for name, m in target.named_modules():
            if isinstance(m, _DenominatorMonitor):
                out[name] = m.denominator_events(threshold)
        return out
    if isinstance(target, dict):
        items = target.items()
    else:
        items = ((str(i), q) for i, q in enumerate(target))
    counts = {}
    for name, q in items:
        counts[name] = 0 if q is None else int((np.abs(q) < threshold).sum())
    return counts


@dataclass
class SingularityLog:
    layer_names: list
    rows: list = field(default_factory=list)

    def append(self, iteration, counts):
        if len(counts) != len(self.layer_names):
            raise ValueError(f"expected {len(self.layer_names)} counts, got {len(counts)}")
        self.rows.append((iteration, list(counts)))

    def to_csv(self):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["iter"] + [f"events_{n}" for n in self.layer_names])
        for it, counts in self.rows:
            writer.writerow([it] + counts)
        return buf.getvalue()

    def total_events(self):
        return sum(sum(counts) for _, counts in self.rows)
