"""Shifter neutrality, offset bounds, and gradient flow."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from paonkit import ops
from paonkit.autograd import Tape, Variable, backward, grad_check
from paonkit.shifter import (
    ElementWiseShifter,
    KernelWiseShifter,
    ShifterConfig,
    elementwise_offsets,
    kernelwise_shift,
    limit_offsets,
    make_shifter,
    offset_limit,
)


def test_config_validation():
    with pytest.raises(ValueError):
        ShifterConfig("diagonal", b=1, channels=3)
    with pytest.raises(ValueError):
        ShifterConfig("elementwise", b=0, channels=3, k_s=2)
    with pytest.raises(ValueError):
        ShifterConfig("kernelwise", b=1, channels=0)
    assert ShifterConfig("kernelwise", b=-1, channels=3).active is False
    assert ShifterConfig("kernelwise", b=0, channels=3).active is True
    assert ShifterConfig("elementwise", b=0, channels=3).active is True


def test_offset_limit_rule():
    assert offset_limit(3, 8, 8) == 3.0
    assert offset_limit(0, 8, 16) == 4.0  # max(h,w)/4
    assert offset_limit(-2, 100, 8) == 25.0


def test_limit_offsets_squashes_and_passes_small_values():
    # raw = 3m is deep in the squash but below tanh's float saturation,
    # so the bound is still strict; at raw = 1000 tanh rounds to 1.0
    # exactly and the offset sits on the boundary
    raw = Variable(np.array([15.0, -15.0, 1e-3, 1000.0]))
    out = limit_offsets(raw, 5.0).value
    assert 4.97 < out[0] < 5.0
    assert -5.0 < out[1] < -4.97
    # tanh(x) ~ x for small x: m*tanh(raw/m) ~ raw
    assert out[2] == pytest.approx(1e-3, rel=1e-6)
    assert abs(out[3]) <= 5.0
    with pytest.raises(ValueError):
        limit_offsets(raw, 0.0)


@pytest.mark.parametrize("kind,b", [("kernelwise", 3), ("kernelwise", 0), ("elementwise", 0), ("elementwise", 2)])
def test_zero_init_shifter_is_identity(kind, b, rng):
    cfg = ShifterConfig(kind, b=b, channels=3, k_s=3 if kind == "elementwise" else 1)
    shifter = make_shifter(cfg, rng)
    x = Variable(rng.standard_normal((2, 3, 8, 8)).astype(np.float32))
    out = shifter(x)
    assert (out.value == x.value).all()


def test_deactivated_kernelwise_is_passthrough(rng):
    cfg = ShifterConfig("kernelwise", b=-1, channels=3)
    shifter = make_shifter(cfg, rng)
    x = Variable(rng.standard_normal((1, 3, 4, 4)))
    assert shifter(x) is x
    assert list(shifter.parameters()) == []


def test_make_shifter_none():
    assert make_shifter(None, np.random.default_rng(0)) is None


def test_kernelwise_b_positive_bounds(rng):
    cfg = ShifterConfig("kernelwise", b=2, channels=4)
    shifter = KernelWiseShifter(cfg, rng)
    shifter.raw.value[:] = rng.uniform(-6.0, 6.0, size=(4, 2))
    limited = limit_offsets(shifter.raw, 2.0).value
    assert (np.abs(limited) < 2.0).all()


def test_kernelwise_b_zero_offsets_bounded_by_quarter_extent(rng):
    cfg = ShifterConfig("kernelwise", b=0, channels=3)
    shifter = KernelWiseShifter(cfg, rng)
    shifter.head.weight.value[:] = rng.uniform(-2, 2, size=shifter.head.weight.value.shape)
    shifter.head.bias.value[:] = rng.uniform(-2, 2, size=6)
    x = Variable(rng.standard_normal((2, 3, 8, 12)).astype(np.float32))
    pooled = ops.spatial_mean(x)
    raw = shifter.head(pooled)
    m = offset_limit(0, 8, 12)
    limited = limit_offsets(raw, m).value
    assert (np.abs(limited) < m).all()
    assert m == 3.0


def test_elementwise_offsets_bounded(rng):
    cfg = ShifterConfig("elementwise", b=0, channels=2, k_s=3)
    shifter = ElementWiseShifter(cfg, rng)
    shifter.head_weight.value[:] = rng.uniform(-0.5, 0.5, size=shifter.head_weight.value.shape)
    shifter.head_bias.value[:] = rng.uniform(-1, 1, size=4)
    x = Variable(rng.standard_normal((1, 2, 8, 8)).astype(np.float32))
    off = elementwise_offsets(x, shifter).value
    assert off.shape == (1, 4, 8, 8)
    assert (np.abs(off) < 2.0).all()  # m = 8/4


def test_shift_moves_content_in_offset_direction():
    # dx = +1 samples from x+1: output column j shows input column j+1
    x = np.zeros((1, 1, 4, 4), dtype=np.float64)
    x[0, 0, :, 2] = 1.0
    cfg = ShifterConfig("kernelwise", b=4, channels=1)
    shifter = KernelWiseShifter(cfg, np.random.default_rng(0), dtype=np.float64)
    raw = 4.0 * np.arctanh(1.0 / 4.0)  # undo the tanh squash exactly
    shifter.raw.value[:] = [[raw, 0.0]]
    out = kernelwise_shift(Variable(x), shifter).value
    np.testing.assert_allclose(out[0, 0, :, 1], 1.0, atol=1e-12)
    np.testing.assert_allclose(out[0, 0, :, 2], 0.0, atol=1e-12)


def test_kernelwise_gradients(rng):
    cfg = ShifterConfig("kernelwise", b=2, channels=2)
    shifter = KernelWiseShifter(cfg, rng, dtype=np.float64)
    shifter.raw.value[:] = rng.uniform(0.2, 0.6, size=(2, 2))
    x = Variable(rng.standard_normal((1, 2, 6, 6)), requires_grad=True)

    def f():
        return ops.mean_all(ops.tanh(shifter(x)))

    report = grad_check(f, [shifter.raw, x], tol_rel=1e-5, n_coords=40)
    assert report.passed, report


def test_elementwise_gradients(rng):
    cfg = ShifterConfig("elementwise", b=1, channels=2, k_s=1)
    shifter = ElementWiseShifter(cfg, rng, dtype=np.float64)
    shifter.head_weight.value[:] = 0.2 * rng.standard_normal(shifter.head_weight.value.shape)
    shifter.head_bias.value[:] = 0.1 * rng.standard_normal(4)
    x = Variable(rng.standard_normal((1, 2, 5, 5)), requires_grad=True)

    def f():
        return ops.mean_all(ops.tanh(shifter(x)))

    report = grad_check(f, [shifter.head_weight, shifter.head_bias, x],
                        tol_rel=1e-4, n_coords=40)
    assert report.passed, report


@settings(max_examples=50, deadline=None)
@given(
    seed=st.integers(0, 2 ** 32 - 1),
    kind=st.sampled_from(["kernelwise", "elementwise"]),
    b=st.integers(0, 4),
    channels=st.integers(1, 4),
    h=st.integers(4, 12),
    w=st.integers(4, 12),
)
def test_neutrality_and_bound_property(seed, kind, b, channels, h, w):
    srng = np.random.default_rng(seed)
    cfg = ShifterConfig(kind, b=b, channels=channels, k_s=1)
    shifter = make_shifter(cfg, srng)
    x = Variable(np.clip(srng.standard_normal((1, channels, h, w)), -3, 3).astype(np.float32))
    # fresh shifter: exact neutrality
    assert np.abs(shifter(x).value - x.value).max() <= 1e-7
    # perturbed shifter: offsets stay strictly inside (-m, m). The
    # perturbation scale keeps raw head outputs below tanh's float32
    # saturation point (~9m), where the squash lands exactly on the
    # boundary instead of inside it.
    m = offset_limit(b, h, w)
    for p in shifter.parameters():
        p.value += srng.uniform(-0.4, 0.4, size=p.value.shape).astype(p.value.dtype)
    if kind == "elementwise":
        off = shifter.offsets(x).value
        assert (np.abs(off) < m).all()
    elif b > 0:
        off = limit_offsets(shifter.raw, m).value
        assert (np.abs(off) < m).all()
    else:
        pooled = ops.spatial_mean(x)
        off = limit_offsets(shifter.head(pooled), m).value
        assert (np.abs(off) < m).all()
