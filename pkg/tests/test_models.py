"""Reference architecture tests: wiring, determinism, checkpoints."""

import numpy as np
import pytest

from paonkit import ops
from paonkit.autograd import Variable
from paonkit.layers import PaLaConv, PaLaDense
from paonkit.metrics import count_layer, count_ops
from paonkit.models import (ClsNetConfig, SrNetConfig, build_cls, build_srnet,
                            load_checkpoint, model_forward, save_checkpoint)
from paonkit.nn import Conv2d, Dense, Identity, ReLU


def small_sr(**kw):
    base = dict(r_blocks=1, channels=4, family="pala", scale=2)
    base.update(kw)
    return SrNetConfig(**base)


def small_cls(**kw):
    base = dict(stage_blocks=(1, 1, 1), stage_channels=(4, 8, 8), family="classic")
    base.update(kw)
    return ClsNetConfig(**base)


# -- config validation --------------------------------------------------

@pytest.mark.parametrize("kw", [
    dict(scale=3),
    dict(family="dense"),
    dict(activation="swish"),
    dict(channels=0),
    dict(width=0),
    dict(shifter_kind="global"),
])
def test_srnet_config_rejects(kw):
    with pytest.raises(ValueError):
        small_sr(**kw)


@pytest.mark.parametrize("kw", [
    dict(stage_blocks=(2, 2)),
    dict(stage_blocks=(1, 0, 1)),
    dict(stage_channels=(16, 32)),
    dict(family="mlp"),
    dict(head="softmax"),
    dict(shifter_kind="conv"),
])
def test_cls_config_rejects(kw):
    with pytest.raises(ValueError):
        small_cls(**kw)


# -- forward shapes ------------------------------------------------------

@pytest.mark.parametrize("scale", [2, 4])
def test_srnet_output_shape(rng, scale):
    model = build_srnet(small_sr(scale=scale), seed=0)
    x = rng.uniform(-1, 1, size=(2, 3, 8, 6)).astype(np.float32)
    y = model_forward(model, x)
    assert y.value.shape == (2, 3, 8 * scale, 6 * scale)
    assert y.value.dtype == np.float32


@pytest.mark.parametrize("family,head", [("classic", "affine"), ("pala", "affine"),
                                         ("pala", "pade")])
def test_cls_output_shape(rng, family, head):
    model = build_cls(small_cls(family=family, head=head), seed=0)
    x = rng.uniform(-1, 1, size=(3, 3, 16, 16)).astype(np.float32)
    y = model_forward(model, x)
    assert y.value.shape == (3, 10)
    assert np.isfinite(y.value).all()


def test_model_forward_accepts_variable(rng):
    model = build_srnet(small_sr(), seed=0)
    x = rng.uniform(-1, 1, size=(1, 3, 8, 8)).astype(np.float32)
    ya = model_forward(model, x)
    yb = model_forward(model, Variable(x))
    np.testing.assert_array_equal(ya.value, yb.value)


# -- family wiring -------------------------------------------------------

def test_family_selects_layer_types():
    classic = build_srnet(small_sr(family="classic", activation="gelu"), seed=0)
    pala = build_srnet(small_sr(family="pala"), seed=0)
    assert isinstance(classic.blocks[0].layer1, Conv2d)
    assert isinstance(pala.blocks[0].layer1, PaLaConv)
    # head/tail convs stay plain in both families
    for m in (classic, pala):
        assert isinstance(m.head, Conv2d)
        assert isinstance(m.out_conv, Conv2d)


def test_cls_family_wiring():
    classic = build_cls(small_cls(family="classic"), seed=0)
    pala = build_cls(small_cls(family="pala"), seed=0)
    assert isinstance(classic.blocks[0].layer1, Conv2d)
    assert isinstance(classic.blocks[0].act1, ReLU)
    assert isinstance(pala.blocks[0].layer1, PaLaConv)
    assert isinstance(pala.blocks[0].act1, Identity)
    assert isinstance(classic.head, Dense)
    pade_head = build_cls(small_cls(family="pala", head="pade"), seed=0)
    assert isinstance(pade_head.head, PaLaDense)


def test_layer_count_formula():
    assert build_cls(small_cls(stage_blocks=(2, 2, 2)), seed=0).layer_count() == 14
    assert build_cls(small_cls(stage_blocks=(1, 1, 2)), seed=0).layer_count() == 10


def test_downsample_blocks_get_projection_shortcuts():
    model = build_cls(small_cls(stage_blocks=(2, 1, 1)), seed=0)
    # stage 0 keeps identity skips, stage transitions project
    assert model.blocks[0].short_conv is None
    assert model.blocks[1].short_conv is None
    assert model.blocks[2].short_conv is not None
    assert model.blocks[2].stride == 2
    assert model.blocks[3].short_conv is not None


# -- determinism ---------------------------------------------------------

def params_of(model):
    return {name: p.value.copy() for name, p in model.named_parameters()}


@pytest.mark.parametrize("build,cfg", [
    (build_srnet, small_sr(shifter_kind="kernelwise", shifter_b=3)),
    (build_cls, small_cls(family="pala")),
])
def test_same_seed_same_weights(build, cfg):
    a = params_of(build(cfg, seed=7))
    b = params_of(build(cfg, seed=7))
    assert a.keys() == b.keys()
    for name in a:
        np.testing.assert_array_equal(a[name], b[name], err_msg=name)


def test_different_seed_different_weights():
    a = params_of(build_srnet(small_sr(), seed=0))
    b = params_of(build_srnet(small_sr(), seed=1))
    assert any(not np.array_equal(a[n], b[n]) for n in a)


def test_shared_pixelshuffle_reuses_stage(rng):
    shared = build_srnet(small_sr(scale=4, shared_pixelshuffle=True), seed=0)
    solo = build_srnet(small_sr(scale=4, shared_pixelshuffle=False), seed=0)
    assert shared.up_stages[0] is shared.up_stages[1]
    assert solo.up_stages[0] is not solo.up_stages[1]
    # shared weights are yielded once, so the count drops by one stage
    c = shared.cfg.channels
    stage_params = 4 * c * c * 9 + 4 * c
    assert solo.param_count() - shared.param_count() == stage_params
    x = rng.uniform(-1, 1, size=(1, 3, 4, 4)).astype(np.float32)
    assert model_forward(shared, x).value.shape == (1, 3, 16, 16)


# -- trace vs. counter ---------------------------------------------------

def test_srnet_trace_covers_countable_layers():
    model = build_srnet(small_sr(r_blocks=2, scale=4), seed=0)
    names = [name for name, _, _ in model.trace((1, 3, 8, 8))]
    assert names == ["head", "blocks.0.layer1", "blocks.0.layer2",
                     "blocks.1.layer1", "blocks.1.layer2", "trunk_end",
                     "up_stages.0.conv", "up_stages.1.conv", "out_conv"]
    by_name = dict(model.named_modules())
    for name, layer, _ in model.trace((1, 3, 8, 8)):
        assert by_name[name] is layer


def test_srnet_count_matches_hand_formula():
    # classic family so every layer is a plain conv: macs = Cin*k^2*H*W*Cout
    cfg = small_sr(family="classic", r_blocks=1, channels=4, width=2, scale=2)
    model = build_srnet(cfg, seed=0)
    report = count_ops(model, (3, 8, 8))
    hw = 64
    expect = (3 * 9 * hw * 4          # head
              + 4 * 9 * hw * 8        # block layer1 (width 2)
              + 8 * 9 * hw * 4        # block layer2
              + 4 * 9 * hw * 4        # trunk end
              + 4 * 9 * hw * 16       # upsample conv to 4c
              + 4 * 9 * (hw * 4) * 3  # out conv after the shuffle
              )
    assert report.macs == expect
    assert report.flops == 2 * expect
    assert report.total("divisions") == 0


def test_pala_trace_counts_divisions():
    model = build_cls(small_cls(family="pala", head="pade"), seed=0)
    report = count_ops(model, (3, 16, 16))
    assert report.total("divisions") > 0
    kinds = {lc.kind for lc in report.layers if lc.name != "head"}
    assert kinds == {"paon[1/1]", "conv"}  # paon mains + conv shortcuts
    # trace shapes feed the counter consistently with a manual recount
    manual = sum(count_layer(n, l, s).macs for n, l, s in model.trace((1, 3, 16, 16)))
    assert count_ops(model, (1, 3, 16, 16)).macs == manual


def test_cls_trace_shapes_follow_strides():
    model = build_cls(small_cls(), seed=0)
    shapes = {name: s for name, _, s in model.trace((1, 3, 16, 16))}
    assert shapes["stem"] == (1, 3, 16, 16)
    assert shapes["blocks.0.layer1"] == (1, 4, 16, 16)
    assert shapes["blocks.1.layer1"] == (1, 4, 16, 16)
    assert shapes["blocks.1.layer2"] == (1, 8, 8, 8)   # after the stride-2 layer
    assert shapes["blocks.2.layer2"] == (1, 8, 4, 4)
    assert shapes["head"] == (1, 8)


# -- batch norm state and modes ------------------------------------------

def test_eval_mode_freezes_running_stats(rng):
    model = build_cls(small_cls(), seed=0)
    x = rng.uniform(-1, 1, size=(4, 3, 16, 16)).astype(np.float32)
    model_forward(model, x)
    after_train = model.blocks[0].bn1.running_mean.copy()
    assert not np.allclose(after_train, 0.0)

    model.eval()
    assert all(not m.training for m in model.modules())
    y1 = model_forward(model, x).value
    np.testing.assert_array_equal(model.blocks[0].bn1.running_mean, after_train)
    y2 = model_forward(model, x).value
    np.testing.assert_array_equal(y1, y2)


def test_smoothed_paon_denominators_stay_above_one(rng):
    model = build_srnet(small_sr(degree=(1, 1), smoothed=True, r_blocks=2), seed=3)
    x = rng.uniform(-1, 1, size=(2, 3, 12, 12)).astype(np.float32)
    model_forward(model, x)
    mins = [m.denominator_min() for m in model.modules() if isinstance(m, PaLaConv)]
    assert len(mins) == 4
    assert all(v is not None and v >= 1.0 for v in mins)


# -- checkpoints ---------------------------------------------------------

def test_checkpoint_round_trip(tmp_path, rng):
    cfg = small_cls(family="pala", shifter_kind="kernelwise", shifter_b=2)
    src = build_cls(cfg, seed=0)
    x = rng.uniform(-1, 1, size=(2, 3, 16, 16)).astype(np.float32)
    model_forward(src, x)  # warm the bn running buffers
    save_checkpoint(src, tmp_path / "ckpt", manifest={"family": "pala"})

    dst = build_cls(cfg, seed=99)
    assert any(not np.array_equal(a.value, b.value)
               for (_, a), (_, b) in zip(src.named_parameters(), dst.named_parameters()))
    load_checkpoint(dst, tmp_path / "ckpt")
    for (na, a), (nb, b) in zip(src.named_parameters(), dst.named_parameters()):
        assert na == nb
        np.testing.assert_array_equal(a.value, b.value, err_msg=na)
    for (na, a), (nb, b) in zip(src.named_buffers(), dst.named_buffers()):
        np.testing.assert_array_equal(a, b, err_msg=na)

    src.eval()
    dst.eval()
    np.testing.assert_array_equal(model_forward(src, x).value,
                                  model_forward(dst, x).value)
    manifest = (tmp_path / "ckpt" / "manifest.txt").read_text()
    assert "family=pala" in manifest
    assert "param:stem.a0=" in manifest
    assert "buffer:stem_bn.running_mean=4" in manifest


def test_checkpoint_shape_mismatch_raises(tmp_path):
    save_checkpoint(build_cls(small_cls(stage_channels=(4, 8, 8)), seed=0), tmp_path / "c")
    wider = build_cls(small_cls(stage_channels=(8, 8, 8)), seed=0)
    with pytest.raises(ValueError, match="shape"):
        load_checkpoint(wider, tmp_path / "c")
