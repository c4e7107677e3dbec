"""Serialization, image codecs, scalar reference curve, dataset generators."""

import numpy as np
import pytest

from paonkit.data_io import (FormatError, SrPair, bicubic_downsample, from_u8,
                             gen_shapes_cls, gen_sr_textures, gen_teacher_1d,
                             load_cifar10_bin, load_ppm, ppm_io, read_tnsr,
                             save_ppm, smoothed_paon_scalar, tnsr_io, to_u8,
                             write_tnsr)


# -- tnsr container -----------------------------------------------------

@pytest.mark.parametrize("dtype", [np.float32, np.float64])
@pytest.mark.parametrize("shape", [(4,), (2, 3), (2, 3, 4, 5)])
def test_tnsr_round_trip(tmp_path, rng, dtype, shape):
    arr = rng.normal(size=shape).astype(dtype)
    path = tmp_path / "t.tnsr"
    write_tnsr(path, arr)
    back = read_tnsr(path)
    assert back.dtype == dtype
    assert back.shape == shape
    np.testing.assert_array_equal(back, arr)


def test_tnsr_io_dispatch(tmp_path, rng):
    arr = rng.normal(size=(3, 3)).astype(np.float64)
    path = tmp_path / "t.tnsr"
    assert tnsr_io(path, arr) is None
    np.testing.assert_array_equal(tnsr_io(path), arr)


def test_tnsr_write_rejects(tmp_path):
    with pytest.raises(FormatError, match="rank-0"):
        write_tnsr(tmp_path / "x", np.float64(3.0))
    with pytest.raises(FormatError, match="dtype"):
        write_tnsr(tmp_path / "x", np.arange(4))


def test_tnsr_read_rejects_malformed(tmp_path, rng):
    path = tmp_path / "t.tnsr"
    write_tnsr(path, rng.normal(size=(2, 2)))
    good = path.read_bytes()

    def expect_error(data, match):
        bad = tmp_path / "bad.tnsr"
        bad.write_bytes(data)
        with pytest.raises(FormatError, match=match):
            read_tnsr(bad)

    expect_error(b"NOPE" + good[4:], "magic")
    expect_error(good[:4] + bytes([9]) + good[5:], "version")
    expect_error(good[:5] + bytes([7]) + good[6:], "dtype code")
    expect_error(good[:9], "truncated")
    expect_error(good[:-8], "payload")
    expect_error(good + b"\x00" * 8, "payload")


# -- 8-bit codec ----------------------------------------------------------

def test_u8_round_trip_covers_all_codes():
    codes = np.arange(256, dtype=np.uint8)
    np.testing.assert_array_equal(to_u8(from_u8(codes)), codes)


def test_to_u8_rounding_and_clamping():
    vals = np.array([-1.0, 1.0, -1.5, 1.5, 0.0])
    np.testing.assert_array_equal(to_u8(vals), [0, 255, 0, 255, 128])
    # half-away rounding at the first quantization boundary
    assert to_u8(np.array([1.0 / 255.0]))[0] == 128


# -- ppm ----------------------------------------------------------------

def test_ppm_round_trip(tmp_path, rng):
    img = rng.uniform(-1, 1, size=(3, 5, 7)).astype(np.float32)
    path = tmp_path / "img.ppm"
    save_ppm(path, img)
    back = load_ppm(path)
    # exact at the 8-bit lattice
    np.testing.assert_array_equal(to_u8(back), to_u8(img))
    np.testing.assert_array_equal(back, from_u8(to_u8(img)))
    assert ppm_io(path).shape == (3, 5, 7)


def test_ppm_header_comments_are_skipped(tmp_path):
    pixels = bytes(range(12))
    path = tmp_path / "c.ppm"
    path.write_bytes(b"P6\n# a comment\n2 # inline after tokens is data\n"
                     b"2\n# another\n255\n" + pixels)
    img = load_ppm(path)
    assert img.shape == (3, 2, 2)
    np.testing.assert_array_equal(to_u8(img).transpose(1, 2, 0).ravel(), list(range(12)))


def test_ppm_rejects(tmp_path):
    with pytest.raises(ValueError, match=r"\(3,H,W\)"):
        save_ppm(tmp_path / "x.ppm", np.zeros((1, 4, 4)))
    bad = tmp_path / "bad.ppm"
    bad.write_bytes(b"P5\n2 2\n255\n" + bytes(12))
    with pytest.raises(FormatError, match="P6"):
        load_ppm(bad)
    bad.write_bytes(b"P6\n2 2\n65535\n" + bytes(24))
    with pytest.raises(FormatError, match="maxval"):
        load_ppm(bad)
    bad.write_bytes(b"P6\n2 2\n255\n" + bytes(5))
    with pytest.raises(FormatError, match="payload"):
        load_ppm(bad)
    bad.write_bytes(b"P6\n2 ")
    with pytest.raises(FormatError, match="truncated"):
        load_ppm(bad)


# -- scalar reference curve ------------------------------------------------

def test_scalar_rational_anchor():
    # x/(1+x) twinned with x/1: at x=1 -> (2*1 + 1*1... ) = 2/5
    assert smoothed_paon_scalar(1.0, (0.0, 1.0), (1.0,)) == pytest.approx(0.4, abs=1e-15)


def test_scalar_identity_denominator_anchor():
    assert smoothed_paon_scalar(2.0, (0.0, 1.0), (0.0,)) == pytest.approx(1.0, abs=1e-15)


def test_scalar_degenerates_to_polynomial():
    x = np.linspace(-2, 2, 11)
    got = smoothed_paon_scalar(x, (1.0, 2.0, 3.0), ())
    np.testing.assert_allclose(got, 1 + 2 * x + 3 * x * x, rtol=1e-15)


def test_scalar_constant_numerator():
    # K=0: the lower numerator is the zero polynomial
    x = 0.5
    q1 = 1 + 2.0 * x
    expect = q1 * 3.0 / (q1 * q1 + 1.0)
    assert smoothed_paon_scalar(x, (3.0,), (2.0,)) == pytest.approx(expect, rel=1e-15)


def test_teacher_grid():
    x, y = gen_teacher_1d(5, 0, (0.0, 1.0), (1.0,), interval=(-2.0, 2.0))
    np.testing.assert_allclose(x, [-2, -1, 0, 1, 2], atol=0)
    np.testing.assert_allclose(y, smoothed_paon_scalar(x, (0.0, 1.0), (1.0,)), atol=0)


# -- bicubic decimation ------------------------------------------------------

def test_bicubic_preserves_constants():
    img = np.full((3, 8, 8), 0.37)
    out = bicubic_downsample(img, 2)
    assert out.shape == (3, 4, 4)
    np.testing.assert_allclose(out, 0.37, rtol=1e-14)


def test_bicubic_reproduces_linear_ramps_interior():
    w = 16
    ramp = np.tile(np.arange(w, dtype=np.float64), (w, 1))[None]
    out = bicubic_downsample(ramp, 2)
    # Catmull-Rom is exact on linear signals wherever no tap clamps
    expect = (np.arange(8) + 0.5) * 2 - 0.5
    np.testing.assert_allclose(out[0, 3, 1:-1], expect[1:-1], rtol=1e-13)


def test_bicubic_scale_one_copies():
    img = np.zeros((1, 4, 4))
    out = bicubic_downsample(img, 1)
    assert out is not img
    np.testing.assert_array_equal(out, img)
    with pytest.raises(ValueError, match="divisible"):
        bicubic_downsample(np.zeros((3, 9, 8)), 2)


def test_sr_pair_validates_scale():
    with pytest.raises(ValueError, match="not 2x"):
        SrPair(lr=np.zeros((3, 4, 4)), hr=np.zeros((3, 8, 7)), scale=2)


# -- texture generator ----------------------------------------------------

def test_textures_deterministic_and_well_formed():
    a = gen_sr_textures(3, 16, 2, seed=5)
    b = gen_sr_textures(3, 16, 2, seed=5)
    assert len(a) == 3
    for pa, pb in zip(a, b):
        np.testing.assert_array_equal(pa.hr, pb.hr)
        np.testing.assert_array_equal(pa.lr, pb.lr)
        assert pa.hr.shape == (3, 16, 16) and pa.lr.shape == (3, 8, 8)
        assert pa.hr.dtype == np.float32 and pa.lr.dtype == np.float32
        assert pa.hr.min() >= -1.0 and pa.hr.max() <= 1.0
        power = float((pa.hr.astype(np.float64) ** 2).mean())
        assert 0.05 <= power <= 1.0
    c = gen_sr_textures(1, 16, 2, seed=6)
    assert not np.array_equal(a[0].hr, c[0].hr)
    with pytest.raises(ValueError, match="divisible"):
        gen_sr_textures(1, 15, 2, seed=0)


def test_texture_lr_is_decimated_hr():
    pair = gen_sr_textures(1, 32, 4, seed=9)[0]
    expect = np.clip(bicubic_downsample(pair.hr.astype(np.float64), 4), -1, 1)
    np.testing.assert_array_equal(pair.lr, expect.astype(np.float32))


# -- shapes generator --------------------------------------------------------

def test_shapes_deterministic_and_well_formed():
    xa, ya = gen_shapes_cls(50, seed=3)
    xb, yb = gen_shapes_cls(50, seed=3)
    np.testing.assert_array_equal(xa, xb)
    np.testing.assert_array_equal(ya, yb)
    assert xa.shape == (50, 3, 32, 32) and xa.dtype == np.float32
    assert ya.shape == (50,) and ya.dtype == np.int64
    assert xa.min() >= -1.0 and xa.max() <= 1.0
    assert set(np.unique(ya)) <= set(range(10))


def test_shapes_cover_every_class():
    _, y = gen_shapes_cls(300, seed=0)
    assert set(np.unique(y)) == set(range(10))


def test_shapes_classes_are_visually_distinct():
    x, y = gen_shapes_cls(400, seed=1)
    # foreground-on-background: class means must differ between a disk
    # and a cross (geometry changes the lit-pixel mass)
    m0 = x[y == 0].mean()
    m4 = x[y == 4].mean()
    assert abs(m0 - m4) > 0.01


# -- cifar-10 binary reader ---------------------------------------------------

def fake_cifar_dir(tmp_path, per_batch=2):
    rng = np.random.default_rng(0)
    truth = {}
    for name in [f"data_batch_{i}.bin" for i in range(1, 6)] + ["test_batch.bin"]:
        labels = rng.integers(0, 10, size=per_batch, dtype=np.uint8)
        pixels = rng.integers(0, 256, size=(per_batch, 3072), dtype=np.uint8)
        rows = np.concatenate([labels[:, None], pixels], axis=1)
        (tmp_path / name).write_bytes(rows.tobytes())
        truth[name] = (labels, pixels)
    return truth


def test_cifar_loader_reads_batches(tmp_path):
    truth = fake_cifar_dir(tmp_path)
    x, y = load_cifar10_bin(tmp_path, "train")
    assert x.shape == (10, 3, 32, 32) and y.shape == (10,)
    assert x.dtype == np.float32 and y.dtype == np.int64
    first_labels, first_pixels = truth["data_batch_1.bin"]
    np.testing.assert_array_equal(y[:2], first_labels)
    np.testing.assert_array_equal(x[0], from_u8(first_pixels[0].reshape(3, 32, 32)))

    xt, yt = load_cifar10_bin(tmp_path, "test")
    np.testing.assert_array_equal(yt, truth["test_batch.bin"][0])
    assert xt.shape == (2, 3, 32, 32)


def test_cifar_loader_limit_stops_early(tmp_path):
    fake_cifar_dir(tmp_path)
    x, y = load_cifar10_bin(tmp_path, "train", limit=3)
    assert x.shape[0] == 3 and y.shape[0] == 3


def test_cifar_loader_rejects(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_cifar10_bin(tmp_path, "train")
    fake_cifar_dir(tmp_path)
    (tmp_path / "data_batch_2.bin").write_bytes(b"\x00" * 100)
    with pytest.raises(FormatError, match="3073"):
        load_cifar10_bin(tmp_path, "train")
