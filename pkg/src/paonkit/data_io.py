"""Serialization, image I/O, and self-contained dataset generators.

The TNSR container is deliberately tiny: magic, version, dtype code,
rank, dims as little-endian u32, then the raw little-endian row-major
payload. Round trips are bit-exact, which checkpointing and the
manifest-replay guarantee both lean on.

Images travel as float CHW tensors in [-1, 1]; 8-bit codecs map
u8 -> x/127.5 - 1 and back with round-half-away-from-zero.
"""

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

_TNSR_MAGIC = b"TNSR"
_TNSR_VERSION = 1
_DTYPE_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
_CODE_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


class FormatError(ValueError):
    """Raised for malformed TNSR or PPM payloads."""


def write_tnsr(path, tensor):
    tensor = np.asarray(tensor)
    if tensor.ndim == 0:
        raise FormatError("rank-0 tensors are not representable")
    code = _DTYPE_CODES.get(tensor.dtype)
    if code is None:
        raise FormatError(f"unsupported dtype {tensor.dtype}; use float32 or float64")
    header = _TNSR_MAGIC + struct.pack("<BBBB", _TNSR_VERSION, code, tensor.ndim, 0)
    dims = struct.pack(f"<{tensor.ndim}I", *tensor.shape)
    payload = np.ascontiguousarray(tensor).astype(_CODE_DTYPES[code], copy=False).tobytes()
    Path(path).write_bytes(header + dims + payload)


def read_tnsr(path):
    raw = Path(path).read_bytes()
    if len(raw) < 8 or raw[:4] != _TNSR_MAGIC:
        raise FormatError(f"{path}: not a TNSR file (bad magic)")
    version, code, rank, _reserved = struct.unpack("<BBBB", raw[4:8])
    if version != _TNSR_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    if code not in _CODE_DTYPES:
        raise FormatError(f"{path}: unknown dtype code {code}")
    if rank < 1:
        raise FormatError(f"{path}: rank must be >= 1")
    dims_end = 8 + 4 * rank
    if len(raw) < dims_end:
        raise FormatError(f"{path}: truncated header")
    dims = struct.unpack(f"<{rank}I", raw[8:dims_end])
    dtype = _CODE_DTYPES[code]
    expected = int(np.prod(dims)) * dtype.itemsize
    payload = raw[dims_end:]
    if len(payload) != expected:
        raise FormatError(f"{path}: payload is {len(payload)} bytes, expected {expected}")
    arr = np.frombuffer(payload, dtype=dtype).reshape(dims)
    return arr.astype(dtype.newbyteorder("="), copy=True)


def tnsr_io(path, tensor=None):
    """Read when tensor is None, otherwise write."""
    if tensor is None:
        return read_tnsr(path)
    write_tnsr(path, tensor)
    return None


def to_u8(img):
    """[-1,1] float -> u8 with round half away from zero, clamped."""
    v = (np.asarray(img) + 1.0) * 127.5
    return np.clip(np.floor(v + 0.5), 0, 255).astype(np.uint8)


def from_u8(img):
    return img.astype(np.float32) / 127.5 - 1.0


def save_ppm(path, image):
    """Write a (3,H,W) float image in [-1,1] as binary P6, maxval 255."""
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[0] != 3:
        raise ValueError(f"expected (3,H,W) image, got {image.shape}")
    _, h, w = image.shape
    pixels = to_u8(image).transpose(1, 2, 0)
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(pixels.tobytes())


def load_ppm(path):
    raw = Path(path).read_bytes()
    if raw[:2] != b"P6":
        raise FormatError(f"{path}: not a binary P6 file")
    # Header: three whitespace-separated tokens after the magic, with
    # optional '#' comment lines, then a single whitespace byte.
    pos = 2
    tokens = []
    while len(tokens) < 3:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if pos < len(raw) and raw[pos:pos + 1] == b"#":
            while pos < len(raw) and raw[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError(f"{path}: truncated header")
        tokens.append(raw[start:pos])
    pos += 1
    w, h, maxval = (int(t) for t in tokens)
    if maxval != 255:
        raise FormatError(f"{path}: maxval must be 255, got {maxval}")
    expected = w * h * 3
    payload = raw[pos:pos + expected]
    if len(payload) != expected:
        raise FormatError(f"{path}: payload is {len(payload)} bytes, expected {expected}")
    pixels = np.frombuffer(payload, dtype=np.uint8).reshape(h, w, 3)
    return from_u8(pixels.transpose(2, 0, 1))


def ppm_io(path, image=None):
    """Read when image is None, otherwise write."""
    if image is None:
        return load_ppm(path)
    save_ppm(path, image)
    return None


def smoothed_paon_scalar(x, a_coeffs, b_coeffs):
    """Closed-form scalar smoothed Paon of degree [K/L].

    a_coeffs = (a0, a1, ..., aK); b_coeffs = (b1, ..., bL). The
    lower-degree polynomials truncate the same coefficients and Q_0
    is the constant 1; with L = 0 the result is the plain polynomial.
    """
    x = np.asarray(x, dtype=np.float64)
    a = list(a_coeffs)
    b = list(b_coeffs)
    K = len(a) - 1
    L = len(b)
    polyval = np.polynomial.polynomial.polyval
    pk = polyval(x, a)
    if L == 0:
        return pk
    pkm1 = polyval(x, a[:-1]) if K >= 1 else np.zeros_like(x)
    ql = polyval(x, [1.0] + b)
    qlm1 = polyval(x, [1.0] + b[:-1])
    return (ql * pk + qlm1 * pkm1) / (ql * ql + qlm1 * qlm1)


def gen_teacher_1d(n, seed, a_coeffs, b_coeffs, interval=(-3.0, 3.0)):
    """Uniform grid over the interval and the teacher's response on it."""
    lo, hi = interval
    x = np.linspace(lo, hi, n)
    y = smoothed_paon_scalar(x, a_coeffs, b_coeffs)
    return x, y


def _cubic_kernel(d, a=-0.5):
    """Keys cubic interpolation kernel (a = -0.5 is Catmull-Rom)."""
    d = np.abs(d)
    d2 = d * d
    d3 = d2 * d
    near = (a + 2) * d3 - (a + 3) * d2 + 1
    far = a * d3 - 5 * a * d2 + 8 * a * d - 4 * a
    return np.where(d <= 1, near, np.where(d < 2, far, 0.0))


def _bicubic_axis(img, scale, axis):
    """Downsample one spatial axis by an integer factor, clamped edges."""
    n = img.shape[axis]
    out_n = n // scale
    dst = np.arange(out_n)
    src = (dst + 0.5) * scale - 0.5
    base = np.floor(src).astype(np.int64)
    out = np.zeros(img.shape[:axis] + (out_n,) + img.shape[axis + 1:], dtype=img.dtype)
    for tap in range(-1, 3):
        idx = np.clip(base + tap, 0, n - 1)
        w = _cubic_kernel(src - (base + tap))
        gathered = np.take(img, idx, axis=axis)
        shape = [1] * img.ndim
        shape[axis] = out_n
        out = out + gathered * w.reshape(shape).astype(img.dtype)
    return out


def bicubic_downsample(img, scale):
    """Catmull-Rom bicubic decimation of a (...,H,W) image by an integer factor."""
    if scale < 1 or img.shape[-1] % scale or img.shape[-2] % scale:
        raise ValueError(f"spatial dims {img.shape[-2:]} not divisible by scale {scale}")
    if scale == 1:
        return img.copy()
    out = _bicubic_axis(img, scale, img.ndim - 2)
    return _bicubic_axis(out, scale, img.ndim - 1)


@dataclass
class SrPair:
    lr: np.ndarray
    hr: np.ndarray
    scale: int

    def __post_init__(self):
        if self.hr.shape[-2:] != (self.lr.shape[-2] * self.scale, self.lr.shape[-1] * self.scale):
            raise ValueError(f"hr {self.hr.shape} is not {self.scale}x the lr {self.lr.shape}")


def _fill_triangle(img, pts, color):
    """Composite a filled triangle onto a (3,H,W) image, vectorized."""
    _, h, w = img.shape
    ys, xs = np.mgrid[0:h, 0:w]

    def edge(p, q):
        return (q[0] - p[0]) * (ys - p[1]) - (q[1] - p[1]) * (xs - p[0])

    e0 = edge(pts[0], pts[1])
    e1 = edge(pts[1], pts[2])
    e2 = edge(pts[2], pts[0])
    inside = ((e0 >= 0) & (e1 >= 0) & (e2 >= 0)) | ((e0 <= 0) & (e1 <= 0) & (e2 <= 0))
    for c in range(3):
        img[c][inside] = 0.3 * img[c][inside] + 0.7 * color[c]


def gen_sr_textures(count, size, scale, seed):
    """Procedural texture pairs: oriented sinusoid mixtures plus polygons.

    High-frequency content is intentional; the bicubic decimation then
    aliases, which is exactly the regime a super-resolver must handle.
    HR mean power lands in the [0.05, 1.0] band.
    """
    if size % scale:
        raise ValueError(f"size {size} not divisible by scale {scale}")
    rng = np.random.default_rng(seed)
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64)
    pairs = []
    for _ in range(count):
        img = np.zeros((3, size, size))
        for _ in range(rng.integers(2, 5)):
            theta = rng.uniform(0, np.pi)
            freq = rng.uniform(0.05, 0.45)
            phase = rng.uniform(0, 2 * np.pi)
            wave = np.sin(2 * np.pi * freq * (xs * np.cos(theta) + ys * np.sin(theta)) + phase)
            amp = rng.uniform(0.2, 0.6, size=3)
            img += amp[:, None, None] * wave
        for _ in range(rng.integers(1, 4)):
            center = rng.uniform(0.2 * size, 0.8 * size, size=2)
            pts = center + rng.uniform(-0.35 * size, 0.35 * size, size=(3, 2))
            _fill_triangle(img, pts, rng.uniform(-0.9, 0.9, size=3))
        power = float((img * img).mean())
        img *= np.sqrt(0.25 / max(power, 1e-9))
        hr = np.clip(img, -1.0, 1.0).astype(np.float32)
        lr = np.clip(bicubic_downsample(hr.astype(np.float64), scale), -1.0, 1.0).astype(np.float32)
        pairs.append(SrPair(lr=lr, hr=hr, scale=scale))
    return pairs


def load_cifar10_bin(directory, split, limit=None):
    """Load CIFAR-10 binary batches: 1 label byte + 3072 image bytes."""
    directory = Path(directory)
    names = [f"data_batch_{i}.bin" for i in range(1, 6)] if split == "train" else ["test_batch.bin"]
    images, labels = [], []
    remaining = limit
    for name in names:
        path = directory / name
        if not path.exists():
            raise FileNotFoundError(f"missing CIFAR-10 batch {path}")
        raw = path.read_bytes()
        if len(raw) % 3073:
            raise FormatError(f"{path}: size {len(raw)} is not a multiple of 3073")
        arr = np.frombuffer(raw, dtype=np.uint8).reshape(-1, 3073)
        if remaining is not None:
            arr = arr[:remaining]
        labels.append(arr[:, 0].astype(np.int64))
        images.append(from_u8(arr[:, 1:].reshape(-1, 3, 32, 32)))
        if remaining is not None:
            remaining -= arr.shape[0]
            if remaining <= 0:
                break
    return np.concatenate(images), np.concatenate(labels)


def gen_shapes_cls(count, seed, size=32):
    """Synthetic 10-class shape dataset standing in for CIFAR-scale runs.

    Class = shape in {disk, ring, square, triangle, cross} x texture in
    {solid, striped}. Position, extent, color, and background noise are
    randomized per sample, so classes are separated geometrically.
    Returns float32 images (N,3,size,size) in [-1,1] and int64 labels.
    """
    rng = np.random.default_rng(seed)
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64)
    images = np.empty((count, 3, size, size), dtype=np.float32)
    labels = rng.integers(0, 10, size=count).astype(np.int64)
    for i in range(count):
        shape_id, striped = labels[i] % 5, labels[i] // 5
        cx, cy = rng.uniform(size * 0.35, size * 0.65, size=2)
        r = rng.uniform(size * 0.18, size * 0.34)
        dx, dy = xs - cx, ys - cy
        if shape_id == 0:
            mask = dx * dx + dy * dy <= r * r
        elif shape_id == 1:
            rho = dx * dx + dy * dy
            mask = (rho <= r * r) & (rho >= (0.55 * r) ** 2)
        elif shape_id == 2:
            mask = (np.abs(dx) <= r * 0.8) & (np.abs(dy) <= r * 0.8)
        elif shape_id == 3:
            mask = (dy >= -r * 0.8) & (dy <= r * 0.8) & (np.abs(dx) * 1.6 <= dy + r * 0.8)
        else:
            mask = (np.abs(dx) <= r * 0.25) | (np.abs(dy) <= r * 0.25)
            mask &= (np.abs(dx) <= r) & (np.abs(dy) <= r)
        fg = np.where(mask, 1.0, 0.0)
        if striped:
            stripes = 0.5 + 0.5 * np.sign(np.sin(xs * np.pi / 2.0))
            fg = fg * (0.35 + 0.65 * stripes)
        color = rng.uniform(0.45, 1.0, size=3)
        background = rng.uniform(-0.75, -0.45) + rng.normal(0.0, 0.08, size=(3, size, size))
        img = background + (color[:, None, None] * 1.6) * fg[None, :, :]
        images[i] = np.clip(img, -1.0, 1.0).astype(np.float32)
    return images, labels
