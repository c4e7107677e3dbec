"""Pure-numpy implementations of the hot kernels.

Convolution is im2col + one BLAS matmul; the im2col column axis is laid
out (channel, kernel-row, kernel-col) so the reduction axis order matches
the compiled backend's loop nest. Bilinear gathers/scatters use flat
fancy indexing with np.bincount for the deterministic scatter-add.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

NAME = "numpy"


def _out_size(n, k, stride):
    return (n - k) // stride + 1


def conv2d_valid(x, w, stride=1):
    """Valid cross-correlation of x (N,Ci,H,W) with w (Co,Ci,k,k)."""
    n, ci, h, wd = x.shape
    co, ci_w, k, _ = w.shape
    ho, wo = _out_size(h, k, stride), _out_size(wd, k, stride)
    win = sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5))
    cols = cols.reshape(n * ho * wo, ci * k * k)
    out = cols @ w.reshape(co, ci * k * k).T
    return np.ascontiguousarray(out.reshape(n, ho, wo, co).transpose(0, 3, 1, 2))


def conv2d_valid_grad_weight(x, grad_y, k, stride=1):
    """Gradient of conv2d_valid w.r.t. the kernel; returns (Co,Ci,k,k).

    k is the true kernel size; shapes alone can't recover it once
    stride > 1 discards trailing rows.
    """
    n, ci, h, wd = x.shape
    _, co, ho, wo = grad_y.shape
    win = sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5))
    cols = cols.reshape(n * ho * wo, ci * k * k)
    gyr = grad_y.transpose(0, 2, 3, 1).reshape(n * ho * wo, co)
    return np.ascontiguousarray((gyr.T @ cols).reshape(co, ci, k, k))


def conv2d_valid_grad_input(grad_y, w, stride, in_h, in_w):
    """Gradient of conv2d_valid w.r.t. the input; returns (N,Ci,in_h,in_w)."""
    n, co, ho, wo = grad_y.shape
    _, ci, k, _ = w.shape
    gyr = grad_y.transpose(0, 2, 3, 1).reshape(n * ho * wo, co)
    gcols = gyr @ w.reshape(co, ci * k * k)
    g6 = gcols.reshape(n, ho, wo, ci, k, k).transpose(0, 3, 1, 2, 4, 5)
    gx = np.zeros((n, ci, in_h, in_w), dtype=grad_y.dtype)
    for kr in range(k):
        for kc in range(k):
            gx[:, :, kr:kr + stride * (ho - 1) + 1:stride,
                  kc:kc + stride * (wo - 1) + 1:stride] += g6[:, :, :, :, kr, kc]
    return gx


def _corners(img, cx, cy):
    n, c, h, w = img.shape
    x0 = np.floor(cx)
    y0 = np.floor(cy)
    fx = (cx - x0).astype(img.dtype)
    fy = (cy - y0).astype(img.dtype)
    x0 = x0.astype(np.int64)
    y0 = y0.astype(np.int64)
    x0c = np.clip(x0, 0, w - 1)
    x1c = np.clip(x0 + 1, 0, w - 1)
    y0c = np.clip(y0, 0, h - 1)
    y1c = np.clip(y0 + 1, 0, h - 1)
    flat = img.reshape(n * c, h * w)
    rows = np.arange(n * c)[:, None]
    sh = cx.shape
    m = sh[2] * sh[3]

    def take(yi, xi):
        lin = (yi * w + xi).reshape(n * c, m)
        return np.take_along_axis(flat, lin, axis=1).reshape(sh)

    v00 = take(y0c, x0c)
    v01 = take(y0c, x1c)
    v10 = take(y1c, x0c)
    v11 = take(y1c, x1c)
    return (x0c, x1c, y0c, y1c, fx, fy, v00, v01, v10, v11)


def bilinear_gather(img, cx, cy):
    """Sample img (N,C,H,W) at absolute coords (cx,cy), clamp-to-edge."""
    _, _, _, _, fx, fy, v00, v01, v10, v11 = _corners(img, cx, cy)
    top = v00 * (1.0 - fx) + v01 * fx
    bot = v10 * (1.0 - fx) + v11 * fx
    return top * (1.0 - fy) + bot * fy


def bilinear_gather_backward(img, cx, cy, grad_out):
    """Returns (grad_img, grad_cx, grad_cy) for bilinear_gather."""
    n, c, h, w = img.shape
    x0c, x1c, y0c, y1c, fx, fy, v00, v01, v10, v11 = _corners(img, cx, cy)

    g = grad_out
    w00 = (1.0 - fx) * (1.0 - fy)
    w01 = fx * (1.0 - fy)
    w10 = (1.0 - fx) * fy
    w11 = fx * fy

    rows = (np.arange(n * c, dtype=np.int64) * (h * w))[:, None]
    m = cx.shape[2] * cx.shape[3]
    total = n * c * h * w
    gimg = np.zeros(total, dtype=img.dtype)
    for yi, xi, wt in ((y0c, x0c, w00), (y0c, x1c, w01),
                       (y1c, x0c, w10), (y1c, x1c, w11)):
        lin = (yi * w + xi).reshape(n * c, m) + rows
        gimg += np.bincount(lin.ravel(),
                            weights=(g * wt).reshape(n * c, m).ravel(),
                            minlength=total).astype(img.dtype)
    gimg = gimg.reshape(n, c, h, w)

    gcx = g * ((v01 - v00) * (1.0 - fy) + (v11 - v10) * fy)
    gcy = g * ((v10 - v00) * (1.0 - fx) + (v11 - v01) * fx)
    return gimg, gcx, gcy
