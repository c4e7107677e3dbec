# cython: boundscheck=False, wraparound=False, cdivision=True
# cython: language_level=3
"""Compiled kernel core: direct convolution and bilinear sampling.

Each output element is reduced by one thread in a fixed (channel,
kernel-row, kernel-col) order, so results are bit-identical for any
thread count. Parallelism is over independent (batch, channel) slices.
"""

import numpy as np

cimport cython
from cython.parallel cimport prange
from libc.math cimport floor

ctypedef fused real:
    float
    double


cdef inline Py_ssize_t _clampi(Py_ssize_t v, Py_ssize_t hi) noexcept nogil:
    if v < 0:
        return 0
    if v > hi:
        return hi
    return v


def conv2d_valid(real[:, :, :, ::1] x, real[:, :, :, ::1] w, int stride=1):
    # Each (b, o) slab is owned by one thread and every output element
    # accumulates its terms in the same (c, kr, kc) order, so results
    # are bit-identical for any thread count. The inner ox loop runs
    # over contiguous memory with independent accumulators, which the
    # C compiler vectorizes.
    cdef Py_ssize_t n = x.shape[0], ci = x.shape[1], h = x.shape[2], wd = x.shape[3]
    cdef Py_ssize_t co = w.shape[0], k = w.shape[2]
    cdef Py_ssize_t ho = (h - k) // stride + 1
    cdef Py_ssize_t wo = (wd - k) // stride + 1
    if real is float:
        out_np = np.zeros((n, co, ho, wo), dtype=np.float32)
    else:
        out_np = np.zeros((n, co, ho, wo), dtype=np.float64)
    cdef real[:, :, :, ::1] out = out_np
    cdef Py_ssize_t i, b, o, c, kr, kc, oy, ox
    cdef real ws
    for i in prange(n * co, nogil=True, schedule='static'):
        b = i // co
        o = i % co
        for c in range(ci):
            for kr in range(k):
                for kc in range(k):
                    ws = w[o, c, kr, kc]
                    if stride == 1:
                        # unit-stride copy of the loop so the compiler sees
                        # contiguous loads and emits SIMD
                        for oy in range(ho):
                            for ox in range(wo):
                                out[b, o, oy, ox] += ws * x[b, c, oy + kr, ox + kc]
                    else:
                        for oy in range(ho):
                            for ox in range(wo):
                                out[b, o, oy, ox] += ws * x[b, c, oy * stride + kr, ox * stride + kc]
    return out_np


def conv2d_valid_grad_weight(real[:, :, :, ::1] x, real[:, :, :, ::1] grad_y,
                             Py_ssize_t k, int stride=1):
    # k must come from the caller: input/output shapes alone can't
    # recover the kernel size once stride > 1 discards trailing rows.
    cdef Py_ssize_t n = x.shape[0], ci = x.shape[1], h = x.shape[2]
    cdef Py_ssize_t co = grad_y.shape[1], ho = grad_y.shape[2], wo = grad_y.shape[3]
    if real is float:
        gw_np = np.empty((co, ci, k, k), dtype=np.float32)
    else:
        gw_np = np.empty((co, ci, k, k), dtype=np.float64)
    cdef real[:, :, :, ::1] gw = gw_np
    # Per-(o, c) scratch row: partial sums are kept per output column and
    # reduced once at the end in a fixed order, so the result does not
    # depend on the thread count. The ox loop is contiguous in both
    # operands, which lets the compiler vectorize it.
    if real is float:
        scratch_np = np.empty((co * ci, wo), dtype=np.float32)
    else:
        scratch_np = np.empty((co * ci, wo), dtype=np.float64)
    cdef real[:, ::1] scratch = scratch_np
    cdef Py_ssize_t i, o, c, kr, kc, b, oy, ox
    cdef real acc
    for i in prange(co * ci, nogil=True, schedule='static'):
        o = i // ci
        c = i % ci
        for kr in range(k):
            for kc in range(k):
                for ox in range(wo):
                    scratch[i, ox] = 0
                if stride == 1:
                    for b in range(n):
                        for oy in range(ho):
                            for ox in range(wo):
                                scratch[i, ox] += x[b, c, oy + kr, ox + kc] * grad_y[b, o, oy, ox]
                else:
                    for b in range(n):
                        for oy in range(ho):
                            for ox in range(wo):
                                scratch[i, ox] += x[b, c, oy * stride + kr, ox * stride + kc] * grad_y[b, o, oy, ox]
                acc = 0
                for ox in range(wo):
                    acc = acc + scratch[i, ox]
                gw[o, c, kr, kc] = acc
    return gw_np


def conv2d_valid_grad_input(real[:, :, :, ::1] grad_y, real[:, :, :, ::1] w,
                            int stride, Py_ssize_t in_h, Py_ssize_t in_w):
    cdef Py_ssize_t n = grad_y.shape[0], co = grad_y.shape[1]
    cdef Py_ssize_t ho = grad_y.shape[2], wo = grad_y.shape[3]
    cdef Py_ssize_t ci = w.shape[1], k = w.shape[2]
    if real is float:
        gx_np = np.zeros((n, ci, in_h, in_w), dtype=np.float32)
    else:
        gx_np = np.zeros((n, ci, in_h, in_w), dtype=np.float64)
    cdef real[:, :, :, ::1] gx = gx_np
    # Each (b, c) slab is owned by one thread and every element of it
    # receives its contributions in the fixed (o, kr, kc) order, so the
    # scatter is race-free and bit-identical for any thread count. For a
    # given (kr, kc) the writes across ox never alias, so the inner loop
    # vectorizes.
    cdef Py_ssize_t i, b, c, o, oy, ox, kr, kc
    cdef real ws
    for i in prange(n * ci, nogil=True, schedule='static'):
        b = i // ci
        c = i % ci
        for o in range(co):
            for kr in range(k):
                for kc in range(k):
                    ws = w[o, c, kr, kc]
                    if stride == 1:
                        for oy in range(ho):
                            for ox in range(wo):
                                gx[b, c, oy + kr, ox + kc] += ws * grad_y[b, o, oy, ox]
                    else:
                        for oy in range(ho):
                            for ox in range(wo):
                                gx[b, c, oy * stride + kr, ox * stride + kc] += ws * grad_y[b, o, oy, ox]
    return gx_np


def bilinear_gather(real[:, :, :, ::1] img, real[:, :, :, ::1] cx, real[:, :, :, ::1] cy):
    cdef Py_ssize_t n = img.shape[0], c = img.shape[1], h = img.shape[2], w = img.shape[3]
    cdef Py_ssize_t oh = cx.shape[2], ow = cx.shape[3]
    if real is float:
        out_np = np.empty((n, c, oh, ow), dtype=np.float32)
    else:
        out_np = np.empty((n, c, oh, ow), dtype=np.float64)
    cdef real[:, :, :, ::1] out = out_np
    cdef Py_ssize_t i, b, ch, y, x
    cdef Py_ssize_t x0, y0, x0c, x1c, y0c, y1c
    cdef real sx, sy, fx, fy, top, bot
    for i in prange(n * c, nogil=True, schedule='static'):
        b = i // c
        ch = i % c
        for y in range(oh):
            for x in range(ow):
                sx = cx[b, ch, y, x]
                sy = cy[b, ch, y, x]
                x0 = <Py_ssize_t>floor(sx)
                y0 = <Py_ssize_t>floor(sy)
                fx = sx - <real>x0
                fy = sy - <real>y0
                x0c = _clampi(x0, w - 1)
                x1c = _clampi(x0 + 1, w - 1)
                y0c = _clampi(y0, h - 1)
                y1c = _clampi(y0 + 1, h - 1)
                top = img[b, ch, y0c, x0c] * (1 - fx) + img[b, ch, y0c, x1c] * fx
                bot = img[b, ch, y1c, x0c] * (1 - fx) + img[b, ch, y1c, x1c] * fx
                out[b, ch, y, x] = top * (1 - fy) + bot * fy
    return out_np


def bilinear_gather_backward(real[:, :, :, ::1] img, real[:, :, :, ::1] cx,
                             real[:, :, :, ::1] cy, real[:, :, :, ::1] grad_out):
    cdef Py_ssize_t n = img.shape[0], c = img.shape[1], h = img.shape[2], w = img.shape[3]
    cdef Py_ssize_t oh = cx.shape[2], ow = cx.shape[3]
    if real is float:
        gimg_np = np.zeros((n, c, h, w), dtype=np.float32)
        gcx_np = np.empty((n, c, oh, ow), dtype=np.float32)
        gcy_np = np.empty((n, c, oh, ow), dtype=np.float32)
    else:
        gimg_np = np.zeros((n, c, h, w), dtype=np.float64)
        gcx_np = np.empty((n, c, oh, ow), dtype=np.float64)
        gcy_np = np.empty((n, c, oh, ow), dtype=np.float64)
    cdef real[:, :, :, ::1] gimg = gimg_np
    cdef real[:, :, :, ::1] gcx = gcx_np
    cdef real[:, :, :, ::1] gcy = gcy_np
    cdef Py_ssize_t i, b, ch, y, x
    cdef Py_ssize_t x0, y0, x0c, x1c, y0c, y1c
    cdef real sx, sy, fx, fy, g, v00, v01, v10, v11
    for i in prange(n * c, nogil=True, schedule='static'):
        b = i // c
        ch = i % c
        for y in range(oh):
            for x in range(ow):
                sx = cx[b, ch, y, x]
                sy = cy[b, ch, y, x]
                x0 = <Py_ssize_t>floor(sx)
                y0 = <Py_ssize_t>floor(sy)
                fx = sx - <real>x0
                fy = sy - <real>y0
                x0c = _clampi(x0, w - 1)
                x1c = _clampi(x0 + 1, w - 1)
                y0c = _clampi(y0, h - 1)
                y1c = _clampi(y0 + 1, h - 1)
                v00 = img[b, ch, y0c, x0c]
                v01 = img[b, ch, y0c, x1c]
                v10 = img[b, ch, y1c, x0c]
                v11 = img[b, ch, y1c, x1c]
                g = grad_out[b, ch, y, x]
                gimg[b, ch, y0c, x0c] += g * (1 - fx) * (1 - fy)
                gimg[b, ch, y0c, x1c] += g * fx * (1 - fy)
                gimg[b, ch, y1c, x0c] += g * (1 - fx) * fy
                gimg[b, ch, y1c, x1c] += g * fx * fy
                gcx[b, ch, y, x] = g * ((v01 - v00) * (1 - fy) + (v11 - v10) * fy)
                gcy[b, ch, y, x] = g * ((v10 - v00) * (1 - fx) + (v11 - v01) * fx)
    return gimg_np, gcx_np, gcy_np
