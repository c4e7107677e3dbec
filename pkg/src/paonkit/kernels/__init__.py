"""Hot-kernel backend selection.

The compiled extension is preferred when it imports; the pure-numpy
backend is the fallback. ``PAONKIT_BACKEND=numpy|cython|auto`` overrides
the choice (``cython`` raises if the extension is missing). Both
backends produce identical shapes and dtypes; they may differ in the
last float bits because the numpy path reduces through BLAS.
"""

import os

import numpy as np

from . import numpy_backend

__all__ = [
    "BACKEND",
    "conv2d_valid",
    "conv2d_valid_grad_weight",
    "conv2d_valid_grad_input",
    "bilinear_gather",
    "bilinear_gather_backward",
]


def _load_compiled():
    from . import _ckernels

    c = np.ascontiguousarray

    def conv2d_valid(x, w, stride=1):
        return _ckernels.conv2d_valid(c(x), c(w), stride)

    def conv2d_valid_grad_weight(x, grad_y, k, stride=1):
        return _ckernels.conv2d_valid_grad_weight(c(x), c(grad_y), k, stride)

    def conv2d_valid_grad_input(grad_y, w, stride, in_h, in_w):
        return _ckernels.conv2d_valid_grad_input(c(grad_y), c(w), stride, in_h, in_w)

    def bilinear_gather(img, cx, cy):
        return _ckernels.bilinear_gather(c(img), c(cx), c(cy))

    def bilinear_gather_backward(img, cx, cy, grad_out):
        return _ckernels.bilinear_gather_backward(c(img), c(cx), c(cy), c(grad_out))

    return {
        "BACKEND": "cython",
        "conv2d_valid": conv2d_valid,
        "conv2d_valid_grad_weight": conv2d_valid_grad_weight,
        "conv2d_valid_grad_input": conv2d_valid_grad_input,
        "bilinear_gather": bilinear_gather,
        "bilinear_gather_backward": bilinear_gather_backward,
    }


def _load_numpy():
    return {
        "BACKEND": "numpy",
        "conv2d_valid": numpy_backend.conv2d_valid,
        "conv2d_valid_grad_weight": numpy_backend.conv2d_valid_grad_weight,
        "conv2d_valid_grad_input": numpy_backend.conv2d_valid_grad_input,
        "bilinear_gather": numpy_backend.bilinear_gather,
        "bilinear_gather_backward": numpy_backend.bilinear_gather_backward,
    }


def _select():
    choice = os.environ.get("PAONKIT_BACKEND", "auto").lower()
    if choice == "numpy":
        return _load_numpy()
    if choice == "cython":
        return _load_compiled()
    if choice != "auto":
        raise ValueError(f"PAONKIT_BACKEND must be auto, numpy, or cython, got {choice!r}")
    try:
        return _load_compiled()
    except ImportError:
        return _load_numpy()


_impl = _select()
BACKEND = _impl["BACKEND"]
conv2d_valid = _impl["conv2d_valid"]
conv2d_valid_grad_weight = _impl["conv2d_valid_grad_weight"]
conv2d_valid_grad_input = _impl["conv2d_valid_grad_input"]
bilinear_gather = _impl["bilinear_gather"]
bilinear_gather_backward = _impl["bilinear_gather_backward"]
