import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def brute_conv2d_valid(x, w, stride=1):
    """Reference convolution: six explicit loops, float64 accumulation."""
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    n, ci, h, wd = x.shape
    co, _, k, _ = w.shape
    ho = (h - k) // stride + 1
    wo = (wd - k) // stride + 1
    out = np.zeros((n, co, ho, wo))
    for b in range(n):
        for o in range(co):
            for oy in range(ho):
                for ox in range(wo):
                    s = 0.0
                    for c in range(ci):
                        for kr in range(k):
                            for kc in range(k):
                                s += x[b, c, oy * stride + kr, ox * stride + kc] * w[o, c, kr, kc]
                    out[b, o, oy, ox] = s
    return out
