"""Pade-approximant neuron layers and supporting training stack.

The package is built around rational neurons (Paons): layers whose
activation is the ratio of two learned polynomial responses. It ships
a vanilla and a division-safe smoothed formulation, two receptive-field
shifter mechanisms, a small reverse-mode autodiff engine, reference
super-resolution and classifier networks, deterministic training loops,
and instrumentation for operation counts and denominator zeros.
"""

from .kernels import BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "__version__"]
