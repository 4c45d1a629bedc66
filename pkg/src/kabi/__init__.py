"""Amortized Bayesian inference for Kuramoto oscillator networks."""

__version__ = "0.1.0"

from .kernels import ACTIVE_BACKEND, HAVE_NUMBA  # noqa: F401
