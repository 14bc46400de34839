"""Numerical experiments on Schrodinger evolution outside obstacles: ray
dynamics with boundary events, discrete spectral calculus, smoothing
quotients and phase-space diagnostics."""

__version__ = "0.1.0"
