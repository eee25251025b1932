"""Numerical laboratory for the semiclassical spectral function as a Fourier integral operator."""

__version__ = "0.1.0"
