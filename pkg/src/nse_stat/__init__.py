"""Ensemble pseudo-spectral Navier-Stokes solver and statistical analysis
toolkit on the periodic torus."""

__version__ = "0.1.0"
