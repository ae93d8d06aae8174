"""Absorbed mean-field particle systems, their killed nonlinear Fokker-Planck
limit, and numerical checks of propagation of chaos."""

__version__ = "0.1.0"
