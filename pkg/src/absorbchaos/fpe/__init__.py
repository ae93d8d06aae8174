"""Killed Fokker-Planck equations on the half-line."""

from .images import (
    drifted_images_density,
    drifted_images_flux,
    drifted_images_survival,
    heat_kernel,
    images_density,
    images_flux,
    images_survival,
)
from .solver import (
    FpeConfig,
    FrozenDrift,
    boundary_flux,
    flux_table,
    solve_linear_fpe,
    solve_nonlinear_fpe,
    write_flux_csv,
)
from .parametrix import gaussian_q, parametrix_density, parametrix_terms
from .representation import alpha_representation_residual, alpha_representation_terms, survival_probability_table

__all__ = [
    "alpha_representation_residual",
    "alpha_representation_terms",
    "boundary_flux",
    "drifted_images_density",
    "drifted_images_flux",
    "drifted_images_survival",
    "flux_table",
    "FpeConfig",
    "FrozenDrift",
    "gaussian_q",
    "heat_kernel",
    "images_density",
    "images_flux",
    "images_survival",
    "parametrix_density",
    "parametrix_terms",
    "solve_linear_fpe",
    "solve_nonlinear_fpe",
    "survival_probability_table",
    "write_flux_csv",
]
