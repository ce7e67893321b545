"""Gaussian covariance dynamics of two spin ensembles, one inverted, coupled through a lossy cavity."""

__version__ = "0.1.0"

from .core import (
    INVERTED,
    REGULAR,
    CovarianceState,
    ModeDescriptor,
    ModeSystem,
    QuadratureSpec,
    homogeneous_system,
    hp_validity,
    is_physical,
    mean_excitation,
    quadrature_variance,
    symplectic_eigenvalues,
    two_mode_quadrature,
    vacuum_state,
)
from .dynamics import (
    DriftDiffusion,
    SpectrumReport,
    Trajectory,
    analytic_eigenvalues,
    build_drift_diffusion,
    dark_mode,
    evolve,
    stability_classify,
    steady_state,
    variance_trajectory,
)

__all__ = [
    "INVERTED",
    "REGULAR",
    "CovarianceState",
    "DriftDiffusion",
    "ModeDescriptor",
    "ModeSystem",
    "QuadratureSpec",
    "SpectrumReport",
    "Trajectory",
    "analytic_eigenvalues",
    "build_drift_diffusion",
    "dark_mode",
    "evolve",
    "homogeneous_system",
    "hp_validity",
    "is_physical",
    "mean_excitation",
    "quadrature_variance",
    "stability_classify",
    "steady_state",
    "symplectic_eigenvalues",
    "two_mode_quadrature",
    "vacuum_state",
    "variance_trajectory",
]
