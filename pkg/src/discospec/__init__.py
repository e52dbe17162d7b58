"""Forward and inverse spectral toolkit for Sturm-Liouville problems with a jump at x = 1/2."""

from .core import (
    ContractError,
    Dirichlet,
    DomainError,
    IncompleteSpectrumError,
    InsufficientDataError,
    Potential,
    ProblemSpec,
    Robin,
    Spectrum,
    Transmission,
)
from .forward import PropagatorConfig, eigenvalues, propagate

__all__ = [
    "ContractError",
    "Dirichlet",
    "DomainError",
    "IncompleteSpectrumError",
    "InsufficientDataError",
    "Potential",
    "ProblemSpec",
    "PropagatorConfig",
    "Robin",
    "Spectrum",
    "Transmission",
    "eigenvalues",
    "propagate",
]
