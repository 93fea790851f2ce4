"""Pseudo-spectral solver for forced subcritical SQG on the 2-torus and checks of its a-priori estimates."""

from sqgattr.errors import (
    BlowUpError,
    ConfigurationError,
    DomainError,
    InsufficientSamplingError,
    PreconditionError,
    UndefinedRatioError,
)
from sqgattr.grid import SpectralField, SpectrumRecipe, TorusGrid, VelocityField, generate_field
from sqgattr.solver import SolverState, StepScheme, initial_state, integrate, step

__version__ = "0.1.0"

__all__ = [
    "BlowUpError",
    "ConfigurationError",
    "DomainError",
    "InsufficientSamplingError",
    "PreconditionError",
    "UndefinedRatioError",
    "SpectralField",
    "SpectrumRecipe",
    "TorusGrid",
    "VelocityField",
    "generate_field",
    "SolverState",
    "StepScheme",
    "initial_state",
    "integrate",
    "step",
]
