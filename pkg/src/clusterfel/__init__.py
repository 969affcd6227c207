"""Clustered data sharing for federated edge learning."""

from .errors import (
    ClusterFELError, ConstraintViolation, DimensionError, DivergenceError, DomainError, FitError,
    HypothesisError, InfeasibleError, InstrumentationError, NumericalError, UnsupportedError,
    ValidationError,
)
from .structures import ClusterAssignment, SharingPlan

__version__ = "0.1.0"

__all__ = [
    "ClusterAssignment", "SharingPlan", "ClusterFELError", "ConstraintViolation", "DimensionError",
    "DivergenceError", "DomainError", "FitError", "HypothesisError", "InfeasibleError",
    "InstrumentationError", "NumericalError", "UnsupportedError", "ValidationError", "__version__",
]
