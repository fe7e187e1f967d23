"""Safety filters for Euler-Lagrange systems from zeroing barrier functions."""

from .barrier import BarrierConfig, ConstraintSpec, Region
from .classk import ClassKFn
from .dynamics import Planar2Dof, QuadraticPlaneMap, TransformedSystem
from .errors import AssumptionError, ConfigurationError, DomainError, ElsgError, SynthesisError

__version__ = "0.1.0"

__all__ = [
    "AssumptionError", "BarrierConfig", "ClassKFn", "ConfigurationError", "ConstraintSpec", "DomainError",
    "ElsgError", "Planar2Dof", "QuadraticPlaneMap", "Region", "SynthesisError", "TransformedSystem",
]
