"""Robust contact-implicit planning for two-point pivoting."""
from .exceptions import (CiboError, ConfigError, DegenerateMarginError, DomainError,
                         LayoutError, PreconditionError, ShapeError, StaticInfeasibleError)
from .objects import CATALOG, GRAVITY, ObjectSpec, get_object

__version__ = "0.1.0"

__all__ = [
    "CATALOG", "GRAVITY", "ObjectSpec", "get_object", "CiboError", "ConfigError",
    "DegenerateMarginError", "DomainError", "LayoutError", "PreconditionError",
    "ShapeError", "StaticInfeasibleError",
]
