"""Optimal-transport + attention fusion of embedding sources."""

from .rng import RandomSource
from .tensor import NumericsError, Parameter, ShapeError, Tensor

__version__ = "0.1.0"

__all__ = [
    "RandomSource",
    "Tensor",
    "Parameter",
    "ShapeError",
    "NumericsError",
    "__version__",
]
