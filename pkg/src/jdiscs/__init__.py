"""Numerical laboratory for pseudoholomorphic discs on almost complex chart domains."""

from .grid import (
    BoundaryFunction,
    DiscFunction,
    PolarGrid,
    SpectralTailError,
    holder_norm_estimate,
    winding_number,
    wirtinger_derivatives,
)

__all__ = [
    "PolarGrid",
    "DiscFunction",
    "BoundaryFunction",
    "SpectralTailError",
    "wirtinger_derivatives",
    "holder_norm_estimate",
    "winding_number",
]

__version__ = "0.1.0"
