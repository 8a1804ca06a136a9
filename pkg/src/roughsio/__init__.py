"""Numerical laboratory for rough fractional singular integrals on homogeneous groups."""

from .groups import GroupSpec, euclidean, heisenberg
from .fields import GridSpec, ScalarField, group_box, lp_norm

__all__ = [
    "GroupSpec",
    "euclidean",
    "heisenberg",
    "GridSpec",
    "ScalarField",
    "group_box",
    "lp_norm",
]

__version__ = "0.1.0"
