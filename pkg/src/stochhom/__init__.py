"""Numerical experiments for massive-corrector approximations of homogenized coefficients."""

__version__ = "0.1.0"

from .ensemble import EnsembleKind, EnsembleSpec, realize_field  # noqa: E402
from .grid import Box, CoefficientField, GridFunction, centered_box, make_mask  # noqa: E402
from .solver import OperatorSpec, solve_modified_corrector  # noqa: E402

__all__ = [
    "__version__",
    "Box",
    "CoefficientField",
    "EnsembleKind",
    "EnsembleSpec",
    "GridFunction",
    "OperatorSpec",
    "centered_box",
    "make_mask",
    "realize_field",
    "solve_modified_corrector",
]
