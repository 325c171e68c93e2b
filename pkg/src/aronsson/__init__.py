"""Numerical solvers for the Aronsson equation ``Delta_inf u - tau |Du|^2 = 0``.

``game`` computes the tug-of-war value (the minimal solution for ``tau > 0``),
``variational`` the L^p approximation of the absolute minimizer (the maximal
one), ``exact1d`` the closed-form family on an interval and ``analysis``
the well / flat-piece classification between them.
"""

from .expr import ExprError, Expression, parse_expr
from .grid import (
    BoundaryData,
    DomainSpec,
    Grid,
    GridError,
    GridFunction,
    Problem,
    build_grid,
    read_csv,
    sample_boundary,
    write_csv,
)
from .report import SolveReport, SolverError

__version__ = "0.1.0"

__all__ = [
    "BoundaryData",
    "DomainSpec",
    "ExprError",
    "Expression",
    "Grid",
    "GridError",
    "GridFunction",
    "Problem",
    "SolveReport",
    "SolverError",
    "build_grid",
    "parse_expr",
    "read_csv",
    "sample_boundary",
    "write_csv",
]
