"""Tug-of-war value iteration.

The discrete dynamic programming operator is

    T(u)(x) = 1/2 * (max_{B_eps(x)} u + min_{B_eps(x)} u) - eps**2 * tau / 2

at interior nodes, with boundary nodes pinned to g.  Iterating T downward
from the constant ``max g`` converges to the minimal fixed point, which
approximates the continuum value function.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass

import numba
import numpy as np

from .grid import GridError, GridFunction, Problem, ball_stencil, stencil_table
from .report import SolveReport, SolverError

logger = logging.getLogger(__name__)

# the bundled TBB is often too old for numba; prefer OpenMP, then workqueue
numba.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]

INITS = ("boundary-max-constant", "boundary-min-constant")
SWEEPS = ("gauss-seidel", "jacobi")


@dataclass
class GameParams:
    eps: float
    tol: float = 1e-9
    max_iter: int = 500_000
    init: object = "boundary-max-constant"
    sweep: str = "gauss-seidel"
    shrink: bool = True

    def validate(self, h: float):
        if self.eps < h * (1 - 1e-12):
            raise GridError(f"eps={self.eps:g} must be at least the grid spacing h={h:g}")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        if self.sweep not in SWEEPS:
            raise ValueError(f"sweep must be one of {SWEEPS}")
        if not isinstance(self.init, GridFunction) and self.init not in INITS:
            raise ValueError(f"init must be a GridFunction or one of {INITS}")


@numba.njit(cache=True)
def _gauss_seidel(u, nodes, indptr, members, shift):
    change = 0.0
    for k in range(nodes.size):
        lo = np.inf
        hi = -np.inf
        for j in range(indptr[k], indptr[k + 1]):
            v = u[members[j]]
            if v < lo:
                lo = v
            if v > hi:
                hi = v
        new = 0.5 * (hi + lo) - shift[k]
        i = nodes[k]
        d = abs(new - u[i])
        if d > change:
            change = d
        u[i] = new
    return change


@numba.njit(cache=True, parallel=True)
def _jacobi(u, out, nodes, indptr, members, shift):
    for k in numba.prange(nodes.size):
        lo = np.inf
        hi = -np.inf
        for j in range(indptr[k], indptr[k + 1]):
            v = u[members[j]]
            if v < lo:
                lo = v
            if v > hi:
                hi = v
        out[nodes[k]] = 0.5 * (hi + lo) - shift[k]


def dpp_update(u: GridFunction, node, eps: float, tau: float) -> float:
    """One application of the DPP operator at a single interior node."""
    if not u.grid.interior[tuple(node)]:
        raise GridError(f"node {tuple(node)} is not interior")
    vals = np.array([u.values[i] for i in ball_stencil(u.grid, node, eps)])
    return 0.5 * (vals.max() + vals.min()) - 0.5 * eps * eps * tau


def dpp_operator(u: GridFunction, eps: float, tau: float, shrink: bool = False) -> GridFunction:
    """Apply T at every interior node (Jacobi); boundary values are copied.

    ``shrink`` selects the boundary-centred balls used by the solver (see
    :func:`~aronsson.grid.stencil_table`); the default is the plain eps-ball
    cut to the active nodes, which is what :func:`dpp_update` evaluates.
    """
    nodes, indptr, members, radius = stencil_table(u.grid, eps, shrink)
    flat = np.ascontiguousarray(u.values).ravel()
    out = flat.copy()
    _jacobi(flat, out, nodes, indptr, members, 0.5 * radius**2 * tau)
    return GridFunction(u.grid, out.reshape(u.grid.shape))


def supersolution_residual(
    u: GridFunction, eps: float, tau: float, shrink: bool = False
) -> GridFunction:
    """``u - T(u)`` at interior nodes, zero elsewhere on the active set."""
    tu = dpp_operator(u, eps, tau, shrink)
    res = np.where(u.grid.interior, u.values - tu.values, 0.0)
    return GridFunction(u.grid, np.where(u.grid.active, res, np.nan))


def value_iteration(problem: Problem, params: GameParams) -> tuple[GridFunction, SolveReport]:
    """Iterate the DPP operator to its fixed point.

    For ``tau < 0`` the problem ``(-g, -tau)`` is solved and the result
    negated; the game value is then the maximal solution rather than the
    minimal one, and the report records the swap.
    """
    grid = problem.grid
    params.validate(grid.h)
    t0 = time.perf_counter()
    swapped = problem.tau < 0
    sign = -1.0 if swapped else 1.0
    tau = sign * problem.tau
    g = sign * problem.g.values

    if isinstance(params.init, GridFunction):
        u0 = sign * params.init.values
    elif params.init == "boundary-max-constant":
        u0 = np.full(grid.shape, np.nanmax(g))
    else:
        u0 = np.full(grid.shape, np.nanmin(g))
    u0 = np.where(grid.boundary, g, u0)
    u0 = np.where(grid.active, u0, np.nan)
    if not np.all(np.isfinite(u0[grid.active])):
        raise SolverError("initial guess is not finite")

    nodes, indptr, members, radius = stencil_table(grid, params.eps, params.shrink)
    table = (nodes, indptr, members)
    shift = 0.5 * radius**2 * tau
    u = np.ascontiguousarray(u0).ravel()
    scratch = u.copy()
    converged = False
    change = residual = np.inf
    it = 0
    while it < params.max_iter:
        it += 1
        if params.sweep == "gauss-seidel":
            change = _gauss_seidel(u, *table, shift)
        else:
            _jacobi(u, scratch, *table, shift)
            change = float(np.max(np.abs(scratch[table[0]] - u[table[0]])))
            u, scratch = scratch, u
        if not np.isfinite(change):
            raise SolverError(f"non-finite values after iteration {it}")
        if change < params.tol:
            _jacobi(u, scratch, *table, shift)
            residual = float(np.max(np.abs(scratch[table[0]] - u[table[0]])))
            if residual < params.tol:
                converged = True
                break
    if not converged and np.isfinite(change):
        _jacobi(u, scratch, *table, shift)
        residual = float(np.max(np.abs(scratch[table[0]] - u[table[0]])))
    if not converged:
        logger.warning("value iteration stopped at max_iter=%d (change %.3e)", it, change)

    out = GridFunction(grid, sign * u.reshape(grid.shape))
    report = SolveReport(
        solver="game",
        iterations=it,
        residual=float(residual),
        change=float(change),
        converged=converged,
        wall_time=time.perf_counter() - t0,
        details={
            "eps": params.eps,
            "h": grid.h,
            "tau": problem.tau,
            "sweep": params.sweep,
            "shrink": params.shrink,
            "sign_swapped": swapped,
            "selection": "maximal" if swapped else ("unique" if tau == 0 else "minimal"),
        },
    )
    return out, report
