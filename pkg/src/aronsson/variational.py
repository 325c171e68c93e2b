"""Absolute minimizers through L^p approximation.

With boundary data shifted so that ``g <= 0``, the auxiliary Hamiltonian

    Hhat(p, z) = |p|**2 / 2 - tau * min(z, 0)

is nonnegative, and minimizers of the discrete energy ``sum Hhat(D u, u)**p``
approach the absolute minimizer as ``p`` grows.  The solver walks an
increasing schedule of exponents, warm-starting each from the last.

Discrete gradients are one-sided: every interior node contributes the
average of ``Hhat`` over its ``2**ndim`` forward/backward difference
combinations, which keeps every stencil inside the collar and has no
checkerboard null space.

Each exponent is solved by Newton's method on the stationarity equations,
row-scaled by the largest term each node touches.  At large ``p`` the
global energy is dominated by its largest terms, and descent on it alone
leaves the rest of the domain unresolved below rounding.
"""

from __future__ import annotations

import itertools
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import spsolve

from .grid import BoundaryData, GridFunction, Problem
from .report import SolveReport, SolverError

logger = logging.getLogger(__name__)


@dataclass
class LpParams:
    p_schedule: tuple = (2, 4, 8, 16, 32, 64, 128, 256, 512, 1024)
    tol: float = 1e-15
    xtol: float = 1e-10
    max_steps: int = 1000
    step0: float = 1.0
    shrink: float = 0.5
    armijo: float = 1e-4
    init_sweeps: int = 200
    # constant added to Hhat, relative to its maximum on the initial guess;
    # keeps the energy Hessian nondegenerate where Hhat vanishes
    offset: float = 1e-3
    # extra downward shift of g, relative to its range, keeping iterates off
    # the kink of min(z, 0) at z = 0
    margin: float = 0.1

    def validate(self):
        ps = list(self.p_schedule)
        if not ps or ps[0] < 2 or any(b <= a for a, b in zip(ps, ps[1:])):
            raise ValueError(f"p_schedule must be strictly increasing from >= 2, got {ps}")
        if not self.offset >= 0:
            raise ValueError("offset must be nonnegative")
        if not (self.tol > 0 and self.step0 > 0 and 0 < self.shrink < 1 and 0 < self.armijo < 1):
            raise ValueError("descent tolerances and backtracking parameters must be positive")
        if self.max_steps < 1:
            raise ValueError("max_steps must be at least 1")


def shift_normalize(g: BoundaryData) -> tuple[np.ndarray, float]:
    """Shift boundary values down by their maximum so that they are ``<= 0``."""
    m = g.max
    return g.values - m, m


def hhat_eval(p_vec, z, tau: float = 1.0):
    """``|p|**2 / 2 - tau * min(z, 0)``; ``p_vec`` has the vector axis last."""
    p_vec = np.asarray(p_vec, dtype=float)
    return 0.5 * np.sum(p_vec * p_vec, axis=-1) - tau * np.minimum(z, 0.0)


class _Stencil:
    """Flat index tables for the one-sided differences at interior nodes."""

    def __init__(self, grid, offset: float = 0.0):
        self.grid = grid
        self.offset = offset
        self.h = grid.h
        self.ndim = grid.ndim
        idx = np.argwhere(grid.interior)
        self.nodes = np.ravel_multi_index(tuple(idx.T), grid.shape)
        self.signs = np.array(list(itertools.product((1, -1), repeat=self.ndim)))
        # nb[d, j]: flat index of the neighbor along axis d in direction (+1, -1)[j]
        nb = np.empty((self.ndim, 2, len(idx)), dtype=np.int64)
        for d in range(self.ndim):
            for j, s in enumerate((1, -1)):
                shifted = idx.copy()
                shifted[:, d] += s
                nb[d, j] = np.ravel_multi_index(tuple(shifted.T), grid.shape)
        self.nb = nb
        self.weight = grid.h**self.ndim / len(self.signs)

    def gradients(self, u: np.ndarray) -> np.ndarray:
        """One-sided gradients, shape ``(combos, nodes, ndim)``."""
        uk = u[self.nodes]
        out = np.empty((len(self.signs), len(uk), self.ndim))
        for c, signs in enumerate(self.signs):
            for d, s in enumerate(signs):
                j = 0 if s > 0 else 1
                out[c, :, d] = s * (u[self.nb[d, j]] - uk) / self.h
        return out

    def hhat(self, u: np.ndarray, tau: float):
        grads = self.gradients(u)
        return hhat_eval(grads, u[self.nodes][None, :], tau) + self.offset, grads

    def pullback(self, u, grads, coef, tau):
        """Gradient w.r.t. ``u`` of ``sum coef * Hhat`` (coef shaped like Hhat)."""
        out = np.zeros(u.size)
        uk = u[self.nodes]
        self_part = -tau * (uk < 0) * coef.sum(axis=0)
        for c, signs in enumerate(self.signs):
            for d, s in enumerate(signs):
                j = 0 if s > 0 else 1
                term = coef[c] * grads[c, :, d] * (s / self.h)
                np.add.at(out, self.nb[d, j], term)
                self_part -= term
        np.add.at(out, self.nodes, self_part)
        return out


def _energy_parts(st: _Stencil, u: np.ndarray, p: float, tau: float):
    hh, grads = st.hhat(u, tau)
    scale = float(hh.max()) if hh.size else 0.0
    if scale <= 0.0:
        return 0.0, 0.0, hh, grads
    ratio_sum = float(np.sum((hh / scale) ** p)) * st.weight
    return scale, ratio_sum, hh, grads


def lp_energy(u: GridFunction, p: float, tau: float = 1.0) -> float:
    """``h**n * sum Hhat(D u, u)**p`` (averaged over one-sided combinations).

    Accumulated as ``scale**p * sum((Hhat / scale)**p)``; may return ``inf``
    when the true value exceeds the float range.
    """
    scale, ratio_sum = energy_terms(u, p, tau)
    if scale == 0.0:
        return 0.0
    with np.errstate(over="ignore"):
        return float(np.exp(p * math.log(scale) + math.log(ratio_sum)))


def energy_terms(u: GridFunction, p: float, tau: float = 1.0):
    """``(scale, scaled_sum)`` with energy ``= scale**p * scaled_sum``."""
    st = _Stencil(u.grid)
    scale, ratio_sum, _, _ = _energy_parts(st, np.ascontiguousarray(u.values).ravel(), p, tau)
    return scale, ratio_sum


def lp_energy_grad(u: GridFunction, p: float, tau: float = 1.0) -> GridFunction:
    """Derivative of :func:`lp_energy` with respect to the interior values."""
    st = _Stencil(u.grid)
    flat = np.ascontiguousarray(u.values).ravel()
    hh, grads = st.hhat(flat, tau)
    coef = p * hh ** (p - 1) * st.weight
    full = st.pullback(flat, grads, coef, tau)
    out = np.where(u.grid.interior.ravel(), full, 0.0)
    return GridFunction(u.grid, np.where(u.grid.active.ravel(), out, np.nan).reshape(u.grid.shape))


def _objective(st: _Stencil, u: np.ndarray, p: float, tau: float):
    """``F = energy**(1/p)`` and its gradient (full flat array)."""
    scale, ratio_sum, hh, grads = _energy_parts(st, u, p, tau)
    if scale == 0.0:
        return 0.0, np.zeros(u.size)
    f = scale * ratio_sum ** (1.0 / p)
    r = hh / scale
    coef = (f / (scale * ratio_sum)) * r ** (p - 1) * st.weight
    return f, st.pullback(u, grads, coef, tau)


@dataclass
class _DescentStats:
    steps: int = 0
    evaluations: int = 0
    converged: bool = False
    stalled: bool = False
    start: float = float("nan")
    final: float = float("nan")
    step_sizes: list = field(default_factory=list)


def _partials(st: _Stencil, u: np.ndarray, tau: float):
    """``Hhat`` per combination plus COO triples ``(term, variable, dHhat/du)``."""
    hh, grads = st.hhat(u, tau)
    m = len(st.nodes)
    terms = np.arange(m)
    # derivative from below at z = 0: iterates are kept in u <= 0
    neg = (u[st.nodes] <= 0).astype(float)
    out = []
    for c, signs in enumerate(st.signs):
        rows, cols, vals = [terms], [st.nodes], [-tau * neg]
        for d, s_ in enumerate(signs):
            j = 0 if s_ > 0 else 1
            gd = grads[c, :, d] * (s_ / st.h)
            rows.append(terms)
            cols.append(st.nb[d, j])
            vals.append(gd)
            vals[0] = vals[0] - gd
        out.append((np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)))
    return hh, out


def _local_scale(st: _Stencil, hh: np.ndarray, parts, n: int) -> np.ndarray:
    """Largest ``Hhat`` among the terms each variable enters."""
    loc = np.zeros(n)
    for c, (rows, cols, _) in enumerate(parts):
        np.maximum.at(loc, cols, hh[c][rows])
    return np.maximum(loc, 1e-300)


def _scaled_residual(st, u, p, tau, loc):
    """Euler-Lagrange residual with row ``i`` divided by ``p * loc[i]**(p-1)``."""
    hh, parts = _partials(st, u, tau)
    res = np.zeros(u.size)
    with np.errstate(over="ignore", invalid="ignore"):
        for c, (rows, cols, vals) in enumerate(parts):
            rho = hh[c][rows] / loc[cols]
            res += np.bincount(cols, rho ** (p - 1) * vals, minlength=u.size)
    return res[st.nodes]


def _scaled_system(st: _Stencil, u: np.ndarray, p: float, tau: float):
    """Row-scaled Euler-Lagrange residual and its Jacobian (interior block).

    The energy is a sum of local terms, so its stationarity conditions are
    local too.  Scaling each row by the largest term it touches keeps nodes
    whose ``Hhat`` sits far below the global maximum visible at large ``p``,
    where their share of the global energy is below rounding.
    """
    n = u.size
    m = len(st.nodes)
    hh, parts = _partials(st, u, tau)
    loc = _local_scale(st, hh, parts, n)
    pos = np.full(n, -1, dtype=np.int64)
    pos[st.nodes] = np.arange(m)
    res = np.zeros(n)
    jac = sparse.csr_matrix((m, m))
    for c, (rows, cols, vals) in enumerate(parts):
        rho = hh[c][rows] / loc[cols]
        w1 = rho ** (p - 1)
        res += np.bincount(cols, w1 * vals, minlength=n)
        keep = pos[cols] >= 0
        r_i, k_i = pos[cols[keep]], rows[keep]
        # (p - 1) * rho**(p-2) / loc * dHhat_i dHhat_j, then the Hessian of |Du|^2 / 2
        w2 = (p - 1) * rho[keep] ** (p - 2) / loc[cols[keep]] * vals[keep]
        left = sparse.csr_matrix((w2, (r_i, k_i)), shape=(m, m))
        cpos = pos[cols]
        right = sparse.csr_matrix(
            (vals[cpos >= 0], (rows[cpos >= 0], cpos[cpos >= 0])), shape=(m, m)
        )
        jac = jac + left @ right
        signs = st.signs[c]
        for d, s_ in enumerate(signs):
            j = 0 if s_ > 0 else 1
            nb, own = st.nb[d, j], st.nodes
            a = np.arange(m)
            # D_d row k: (e_nb - e_own) * s / h; contributes w1(i, k) * D(k, i) * D(k, :)
            dr, dc, dv = [a], [a], [np.full(m, -s_ / st.h)]
            nb_pos = pos[nb]
            inside = nb_pos >= 0
            dr.append(a[inside])
            dc.append(nb_pos[inside])
            dv.append(np.full(int(inside.sum()), s_ / st.h))
            dmat = sparse.csr_matrix(
                (np.concatenate(dv), (np.concatenate(dr), np.concatenate(dc))), shape=(m, m)
            )
            w_own = (hh[c] / loc[own]) ** (p - 1)
            w_nb = np.where(inside, hh[c] / loc[nb], 0.0) ** (p - 1)
            lv = np.concatenate([w_own * (-s_ / st.h), (w_nb * (s_ / st.h))[inside]])
            lr = np.concatenate([a, nb_pos[inside]])
            lc = np.concatenate([a, a[inside]])
            lmat = sparse.csr_matrix((lv, (lr, lc)), shape=(m, m))
            jac = jac + lmat @ dmat
    return res[st.nodes], jac.tocsc(), loc


_STAGNATION = 30
_ACTIVE = 1e-6


def _newton(st: _Stencil, flat: np.ndarray, p: float, tau: float, params: LpParams):
    """Newton's method on the row-scaled Euler-Lagrange system.

    Steps are globalized on the scaled residual norm; if that line search
    fails, the same direction (a descent direction of the convex energy) is
    tried with Armijo backtracking on the energy itself.
    """
    stats = _DescentStats()
    interior = st.nodes
    f, _ = _objective(st, flat, p, tau)
    stats.evaluations += 1
    stats.start = f
    merits = []
    while stats.steps < params.max_steps:
        if f == 0.0:
            stats.converged = True
            break
        res, jac, loc = _scaled_system(st, flat, p, tau)
        x0 = flat[interior].copy()
        # u <= 0 at the minimizer (truncating at 0 lowers every term), so
        # nodes pinned at 0 that would keep rising are held fixed
        raw = res
        res = _kkt(x0, res)
        phi0 = float(res @ res)
        if phi0 == 0.0:
            stats.converged = True
            break
        free = ~((x0 >= -_ACTIVE) & (raw < 0.0))
        jf = jac[free][:, free]
        mu = 1e-12 * max(float(np.abs(jf.diagonal()).max()), 1e-300)
        eye = sparse.identity(int(free.sum()), format="csc")
        d = np.zeros(len(interior))
        for _ in range(8):
            try:
                d[free] = -spsolve(jf + mu * eye, res[free])
            except RuntimeError:
                d[free] = np.nan
            if np.all(np.isfinite(d)):
                break
            mu *= 100.0
        else:
            raise SolverError(f"singular Newton system at p={p}")
        accepted = False
        t = params.step0
        while t > 1e-12:
            trial = np.minimum(x0 + t * d, 0.0)
            flat[interior] = trial
            r_new = _kkt(trial, _scaled_residual(st, flat, p, tau, loc))
            stats.evaluations += 1
            with np.errstate(over="ignore"):
                phi = float(r_new @ r_new) if np.all(np.isfinite(r_new)) else math.inf
            if phi <= (1 - 2 * params.armijo * t) * phi0:
                accepted = True
                break
            t *= params.shrink
        if not accepted:
            accepted, t = _energy_search(st, flat, x0, d, p, tau, params, stats)
        if not accepted:
            flat[interior] = x0
            stats.stalled = True
            # no progress along the Newton direction: fine if the step it
            # proposed is already below the tolerance
            stats.converged = float(np.max(np.abs(d))) <= params.xtol
            break
        stats.steps += 1
        stats.step_sizes.append(t)
        merits.append(phi0)
        if t * float(np.max(np.abs(d))) <= params.xtol:
            stats.converged = True
            break
        if (
            len(merits) > _STAGNATION
            and merits[-1] > 0.5 * merits[-1 - _STAGNATION]
            and max(stats.step_sizes[-_STAGNATION:]) < 1e-3
        ):
            # tiny damped steps without residual progress: ill-conditioned at this p
            stats.stalled = True
            break
    f, _ = _objective(st, flat, p, tau)
    stats.final = f
    return stats


def _kkt(x: np.ndarray, res: np.ndarray) -> np.ndarray:
    """Residual with the entries of nodes held at the bound ``u = 0`` removed."""
    return np.where((x >= 0.0) & (res < 0.0), 0.0, res)


def _energy_search(st, flat, x0, d, p, tau, params, stats):
    interior = st.nodes
    flat[interior] = x0
    scale = float(st.hhat(flat, tau)[0].max())
    energy0 = _scaled_energy(st, flat, p, tau, scale)
    grad = _energy_grad(st, flat, p, tau, scale)
    slope = float(grad[interior] @ d)
    if not slope < 0:
        return False, 0.0
    t = params.step0
    while t > 1e-16:
        flat[interior] = np.minimum(x0 + t * d, 0.0)
        e_new = _scaled_energy(st, flat, p, tau, scale)
        stats.evaluations += 1
        if math.isnan(e_new):
            raise SolverError("NaN energy during descent")
        if e_new <= energy0 + params.armijo * t * slope and e_new < energy0:
            return True, t
        t *= params.shrink
    return False, 0.0


def _energy_grad(st, u, p, tau, scale):
    hh, grads = st.hhat(u, tau)
    coef = st.weight * p * (hh / scale) ** (p - 1) / scale
    return st.pullback(u, grads, coef, tau)


def _scaled_energy(st: _Stencil, u: np.ndarray, p: float, tau: float, scale: float) -> float:
    hh, _ = st.hhat(u, tau)
    # trial points may overshoot the scale; overflow to inf just rejects the step
    with np.errstate(over="ignore"):
        return float(np.sum((hh / scale) ** p)) * st.weight


def harmonic_guess(grid, boundary_values: np.ndarray, sweeps: int) -> np.ndarray:
    """Boundary values with the interior filled by neighbor-averaging sweeps."""
    u = np.where(grid.boundary, boundary_values, np.nan)
    u[grid.interior] = np.nanmean(boundary_values[grid.boundary])
    st = _Stencil(grid)
    flat = u.ravel()
    for _ in range(sweeps):
        acc = np.zeros(len(st.nodes))
        for d in range(grid.ndim):
            acc += flat[st.nb[d, 0]] + flat[st.nb[d, 1]]
        flat[st.nodes] = acc / (2 * grid.ndim)
    return flat.reshape(grid.shape)


def minimize_lp(problem: Problem, params: LpParams | None = None) -> tuple[GridFunction, SolveReport]:
    """Approximate the absolute minimizer by the L^p schedule.

    For ``tau < 0`` the problem ``(-g, -tau)`` is solved and negated, which
    returns the minimal solution; the report records the swap.
    """
    from .analysis import detect_wells

    params = params or LpParams()
    params.validate()
    t0 = time.perf_counter()
    grid = problem.grid
    swapped = problem.tau < 0
    sign = -1.0 if swapped else 1.0
    tau = sign * problem.tau
    g = sign * problem.g.values
    shift = float(np.nanmax(g)) + params.margin * float(np.nanmax(g) - np.nanmin(g))
    g_shifted = g - shift

    u = harmonic_guess(grid, g_shifted, params.init_sweeps)
    if not np.all(np.isfinite(u[grid.active])):
        raise SolverError("initial guess is not finite")
    st = _Stencil(grid)
    flat = u.ravel().copy()
    st.offset = params.offset * float(st.hhat(flat, tau)[0].max())
    interior = st.nodes
    per_p = []
    all_converged = True
    for p in params.p_schedule:
        tp = time.perf_counter()

        stats = _newton(st, flat, p, tau, params)
        if not np.all(np.isfinite(flat[interior])):
            raise SolverError(f"non-finite iterate at p={p}")
        scale, _ = _energy_parts(st, flat, p, tau)[:2]
        steps = np.array(stats.step_sizes) if stats.step_sizes else np.array([float("nan")])
        per_p.append(
            {
                "p": p,
                "steps": stats.steps,
                "evaluations": stats.evaluations,
                "objective": stats.final,
                "objective_start": stats.start,
                "scale": scale,
                "converged": stats.converged,
                "stalled": stats.stalled,
                "step_min": float(steps.min()),
                "step_median": float(np.median(steps)),
                "step_max": float(steps.max()),
                "wall_time": time.perf_counter() - tp,
            }
        )
        all_converged &= stats.converged
        logger.info("p=%g: %d steps, objective %.6g", p, stats.steps, stats.final)

    values = sign * (flat.reshape(grid.shape) + shift)
    # undoing the shift can round; boundary nodes hold g exactly
    values = np.where(grid.boundary, problem.g.values, values)
    out = GridFunction(grid, np.where(grid.active, values, np.nan))
    wells = detect_wells(out)
    if wells:
        logger.warning("L^p output has %d well(s)", len(wells))
    report = SolveReport(
        solver="variational",
        iterations=sum(d["steps"] for d in per_p),
        residual=per_p[-1]["objective"],
        change=float("nan"),
        converged=all_converged and not wells,
        wall_time=time.perf_counter() - t0,
        details={
            "tau": problem.tau,
            "h": grid.h,
            "shift": shift,
            "sign_swapped": swapped,
            "selection": "minimal" if swapped else ("unique" if tau == 0 else "maximal"),
            "well_count": len(wells),
            "per_p": per_p,
        },
    )
    return out, report
