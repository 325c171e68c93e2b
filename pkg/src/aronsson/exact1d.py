"""Closed-form viscosity solutions of ``(u')^2 u'' - tau (u')^2 = 0`` on an interval.

For ``tau = 1`` every solution with boundary values ``g_l, g_r`` has the
form

    u(x) = c + 1/2 * pos(x - m2)**2 + 1/2 * pos(m1 - x)**2,   pos(t) = max(t, 0)

with ``m1 <= m2``: a descending parabola, a flat piece at height ``c`` on
``[m1, m2]`` and an ascending parabola.  The flat height ranges over an
interval ``[c_min, c_max]``; ``c_min`` gives the value function (no flat
piece) and ``c_max`` the absolute minimizer (no well).  Other ``tau != 0``
follow from the scaling ``u = tau * w`` with ``w`` solving the ``tau = 1``
problem for ``g / tau``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .grid import Grid, GridError, GridFunction

_TOL = 1e-9


def _pos(t):
    return np.maximum(t, 0.0)


@dataclass(frozen=True)
class ParabolaFlatSolution:
    l: float
    r: float
    m1: float
    m2: float
    c: float
    scale: float = 1.0

    def __post_init__(self):
        if not self.l < self.r:
            raise ValueError(f"need l < r, got l={self.l}, r={self.r}")
        if self.m1 > self.m2 + _TOL:
            raise ValueError(f"need m1 <= m2, got m1={self.m1}, m2={self.m2}")
        if self.scale == 0:
            raise ValueError("scale must be nonzero")

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        base = self.c + 0.5 * _pos(x - self.m2) ** 2 + 0.5 * _pos(self.m1 - x) ** 2
        out = self.scale * base
        return out if out.ndim else float(out)

    def derivative(self, x):
        x = np.asarray(x, dtype=float)
        out = self.scale * (_pos(x - self.m2) - _pos(self.m1 - x))
        return out if out.ndim else float(out)

    @property
    def tau(self) -> float:
        return self.scale

    @property
    def boundary_values(self) -> tuple[float, float]:
        return self(self.l), self(self.r)

    @property
    def flat_interval(self) -> tuple[float, float] | None:
        """The part of ``[m1, m2]`` inside ``(l, r)`` with positive length, if any."""
        a, b = max(self.m1, self.l), min(self.m2, self.r)
        return (a, b) if b - a > _TOL else None

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class Family:
    """All solutions for one boundary pair, parametrized by the flat height.

    ``c_min`` is the flat height at the value-function end (no flat piece) and
    ``c_max`` at the absolute-minimizer end (no well).  For ``tau > 0`` these
    are the smallest and largest heights; a negative ``tau`` flips the order.
    """

    l: float
    r: float
    g_l: float
    g_r: float
    c_min: float
    c_max: float
    tau: float = 1.0
    vertex: float = field(default=float("nan"))

    @property
    def is_single(self) -> bool:
        return abs(self.c_max - self.c_min) <= _TOL

    def member(self, c: float) -> ParabolaFlatSolution:
        """Family member with flat height ``c``."""
        gl, gr = self.g_l / self.tau, self.g_r / self.tau
        cmin, cmax = self.c_min / self.tau, self.c_max / self.tau
        cb = c / self.tau
        lo, hi = min(cmin, cmax), max(cmin, cmax)
        if not (lo - _TOL <= cb <= hi + _TOL):
            raise ValueError(f"c={c} outside [{self.c_min}, {self.c_max}]")
        if self.is_single:
            return ParabolaFlatSolution(self.l, self.r, self.vertex, self.vertex, cmin, self.tau)
        cb = min(max(cb, lo), hi)
        m1 = self.l + math.sqrt(max(2.0 * (gl - cb), 0.0))
        m2 = self.r - math.sqrt(max(2.0 * (gr - cb), 0.0))
        if m1 > m2:  # rounding at c_min
            m1 = m2 = 0.5 * (m1 + m2)
        return ParabolaFlatSolution(self.l, self.r, m1, m2, cb, self.tau)

    def enumerate(self, k: int = 5) -> list[ParabolaFlatSolution]:
        """``k`` members with equispaced flat heights from ``c_min`` to ``c_max``."""
        if k < 1:
            raise ValueError("k must be positive")
        if self.is_single:
            return [self.member(self.c_min)]
        if k == 1:
            return [self.member(self.c_min)]
        return [self.member(c) for c in np.linspace(self.c_min, self.c_max, k)]


def family(l: float, r: float, g_l: float, g_r: float, tau: float = 1.0) -> Family:
    """Solution family for boundary values ``g_l`` at ``l`` and ``g_r`` at ``r``.

    ``c_min`` is the vertex height of the single parabola through both
    boundary points; when its vertex falls outside ``(l, r)`` the parabola is
    monotone and it is the only solution.
    """
    if not l < r:
        raise ValueError(f"need l < r, got l={l}, r={r}")
    if not all(math.isfinite(v) for v in (g_l, g_r, tau)):
        raise ValueError("boundary values and tau must be finite")
    if tau == 0:
        raise ValueError("tau = 0 has the unique linear solution; no parabola family")
    gl, gr = g_l / tau, g_r / tau
    length = r - l
    vertex = 0.5 * (l + r) - (gr - gl) / length
    c_min = gl - 0.5 * (l - vertex) ** 2
    # vertex on or outside the endpoints: monotone parabola, single member
    if vertex <= l + _TOL or vertex >= r - _TOL:
        c_max = c_min
    else:
        c_max = min(gl, gr)
    return Family(l, r, g_l, g_r, tau * c_min, tau * c_max, tau, vertex)


def minimal(l, r, g_l, g_r, tau: float = 1.0) -> ParabolaFlatSolution:
    fam = family(l, r, g_l, g_r, tau)
    return fam.member(fam.c_min if tau > 0 else fam.c_max)


def maximal(l, r, g_l, g_r, tau: float = 1.0) -> ParabolaFlatSolution:
    fam = family(l, r, g_l, g_r, tau)
    return fam.member(fam.c_max if tau > 0 else fam.c_min)


@dataclass
class ViscosityReport:
    boundary_ok: bool
    parabola_curvature_ok: bool
    c1_junctions_ok: bool
    flat_probes_ok: bool
    solves_aronsson: bool
    solves_normalized: bool
    failures: list = field(default_factory=list)
    notes: list = field(default_factory=list)


def verify_viscosity(
    sol: ParabolaFlatSolution, g_l: float | None = None, g_r: float | None = None
) -> ViscosityReport:
    """Check ``sol`` piece by piece against the two equations.

    The Aronsson form ``(u')^2 u'' = tau (u')^2`` is checked on each parabola
    (``u'' = tau``), at the junctions (``u'`` continuous, equal to zero) and on
    the flat piece, where any quadratic test function touching with zero
    gradient makes both sides vanish.  The normalized form ``u'' = tau`` also
    has to hold at zero gradient, which fails on a flat piece: the probe
    ``u(x0) + |x - x0|**2 / 4`` touches from above with second derivative
    ``1/2 < 1``.
    """
    failures, notes = [], []
    tau = sol.scale
    gl, gr = sol.boundary_values
    boundary_ok = True
    if g_l is not None and abs(gl - g_l) > 1e-9 * max(1.0, abs(g_l)):
        boundary_ok = False
        failures.append(f"u(l)={gl!r} differs from g_l={g_l!r}")
    if g_r is not None and abs(gr - g_r) > 1e-9 * max(1.0, abs(g_r)):
        boundary_ok = False
        failures.append(f"u(r)={gr!r} differs from g_r={g_r!r}")

    # u'' on the two parabolic pieces
    curvature_ok = True
    for name, a, b in (("descending", sol.l, min(sol.m1, sol.r)), ("ascending", max(sol.m2, sol.l), sol.r)):
        if b - a <= _TOL:
            continue
        half = 0.5 * (b - a)
        ua, um, ub = sol(a), sol(a + half), sol(b)
        second = (ua - 2 * um + ub) / half**2
        # the divided difference loses about eps*|u|/half^2 to rounding
        slack = 1e-8 * max(1.0, abs(tau)) + 64 * np.finfo(float).eps * max(abs(ua), abs(ub), 1.0) / half**2
        if abs(second - tau) > slack:
            curvature_ok = False
            failures.append(f"{name} piece on [{a:g}, {b:g}] has u''={second:g} != {tau:g}")

    # one-sided derivatives at interior junctions
    c1_ok = True
    for m in sorted({sol.m1, sol.m2}):
        if sol.l < m < sol.r:
            left = tau * (_pos(m - sol.m2) - _pos(sol.m1 - m))
            d = sol.derivative(m)
            if abs(left) > 1e-12 or abs(d) > 1e-12:
                c1_ok = False
                failures.append(f"derivative jump at junction x={m:g}")
            notes.append(f"C1 junction at x={m:g} with u'=0")

    # On a flat piece any C2 test function touching u has zero derivative, so
    # both sides of the Aronsson form vanish; it remains to check u' = 0 there.
    flat = sol.flat_interval
    flat_ok = True
    if flat is not None:
        xs = np.linspace(flat[0], flat[1], 9)
        if np.max(np.abs(sol.derivative(xs))) > 1e-12 or np.ptp(sol(xs)) > 1e-12:
            flat_ok = False
            failures.append(f"u is not constant on [{flat[0]:g}, {flat[1]:g}]")
        notes.append(f"flat piece on [{flat[0]:g}, {flat[1]:g}] at height {sol(flat[0]):g}")

    solves_aronsson = boundary_ok and curvature_ok and c1_ok and flat_ok
    solves_normalized = solves_aronsson
    if flat is not None:
        # P(x) = u(x0) + sign(tau) * |tau| |x - x0|^2 / 4 touches the flat piece
        # with zero gradient and curvature |tau|/2, short of the |tau| required
        probe_curv = 0.5 * abs(tau)
        solves_normalized = False
        failures.append(
            f"normalized equation fails on flat piece [{flat[0]:g}, {flat[1]:g}]: "
            f"probe curvature {probe_curv:g} < {abs(tau):g}"
        )
    return ViscosityReport(
        boundary_ok, curvature_ok, c1_ok, flat_ok, solves_aronsson, solves_normalized, failures, notes
    )


def sample(sol: ParabolaFlatSolution, grid: Grid) -> GridFunction:
    """Evaluate ``sol`` at every active node of a 1D grid over ``[l, r]``."""
    if grid.ndim != 1:
        raise GridError("exact 1D solutions need a 1D grid")
    lo, hi = grid.domain.extents[0]
    if abs(lo - sol.l) > 1e-9 or abs(hi - sol.r) > 1e-9:
        raise GridError(f"grid spans [{lo}, {hi}] but the solution lives on [{sol.l}, {sol.r}]")
    return GridFunction.from_callable(grid, sol)
