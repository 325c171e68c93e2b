"""Graph features of grid functions and the checks built on them.

A *well* is a connected set of interior nodes ``V`` with
``min_V u < min_{dV} u``; a *flat piece* is a connected set on which ``u`` is
constant and which holds a discrete ball of radius ``r_min``.  A solution
without wells is the absolute minimizer and one without flat pieces is the
value function; :func:`classify` reads off the verdict.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.ndimage import distance_transform_edt, label

from .grid import Grid, GridError, GridFunction

WELL_TOL = 1e-3
FLAT_TOL = 1e-6
R_MIN_CELLS = 3

VERDICTS = {
    (False, False): "Unique",
    (False, True): "AbsoluteMinimizerOnly",
    (True, False): "ValueFunctionOnly",
    (True, True): "Intermediate",
}


@dataclass
class Well:
    nodes: np.ndarray
    threshold: float
    witness_min: float

    @property
    def depth(self) -> float:
        return self.threshold - self.witness_min

    def to_dict(self, grid: Grid) -> dict:
        return {
            "size": int(len(self.nodes)),
            "threshold": self.threshold,
            "witness_min": self.witness_min,
            "depth": self.depth,
            "extent": _extent(grid, self.nodes),
        }


@dataclass
class FlatPiece:
    nodes: np.ndarray
    height: float
    inradius: float

    def to_dict(self, grid: Grid) -> dict:
        return {
            "size": int(len(self.nodes)),
            "height": self.height,
            "inradius": self.inradius,
            "extent": _extent(grid, self.nodes),
        }


@dataclass
class Classification:
    has_wells: bool
    has_flats: bool
    verdict: str
    wells: list = field(default_factory=list, repr=False)
    flats: list = field(default_factory=list, repr=False)

    def to_dict(self, grid: Grid) -> dict:
        return {
            "verdict": self.verdict,
            "has_wells": self.has_wells,
            "has_flats": self.has_flats,
            "wells": [w.to_dict(grid) for w in self.wells],
            "flat_pieces": [f.to_dict(grid) for f in self.flats],
        }


def _extent(grid: Grid, nodes: np.ndarray) -> list:
    idx = np.array(np.unravel_index(nodes, grid.shape)).T
    lo = grid.point(idx.min(axis=0))
    hi = grid.point(idx.max(axis=0))
    return [[a, b] for a, b in zip(lo, hi)]


def value_range(u: GridFunction) -> float:
    vals = u.values[u.grid.active]
    return float(vals.max() - vals.min())


def _axis_neighbors(shape):
    ndim = len(shape)
    strides = np.cumprod((1,) + shape[::-1][:-1])[::-1]
    out = []
    for d in range(ndim):
        for s in (1, -1):
            out.append((d, s, int(strides[d] * s)))
    return out


def fill_levels(u: GridFunction) -> np.ndarray:
    """Lowest level at which each node drains to the boundary.

    ``fill[x]`` is the minimum over axis-neighbor paths from ``x`` to a
    boundary node of the maximum of ``u`` along the path.
    """
    grid = u.grid
    vals = u.values.ravel()
    active = grid.active.ravel()
    fill = np.full(vals.shape, np.inf)
    done = np.zeros(vals.shape, dtype=bool)
    heap = [(float(vals[i]), int(i)) for i in np.flatnonzero(grid.boundary.ravel())]
    heapq.heapify(heap)
    for lvl, i in heap:
        fill[i] = lvl
    nbrs = _axis_neighbors(grid.shape)
    multi = np.array(np.unravel_index(np.arange(vals.size), grid.shape)).T
    shape = grid.shape
    while heap:
        lvl, i = heapq.heappop(heap)
        if done[i]:
            continue
        done[i] = True
        for d, s, off in nbrs:
            c = multi[i, d] + s
            if c < 0 or c >= shape[d]:
                continue
            j = i + off
            if not active[j] or done[j]:
                continue
            nl = max(lvl, float(vals[j]))
            if nl < fill[j]:
                fill[j] = nl
                heapq.heappush(heap, (nl, j))
    return fill.reshape(grid.shape)


def detect_wells(u: GridFunction, well_tol: float | None = None) -> list[Well]:
    """Maximal wells deeper than ``well_tol`` (default ``1e-3 * range(u)``).

    Each reported set is a connected component of ``{u < t}`` that holds no
    boundary node, where ``t`` is the level at which it would spill over.
    """
    grid = u.grid
    if well_tol is None:
        well_tol = WELL_TOL * value_range(u)
    fill = fill_levels(u)
    dip = grid.interior & (u.values < fill)
    labels, n = label(dip)
    wells = []
    for k in range(1, n + 1):
        mask = labels == k
        nodes = np.flatnonzero(mask.ravel())
        t = float(fill[mask].max())
        m = float(u.values[mask].min())
        if m < t - well_tol:
            wells.append(Well(nodes, t, m))
    wells.sort(key=lambda w: (w.witness_min, int(w.nodes[0])))
    return wells


def detect_flat_pieces(
    u: GridFunction, flat_tol: float | None = None, r_min: float | None = None
) -> list[FlatPiece]:
    """Connected sets of interior nodes where ``u`` is constant to ``flat_tol``.

    A node is flat when the oscillation of ``u`` over it and its axis
    neighbors is at most ``flat_tol`` (default ``1e-6 * range(u)``); flat
    components count when they contain a discrete ball of radius ``r_min``
    (default ``3h``).
    """
    grid = u.grid
    if flat_tol is None:
        flat_tol = FLAT_TOL * value_range(u)
    if r_min is None:
        r_min = R_MIN_CELLS * grid.h
    vals = np.where(grid.active, u.values, np.nan)
    hi = vals.copy()
    lo = vals.copy()
    for d in range(grid.ndim):
        for s in (1, -1):
            shifted = np.full(vals.shape, np.nan)
            src = [slice(None)] * grid.ndim
            dst = [slice(None)] * grid.ndim
            if s > 0:
                src[d], dst[d] = slice(1, None), slice(None, -1)
            else:
                src[d], dst[d] = slice(None, -1), slice(1, None)
            shifted[tuple(dst)] = vals[tuple(src)]
            hi = np.fmax(hi, shifted)
            lo = np.fmin(lo, shifted)
    flat = grid.interior & (hi - lo <= flat_tol)
    labels, n = label(flat)
    pieces = []
    for k in range(1, n + 1):
        mask = labels == k
        rad = _inradius(mask, grid.h)
        if rad >= r_min * (1 - 1e-9):
            nodes = np.flatnonzero(mask.ravel())
            pieces.append(FlatPiece(nodes, float(np.mean(u.values[mask])), rad))
    pieces.sort(key=lambda f: int(f.nodes[0]))
    return pieces


def _inradius(mask: np.ndarray, h: float) -> float:
    """Largest R such that some closed lattice ball of radius R lies in ``mask``."""
    padded = np.pad(mask, 1)
    d2 = distance_transform_edt(padded, return_distances=True) ** 2
    m = int(round(float(d2.max())))
    # largest sum of ndim squares strictly below m
    ndim = mask.ndim
    best = 0
    top = int(math.isqrt(max(m - 1, 0)))
    for k in range(m - 1, -1, -1):
        if _sum_of_squares(k, ndim, top):
            best = k
            break
    return math.sqrt(best) * h


def _sum_of_squares(k: int, ndim: int, top: int) -> bool:
    if ndim == 1:
        r = math.isqrt(k)
        return r * r == k
    for a in range(top + 1):
        rest = k - a * a
        if rest < 0:
            break
        r = math.isqrt(rest)
        if r * r == rest:
            return True
    return False


def classify(u: GridFunction, **tolerances) -> Classification:
    well_kw = {k: v for k, v in tolerances.items() if k == "well_tol"}
    flat_kw = {k: v for k, v in tolerances.items() if k in ("flat_tol", "r_min")}
    wells = detect_wells(u, **well_kw)
    flats = detect_flat_pieces(u, **flat_kw)
    verdict = VERDICTS[(bool(wells), bool(flats))]
    return Classification(bool(wells), bool(flats), verdict, wells, flats)


@dataclass
class MaxPrincipleResult:
    ok: bool
    margin: float


def check_max_principle(u: GridFunction, tol: float = 1e-9) -> MaxPrincipleResult:
    """Interior values stay below the boundary maximum; margin = gap between the two."""
    grid = u.grid
    margin = float(u.values[grid.boundary].max() - u.values[grid.interior].max())
    return MaxPrincipleResult(margin >= -tol, margin)


@dataclass
class OrderingResult:
    ok: bool
    worst_violation: float
    max_gap: float
    max_gap_at: tuple
    min_gap: float


def check_ordering(u_min: GridFunction, u_max: GridFunction, tol: float = 0.0) -> OrderingResult:
    """``u_min <= u_max + tol`` on every active node."""
    if not u_min.grid.same_lattice(u_max.grid):
        raise GridError("ordering check needs both functions on the same grid")
    act = u_min.grid.active
    gap = np.where(act, u_max.values - u_min.values, np.nan)
    worst = float(max(0.0, -np.nanmin(gap)))
    k = np.unravel_index(np.nanargmax(gap), gap.shape)
    return OrderingResult(
        worst <= tol, worst, float(np.nanmax(gap)), u_min.grid.point(k), float(np.nanmin(gap))
    )


# absolute-minimizer sampling ------------------------------------------------

def esssup_h(values: np.ndarray, grid: Grid, region: np.ndarray, tau: float = 1.0) -> float:
    """Max over ``region`` of ``|D u|**2 / 2 - tau * u``, one-sided differences.

    ``region`` is a lattice-shaped mask of interior nodes; differences reach
    into the surrounding nodes, which hold the common boundary values.
    """
    idx = np.argwhere(region)
    best = -np.inf
    h = grid.h
    base = values[tuple(idx.T)]
    for signs in np.array(np.meshgrid(*([[1, -1]] * grid.ndim), indexing="ij")).reshape(grid.ndim, -1).T:
        sq = np.zeros(len(idx))
        for d, s in enumerate(signs):
            nb = idx.copy()
            nb[:, d] += s
            sq += ((values[tuple(nb.T)] - base) / h) ** 2
        best = max(best, float(np.max(0.5 * sq - tau * base)))
    return best


@dataclass
class AbsMinReport:
    passed: bool
    slack: float
    trials: int
    perturbations: int
    worst_margin: float
    worst_region: list
    beaten: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def _random_region(grid: Grid, rng: np.random.Generator) -> np.ndarray:
    idx = np.argwhere(grid.interior)
    lo, hi = idx.min(axis=0), idx.max(axis=0)
    for _ in range(1000):
        a = np.array([rng.integers(l, h + 1) for l, h in zip(lo, hi)])
        b = np.array([rng.integers(l, h + 1) for l, h in zip(lo, hi)])
        a, b = np.minimum(a, b), np.maximum(a, b)
        if np.any(b - a < 2):
            continue
        mask = np.zeros(grid.shape, dtype=bool)
        mask[tuple(slice(i, j + 1) for i, j in zip(a, b))] = True
        if np.all(grid.interior[mask]):
            return mask
    raise GridError("could not place a random sub-region in the interior")


def _bump(grid: Grid, region: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Smooth random function vanishing outside ``region`` (a box of nodes)."""
    idx = np.argwhere(region)
    lo, hi = idx.min(axis=0) - 1, idx.max(axis=0) + 1
    out = np.ones(grid.shape)
    for d in range(grid.ndim):
        n = np.arange(grid.shape[d])
        t = np.clip((n - lo[d]) / (hi[d] - lo[d]), 0.0, 1.0)
        k = rng.integers(1, 4)
        shape = [1] * grid.ndim
        shape[d] = -1
        out = out * np.sin(np.pi * k * t).reshape(shape)
    return np.where(region, out, 0.0)


def _interpolant(values: np.ndarray, grid: Grid, region: np.ndarray) -> np.ndarray:
    """Region values replaced by the discrete harmonic extension of their surroundings."""
    v = values.copy()
    idx = np.argwhere(region)
    if grid.ndim == 1:
        a, b = idx.min() - 1, idx.max() + 1
        t = (np.arange(a, b + 1) - a) / (b - a)
        v[a : b + 1] = (1 - t) * values[a] + t * values[b]
        return v
    v[region] = np.mean(values[~region & grid.active])
    for _ in range(4 * int(region.sum() ** 0.5) + 50):
        avg = np.zeros(len(idx))
        for d in range(grid.ndim):
            for s in (1, -1):
                nb = idx.copy()
                nb[:, d] += s
                avg += v[tuple(nb.T)]
        v[tuple(idx.T)] = avg / (2 * grid.ndim)
    return v


def check_absolute_minimizing(
    u: GridFunction,
    trials: int = 20,
    seed: int = 0,
    tau: float = 1.0,
    slack: float = 0.05,
    batch: int = 10,
    regions: list | None = None,
) -> AbsMinReport:
    """Sampling test of the absolute-minimizer property.

    On each region ``V`` (random boxes unless ``regions`` is given) ``u`` is
    compared with competitors that agree with it outside ``V``: the harmonic
    interpolant of the surrounding values, and ``u`` or that interpolant plus
    random bumps.  A competitor whose ``esssup_V H`` undercuts that of ``u``
    by more than ``slack`` counts as beating it.  Passing is evidence, not
    proof.
    """
    grid = u.grid
    rng = np.random.default_rng(seed)
    vals = u.values
    amp = max(value_range(u), grid.h)
    if regions is None:
        regions = [_random_region(grid, rng) for _ in range(trials)]
    worst, worst_region, beaten, count = -np.inf, [], [], 0
    for region in regions:
        hu = esssup_h(vals, grid, region, tau)
        interp = _interpolant(vals, grid, region)
        candidates = [interp]
        for j in range(batch - 1):
            base = vals if j % 2 == 0 else interp
            a = rng.uniform(-1.0, 1.0) * amp * 10.0 ** rng.uniform(-3, 0)
            candidates.append(base + a * _bump(grid, region, rng))
        nodes = np.flatnonzero(region.ravel())
        ext = _extent(grid, nodes)
        for v in candidates:
            count += 1
            margin = hu - esssup_h(v, grid, region, tau)
            if margin > worst:
                worst, worst_region = margin, ext
            if margin > slack:
                beaten.append({"region": ext, "margin": margin})
    return AbsMinReport(not beaten, slack, len(regions), count, float(worst), worst_region, beaten)
