"""Uniform lattices over intervals, rectangles and discs, plus fields on them.

Every lattice point is classified as interior, boundary or exterior.  The
boundary is the one-cell collar of lattice points that are not interior but
touch an interior point (Chebyshev distance one), and it carries the
Dirichlet data.  Field values live in an array with the lattice shape;
exterior entries are NaN and never read.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import binary_dilation, distance_transform_edt
from scipy.spatial.distance import pdist

from .expr import Expression, ExprError, parse_expr

EXTERIOR, INTERIOR, BOUNDARY = 0, 1, 2
CLASS_NAMES = {EXTERIOR: "exterior", INTERIOR: "interior", BOUNDARY: "boundary"}
CLASS_CODES = {v: k for k, v in CLASS_NAMES.items()}

KINDS = ("interval", "rectangle", "disc")


class GridError(ValueError):
    pass


@dataclass(frozen=True)
class DomainSpec:
    """Domain description.

    ``extents`` holds ``(lo, hi)`` per axis.  For ``kind="disc"`` the extents
    are the bounding rectangle of the lattice and ``center``/``radius``
    describe the disc; ``center`` defaults to the rectangle midpoint.
    """

    kind: str
    extents: tuple
    h: float
    center: tuple | None = None
    radius: float | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise GridError(f"unknown domain kind {self.kind!r}; expected one of {KINDS}")
        ext = tuple((float(lo), float(hi)) for lo, hi in self.extents)
        object.__setattr__(self, "extents", ext)
        want = 1 if self.kind == "interval" else 2
        if len(ext) != want:
            raise GridError(f"{self.kind} domain needs {want} axis extent(s), got {len(ext)}")
        h = float(self.h)
        object.__setattr__(self, "h", h)
        if not (math.isfinite(h) and h > 0):
            raise GridError(f"grid spacing must be positive and finite, got h={self.h}")
        for axis, (lo, hi) in enumerate(ext):
            if not (math.isfinite(lo) and math.isfinite(hi)) or hi <= lo:
                raise GridError(f"degenerate extent on axis {axis}: ({lo}, {hi})")
            length = hi - lo
            cells = round(length / h)
            if cells < 2:
                raise GridError(
                    f"axis {axis} extent {length:g} holds fewer than two cells of size h={h:g}"
                )
            if abs(cells * h - length) > 1e-6 * length:
                raise GridError(f"h={h:g} does not divide axis {axis} extent {length:g}")
        if self.kind == "disc":
            if self.radius is None or not (float(self.radius) > 0):
                raise GridError("disc domain needs a positive radius")
            object.__setattr__(self, "radius", float(self.radius))
            c = self.center
            if c is None:
                c = tuple(0.5 * (lo + hi) for lo, hi in ext)
            c = tuple(float(v) for v in c)
            object.__setattr__(self, "center", c)
            for axis, ((lo, hi), ci) in enumerate(zip(ext, c)):
                if not (lo < ci - self.radius and ci + self.radius < hi):
                    raise GridError(f"disc does not fit strictly inside the rectangle on axis {axis}")

    @property
    def ndim(self) -> int:
        return len(self.extents)

    @property
    def cells(self) -> tuple:
        return tuple(round((hi - lo) / self.h) for lo, hi in self.extents)


@dataclass(frozen=True, eq=False)
class Grid:
    domain: DomainSpec
    node_class: np.ndarray

    @property
    def h(self) -> float:
        return self.domain.h

    @property
    def ndim(self) -> int:
        return self.node_class.ndim

    @property
    def shape(self) -> tuple:
        return self.node_class.shape

    @property
    def axes(self) -> list[np.ndarray]:
        return [lo + self.h * np.arange(n) for (lo, _), n in zip(self.domain.extents, self.shape)]

    @property
    def coords(self) -> list[np.ndarray]:
        """Physical coordinates, one lattice-shaped array per axis."""
        return list(np.meshgrid(*self.axes, indexing="ij"))

    @property
    def interior(self) -> np.ndarray:
        return self.node_class == INTERIOR

    @property
    def boundary(self) -> np.ndarray:
        return self.node_class == BOUNDARY

    @property
    def active(self) -> np.ndarray:
        return self.node_class != EXTERIOR

    def counts(self) -> dict:
        return {name: int(np.sum(self.node_class == code)) for code, name in CLASS_NAMES.items()}

    def point(self, index) -> tuple:
        return tuple(float(self.axes[a][i]) for a, i in enumerate(index))

    def index_of(self, *x) -> tuple:
        """Lattice index of the node nearest to the physical point ``x``."""
        return tuple(
            int(round((xi - lo) / self.h)) for xi, (lo, _) in zip(x, self.domain.extents)
        )

    def same_lattice(self, other: Grid) -> bool:
        return (
            self.shape == other.shape
            and math.isclose(self.h, other.h)
            and np.allclose([e[0] for e in self.domain.extents], [e[0] for e in other.domain.extents])
            and np.array_equal(self.node_class, other.node_class)
        )


def build_grid(spec: DomainSpec) -> Grid:
    """Lay the lattice over ``spec`` and classify its nodes."""
    shape = tuple(n + 1 for n in spec.cells)
    if spec.kind in ("interval", "rectangle"):
        interior = np.zeros(shape, dtype=bool)
        interior[tuple(slice(1, -1) for _ in shape)] = True
    else:
        axes = [lo + spec.h * np.arange(n) for (lo, _), n in zip(spec.extents, shape)]
        pts = np.meshgrid(*axes, indexing="ij")
        r2 = sum((p - c) ** 2 for p, c in zip(pts, spec.center))
        interior = r2 < spec.radius**2
    if not interior.any():
        raise GridError("domain has no interior lattice nodes")
    collar = binary_dilation(interior, structure=np.ones((3,) * len(shape), dtype=bool)) & ~interior
    node_class = np.full(shape, EXTERIOR, dtype=np.int8)
    node_class[interior] = INTERIOR
    node_class[collar] = BOUNDARY
    node_class.setflags(write=False)
    return Grid(spec, node_class)


def ball_offsets(ndim: int, eps: float, h: float) -> np.ndarray:
    """Integer lattice offsets ``o`` with ``|o|*h <= eps``, lexicographic order."""
    if eps < h * (1 - 1e-12):
        raise GridError(f"ball radius eps={eps:g} is smaller than the spacing h={h:g}")
    r = int(math.floor(eps / h * (1 + 1e-12)))
    rng = np.arange(-r, r + 1)
    offs = np.stack(np.meshgrid(*([rng] * ndim), indexing="ij"), axis=-1).reshape(-1, ndim)
    keep = (offs**2).sum(axis=1) * h * h <= eps * eps * (1 + 1e-12)
    return offs[keep]


def ball_stencil(grid: Grid, node, eps: float) -> list[tuple]:
    """Active nodes within Euclidean distance ``eps`` of ``node`` (itself included)."""
    node = np.asarray(node, dtype=int).reshape(grid.ndim)
    idx = ball_offsets(grid.ndim, eps, grid.h) + node
    inside = np.all((idx >= 0) & (idx < np.array(grid.shape)), axis=1)
    idx = idx[inside]
    idx = idx[grid.active[tuple(idx.T)]]
    return [tuple(int(v) for v in row) for row in idx]


def boundary_distance(grid: Grid) -> np.ndarray:
    """Euclidean distance from each lattice node to the nearest boundary node."""
    return distance_transform_edt(~grid.boundary) * grid.h


def stencil_table(grid: Grid, eps: float, shrink: bool = False):
    """CSR table of ball stencils for every interior node.

    Returns ``(nodes, indptr, members)``: ``nodes`` are the flat indices of the
    interior nodes in C order, and ``members[indptr[k]:indptr[k+1]]`` the flat
    indices of the stencil of ``nodes[k]``.  With ``shrink`` the ball radius at
    a node is ``min(eps, distance to the nearest boundary node)``, so that
    balls near the boundary stay centred instead of being cut off.
    """
    offs = ball_offsets(grid.ndim, eps, grid.h)
    interior_idx = np.argwhere(grid.interior)
    shape = np.array(grid.shape)
    if shrink:
        radius = np.minimum(eps, boundary_distance(grid)[grid.interior])
    else:
        radius = np.full(len(interior_idx), float(eps))
    cols = []
    masks = []
    for o in offs:
        nb = interior_idx + o
        ok = np.all((nb >= 0) & (nb < shape), axis=1)
        nbc = np.where(ok[:, None], nb, 0)
        ok &= grid.active[tuple(nbc.T)]
        ok &= np.sqrt(float(o @ o)) * grid.h <= radius * (1 + 1e-12)
        cols.append(np.ravel_multi_index(tuple(nbc.T), grid.shape))
        masks.append(ok)
    cols = np.stack(cols, axis=1)
    masks = np.stack(masks, axis=1)
    counts = masks.sum(axis=1)
    indptr = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
    members = cols[masks].astype(np.int64)
    nodes = np.ravel_multi_index(tuple(interior_idx.T), grid.shape).astype(np.int64)
    return nodes, indptr, members, radius


@dataclass(frozen=True, eq=False)
class BoundaryData:
    expr: Expression
    values: np.ndarray
    lipschitz_estimate: float

    @property
    def max(self) -> float:
        return float(np.nanmax(self.values))

    @property
    def min(self) -> float:
        return float(np.nanmin(self.values))


def sample_boundary(expr, grid: Grid) -> BoundaryData:
    """Evaluate a boundary expression at the boundary collar.

    ``values`` has the lattice shape with NaN away from the boundary.
    """
    if isinstance(expr, str):
        expr = parse_expr(expr)
    names = ("x", "y")[: grid.ndim]
    extra = expr.variables - set(names)
    if extra:
        raise ExprError(
            f"variable(s) {sorted(extra)} not defined on a {grid.ndim}D domain", expr.src, 0
        )
    idx = np.argwhere(grid.boundary)
    pts = [grid.axes[a][idx[:, a]] for a in range(grid.ndim)]
    try:
        vals = expr(*pts)
    except ExprError:
        # locate the first failing node
        for k in range(len(idx)):
            try:
                expr(*(p[k] for p in pts))
            except ExprError as exc:
                node = tuple(int(i) for i in idx[k])
                raise ExprError(
                    f"cannot evaluate g at boundary node {node} = {grid.point(node)}: {exc}",
                    expr.src,
                    exc.pos,
                ) from None
        raise
    if not np.all(np.isfinite(vals)):
        raise ExprError("g is not finite on the boundary", expr.src, 0)
    values = np.full(grid.shape, np.nan)
    values[tuple(idx.T)] = vals
    values.setflags(write=False)
    return BoundaryData(expr, values, _pairwise_lipschitz(np.stack(pts, axis=1), vals))


def _pairwise_lipschitz(pts: np.ndarray, vals: np.ndarray) -> float:
    if len(vals) < 2:
        return 0.0
    dist = pdist(pts)
    dv = pdist(vals[:, None])
    return float(np.max(dv / dist))


@dataclass(eq=False)
class GridFunction:
    grid: Grid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.grid.shape:
            raise GridError(f"values shape {self.values.shape} != lattice shape {self.grid.shape}")

    @classmethod
    def from_callable(cls, grid: Grid, fn) -> GridFunction:
        vals = np.full(grid.shape, np.nan)
        act = grid.active
        vals[act] = np.broadcast_to(fn(*(c[act] for c in grid.coords)), vals[act].shape)
        return cls(grid, vals)

    @classmethod
    def constant(cls, grid: Grid, c: float) -> GridFunction:
        vals = np.where(grid.active, float(c), np.nan)
        return cls(grid, vals)

    def copy(self) -> GridFunction:
        return GridFunction(self.grid, self.values.copy())

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.values[self.grid.active])))

    def sup_distance(self, other, where=None) -> float:
        """Max |self - other| over active nodes (or ``where``)."""
        other_vals = other.values if isinstance(other, GridFunction) else np.asarray(other)
        mask = self.grid.active if where is None else where
        return float(np.max(np.abs(self.values - other_vals)[mask]))

    def __neg__(self):
        return GridFunction(self.grid, -self.values)

    def __mul__(self, k: float):
        return GridFunction(self.grid, self.values * k)

    __rmul__ = __mul__

    def __add__(self, k: float):
        return GridFunction(self.grid, self.values + k)


@dataclass(frozen=True, eq=False)
class Problem:
    grid: Grid
    g: BoundaryData
    tau: float

    def __post_init__(self):
        if not math.isfinite(self.tau):
            raise GridError(f"tau must be finite, got {self.tau}")

    @classmethod
    def make(cls, spec: DomainSpec, g, tau: float) -> Problem:
        grid = build_grid(spec)
        return cls(grid, sample_boundary(g, grid), float(tau))

    def with_boundary(self, values: np.ndarray, tau: float | None = None, src: str = "") -> Problem:
        """Same grid with pre-sampled boundary values (used by sign/scale maps)."""
        vals = np.where(self.grid.boundary, values, np.nan)
        vals.setflags(write=False)
        bd = BoundaryData(
            parse_expr(src) if src else self.g.expr,
            vals,
            _pairwise_lipschitz(
                np.argwhere(self.grid.boundary) * self.grid.h, vals[self.grid.boundary]
            ),
        )
        return Problem(self.grid, bd, self.tau if tau is None else float(tau))


# CSV ------------------------------------------------------------------------

def _header(ndim: int) -> list[str]:
    return ["ix", "iy"][:ndim] + ["x", "y"][:ndim] + ["class", "value"]


def to_csv(u: GridFunction) -> str:
    grid = u.grid
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(_header(grid.ndim))
    axes = grid.axes
    for idx in np.ndindex(grid.shape):
        idx = tuple(int(i) for i in idx)
        row = [str(i) for i in idx]
        row += [repr(float(axes[a][i])) for a, i in enumerate(idx)]
        row += [CLASS_NAMES[int(grid.node_class[idx])], repr(float(u.values[idx]))]
        w.writerow(row)
    return buf.getvalue()


def write_csv(u: GridFunction, path) -> None:
    Path(path).write_text(to_csv(u))


def read_csv(path, grid: Grid | None = None) -> GridFunction:
    """Load a field written by :func:`write_csv`.

    Without ``grid`` the lattice is rebuilt from the file: spacing and origin
    from the coordinates, node classes from the class column.
    """
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    ndim = 1 if header[0] == "ix" and header[1] != "iy" else 2
    if header != _header(ndim):
        raise GridError(f"unexpected CSV header {header}")
    idx = np.array([[int(r[a]) for a in range(ndim)] for r in body])
    xs = np.array([[float(r[ndim + a]) for a in range(ndim)] for r in body])
    cls = np.array([CLASS_CODES[r[2 * ndim]] for r in body], dtype=np.int8)
    vals = np.array([float(r[2 * ndim + 1]) for r in body])
    if grid is None:
        grid = _grid_from_nodes(idx, xs, cls)
    if np.any(idx.max(axis=0) >= np.array(grid.shape)):
        raise GridError("CSV indices exceed the lattice")
    if not np.array_equal(grid.node_class[tuple(idx.T)], cls):
        raise GridError("CSV node classes do not match the grid")
    values = np.full(grid.shape, np.nan)
    values[tuple(idx.T)] = vals
    return GridFunction(grid, values)


def _grid_from_nodes(idx, xs, cls) -> Grid:
    ndim = idx.shape[1]
    shape = tuple(int(n) for n in idx.max(axis=0) + 1)
    h = None
    origin = []
    for a in range(ndim):
        order = np.argsort(idx[:, a])
        i, x = idx[order, a], xs[order, a]
        span = i[-1] - i[0]
        if span == 0:
            raise GridError("CSV lattice is degenerate")
        ha = (x[-1] - x[0]) / span
        h = ha if h is None else h
        origin.append(x[0] - i[0] * ha)
    extents = tuple((o, o + (n - 1) * h) for o, n in zip(origin, shape))
    spec = DomainSpec("interval" if ndim == 1 else "rectangle", extents, h)
    node_class = np.full(shape, EXTERIOR, dtype=np.int8)
    node_class[tuple(idx.T)] = cls
    node_class.setflags(write=False)
    return Grid(spec, node_class)
