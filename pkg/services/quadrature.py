"""Interval quadrature of integrals against mu_alpha = dist(x, E)^alpha dx.

Cells follow the fractal's own grid: ternary squares for the carpet, the
triangular lattice for the gasket and, for the snowflake, sub-triangles of
the equilateral pieces tiling the polygon domain of K_n. Whole fractal cells
and holes are integrated exactly from the closed forms; every other cell is
bracketed from distance bounds. The estimate is the sum of the per-cell
intervals, refined until its relative width meets the tolerance or the cell
budget or memory cap runs out.

For the snowflake the measure lives on the interior domain. The part beyond
K_n is a union of caps, one per polygon segment, bounded in closed form and
never refined.
"""
import logging
import math
import time
from typing import Callable, List, NamedTuple, Optional, Tuple

import numpy as np

from core.config import get_settings
from core.errors import InputError
from models.schemas import (
    Ball, FractalKind, FractalSpec, GridCase, IntervalValue, MeasureEstimate, Region, Square, Status,
)
from services import closed_forms
from services.geometry import (
    SQRT3, carpet_grid_cases, distance_many, gasket_grid_cases, koch_caps, koch_index, koch_pieces,
    triangle_distance,
)

logger = logging.getLogger(__name__)

# (centers, radii, d_minus, d_plus) -> (f_lo, f_hi) over each cell
Integrand = Callable[[np.ndarray, np.ndarray, np.ndarray, np.ndarray], Tuple[np.ndarray, np.ndarray]]
# (centers, radii) -> (g(c), |grad g(c)|, sup of the Hessian norm over the cell disc)
Taylor = Callable[[np.ndarray, np.ndarray], Tuple[np.ndarray, np.ndarray, np.ndarray]]

CELL, HOLE, EXTERIOR, MIXED, PLAIN = 0, 1, 2, 3, 4
_CASE_CODE = {GridCase.CELL.value: CELL, GridCase.HOLE.value: HOLE,
              GridCase.EXTERIOR.value: EXTERIOR, GridCase.MIXED.value: MIXED}

OUTSIDE, PARTIAL, INSIDE = -1, 0, 1
_EPS = 1e-12
# bytes held per live cell, evaluation temporaries included
CELL_BYTES = 256
# cells narrower than this share of the target width per live cell are settled
RETIRE_SHARE = 1e-3


class CellBatch(NamedTuple):
    level: np.ndarray
    i: np.ndarray
    j: np.ndarray
    up: np.ndarray
    case: np.ndarray
    owner: np.ndarray

    @property
    def count(self) -> int:
        return int(self.level.shape[0])

    def take(self, index) -> "CellBatch":
        return CellBatch(*(col[index] for col in self))

    @classmethod
    def concat(cls, batches) -> "CellBatch":
        return cls(*(np.concatenate(cols) for cols in zip(*batches)))

    @classmethod
    def empty(cls) -> "CellBatch":
        none = np.zeros(0, dtype=np.int64)
        return cls(none, none, none, np.zeros(0, dtype=bool), np.zeros(0, dtype=np.int8), none)


class CellShape(NamedTuple):
    centers: np.ndarray
    radius: np.ndarray
    inradius: np.ndarray
    area: np.ndarray
    side: np.ndarray
    vertices: Optional[np.ndarray] = None

    def take(self, index) -> "CellShape":
        return CellShape(*(None if col is None else col[index] for col in self))


def _codes(cases: np.ndarray) -> np.ndarray:
    return np.array([_CASE_CODE[c] for c in cases], dtype=np.int8)


def _scaled_power(const: np.ndarray, side: np.ndarray, alpha: float) -> np.ndarray:
    with np.errstate(invalid="ignore", over="ignore"):
        return np.where(np.isinf(const), np.inf, const * side ** (alpha + 2))


# ---------------------------------------------------------------------------
# Region relations

def _squares_vs_region(shape: CellShape, region: Region):
    """Relation codes and overlap bounds of axis-aligned square cells"""
    half = shape.side / 2
    c = region.center.as_array()
    gap = np.abs(shape.centers - c)
    if isinstance(region, Square):
        rh = region.side / 2
        inside = np.all(gap + half[:, None] <= rh * (1 + _EPS), axis=1)
        outside = np.any(gap >= (rh + half[:, None]) * (1 - _EPS), axis=1)
        lo = np.maximum(shape.centers - half[:, None], c - rh)
        hi = np.minimum(shape.centers + half[:, None], c + rh)
        overlap = np.prod(np.clip(hi - lo, 0.0, None), axis=1)
        rel = np.where(inside, INSIDE, np.where(outside, OUTSIDE, PARTIAL))
        return rel, overlap, overlap
    far = np.hypot(gap[:, 0] + half, gap[:, 1] + half)
    near = np.hypot(np.maximum(gap[:, 0] - half, 0.0), np.maximum(gap[:, 1] - half, 0.0))
    rel = np.where(far <= region.radius * (1 + _EPS), INSIDE,
                   np.where(near >= region.radius * (1 - _EPS), OUTSIDE, PARTIAL))
    return rel, np.zeros_like(shape.area), shape.area


def _points_in_triangles(points: np.ndarray, verts: np.ndarray) -> np.ndarray:
    def cross(a, b, p):
        return (b[..., 0] - a[..., 0]) * (p[..., 1] - a[..., 1]) - (b[..., 1] - a[..., 1]) * (p[..., 0] - a[..., 0])
    s = [cross(verts[:, k], verts[:, (k + 1) % 3], points) for k in range(3)]
    return ((s[0] >= 0) & (s[1] >= 0) & (s[2] >= 0)) | ((s[0] <= 0) & (s[1] <= 0) & (s[2] <= 0))


def _triangles_vs_region(shape: CellShape, region: Region):
    verts = shape.vertices
    c = region.center.as_array()
    if isinstance(region, Square):
        rh = region.side / 2
        inside = np.all(np.abs(verts - c) <= rh * (1 + _EPS), axis=(1, 2))
        vmin, vmax = verts.min(axis=1), verts.max(axis=1)
        outside = np.any(vmin >= c + rh * (1 - _EPS), axis=1) | np.any(vmax <= c - rh * (1 - _EPS), axis=1)
    else:
        far = np.max(np.linalg.norm(verts - c, axis=2), axis=1)
        anchor = np.broadcast_to(c, (len(verts), 2))
        near = np.where(_points_in_triangles(anchor, verts), 0.0, triangle_distance(anchor, verts))
        inside = far <= region.radius * (1 + _EPS)
        outside = near >= region.radius * (1 - _EPS)
    rel = np.where(inside, INSIDE, np.where(outside, OUTSIDE, PARTIAL))
    return rel, np.zeros_like(shape.area), shape.area


def _span(lo: float, hi: float, side: float) -> np.ndarray:
    """Indices of grid intervals of the given side meeting (lo, hi)"""
    first = math.floor(lo / side + 1e-9)
    return np.arange(first, max(math.ceil(hi / side - 1e-9), first + 1))




# ---------------------------------------------------------------------------
# Grids

class SquareGrid:
    """Squares of side root_side * base**-level with lower-left corner origin + (i, j) * side"""

    structured = False

    def __init__(self, base: int, origin, root_side: float):
        self.base = base
        self.origin = np.asarray(origin, dtype=float)
        self.root_side = float(root_side)
        a, b = np.meshgrid(np.arange(base), np.arange(base), indexing="ij")
        self._da, self._db = a.ravel(), b.ravel()
        self.children_per_cell = base * base

    def shape(self, batch: CellBatch) -> CellShape:
        side = self.root_side * np.power(float(self.base), -batch.level.astype(float))
        lower = self.origin + np.column_stack([batch.i, batch.j]).astype(float) * side[:, None]
        return CellShape(lower + side[:, None] / 2, side * math.sqrt(2) / 2, side / 2, side * side, side)

    def relation(self, shape: CellShape, region: Region):
        return _squares_vs_region(shape, region)

    def children(self, batch: CellBatch) -> CellBatch:
        k, n = self.children_per_cell, batch.count
        da, db = np.tile(self._da, n), np.tile(self._db, n)
        level = np.repeat(batch.level + 1, k)
        i = np.repeat(batch.i * self.base, k) + da
        j = np.repeat(batch.j * self.base, k) + db
        case = self._child_cases(np.repeat(batch.case, k), level, da, db)
        return CellBatch(level, i, j, np.ones(level.shape, dtype=bool), case, np.repeat(batch.owner, k))

    def _child_cases(self, parent, level, da, db):
        return parent.copy()

    def edge_touching(self, shape: CellShape, d_center: np.ndarray) -> np.ndarray:
        return d_center <= shape.inradius * (1 + 1e-9)


class CarpetGrid(SquareGrid):
    """Ternary grid squares classified against the carpet"""

    structured = True

    def __init__(self):
        super().__init__(3, (0.0, 0.0), 1.0)

    def roots(self, region: Region) -> CellBatch:
        lo, hi = region.bbox()
        size = float(np.max(hi - lo))
        level = math.floor(-math.log(size) / math.log(3.0) + 1e-9)
        side = 3.0 ** (-level)
        ms, ns = _span(lo[0], hi[0], side), _span(lo[1], hi[1], side)
        m, n = (a.ravel().astype(np.int64) for a in np.meshgrid(ms, ns, indexing="ij"))
        levels = np.full(m.shape, level, dtype=np.int64)
        return CellBatch(levels, m, n, np.ones(m.shape, dtype=bool), _codes(carpet_grid_cases(levels, m, n)),
                         np.zeros(m.shape, dtype=np.int64))

    def _child_cases(self, parent, level, da, db):
        out = np.full(parent.shape, EXTERIOR, dtype=np.int8)
        cell = parent == CELL
        out[cell] = CELL
        out[cell & (da == 1) & (db == 1)] = HOLE
        origin = (parent == MIXED) & (da == 0) & (db == 0)
        out[origin] = np.where(level[origin] >= 0, CELL, MIXED)
        return out

    def closed_form(self, case: np.ndarray, side: np.ndarray, alpha: float) -> np.ndarray:
        const = np.where(case == CELL, closed_forms.carpet_cell_by_side(1.0, alpha),
                         np.where(case == HOLE, closed_forms.carpet_hole_by_side(1.0, alpha), np.nan))
        return _scaled_power(const, side, alpha)

    def hole_bound(self, side: np.ndarray, alpha: float) -> np.ndarray:
        return _scaled_power(np.full(side.shape, closed_forms.carpet_hole_by_side(1.0, alpha)), side, alpha)


# Children of an upward triangle U(i, j) and a downward triangle D(i, j), as
# (di, dj, up) offsets from (2i, 2j). D(i, j) has vertices P(i+1, j), P(i, j+1), P(i+1, j+1).
_UP_KIDS = (np.array([0, 1, 0, 0]), np.array([0, 0, 1, 0]), np.array([True, True, True, False]))
_DOWN_KIDS = (np.array([1, 0, 1, 1]), np.array([0, 1, 1, 1]), np.array([False, False, False, True]))


def _lattice_children(batch: CellBatch) -> Tuple[CellBatch, np.ndarray]:
    """The four half-side children of lattice triangles and each child's slot"""
    n = batch.count
    di = np.where(batch.up[:, None], _UP_KIDS[0], _DOWN_KIDS[0]).ravel()
    dj = np.where(batch.up[:, None], _UP_KIDS[1], _DOWN_KIDS[1]).ravel()
    up = np.where(batch.up[:, None], _UP_KIDS[2], _DOWN_KIDS[2]).ravel()
    kids = CellBatch(np.repeat(batch.level + 1, 4), np.repeat(2 * batch.i, 4) + di,
                     np.repeat(2 * batch.j, 4) + dj, up, np.repeat(batch.case, 4), np.repeat(batch.owner, 4))
    return kids, np.tile(np.arange(4), n)


def _lattice_coords(batch: CellBatch) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Skew lattice coordinates of the three vertices and the lattice spacing"""
    t = np.power(2.0, -batch.level.astype(float))
    a, b = batch.i.astype(float), batch.j.astype(float)
    d = (~batch.up).astype(float)
    return np.stack([a + d, a + 1, a], axis=1), np.stack([b, b + d, b + 1], axis=1), t


class GasketGrid:
    """Triangular lattice of side 2**-level in skew coordinates"""

    structured = True
    children_per_cell = 4

    def roots(self, region: Region) -> CellBatch:
        lo, hi = region.bbox()
        size = float(np.max(hi - lo))
        level = math.floor(-math.log2(size) + 1e-9)
        t = 2.0 ** (-level)
        h = t * SQRT3 / 2
        b_min, b_max = lo[1] / h, hi[1] / h
        a_min, a_max = lo[0] / t - b_max / 2, hi[0] / t - b_min / 2
        ia = np.arange(math.floor(a_min) - 1, math.floor(a_max) + 1)
        jb = np.arange(math.floor(b_min), math.floor(b_max) + 1)
        i, j = (a.ravel().astype(np.int64) for a in np.meshgrid(ia, jb, indexing="ij"))
        i, j = np.concatenate([i, i]), np.concatenate([j, j])
        up = np.concatenate([np.ones(len(i) // 2, dtype=bool), np.zeros(len(i) // 2, dtype=bool)])
        levels = np.full(i.shape, level, dtype=np.int64)
        return CellBatch(levels, i, j, up, _codes(gasket_grid_cases(levels, i, j, up)),
                         np.zeros(i.shape, dtype=np.int64))

    def shape(self, batch: CellBatch) -> CellShape:
        la, lb, t = _lattice_coords(batch)
        verts = np.stack([(la + lb / 2) * t[:, None], lb * (SQRT3 / 2) * t[:, None]], axis=2)
        return CellShape(verts.mean(axis=1), t / SQRT3, t / (2 * SQRT3), (SQRT3 / 4) * t * t, t, verts)

    def relation(self, shape: CellShape, region: Region):
        return _triangles_vs_region(shape, region)

    def children(self, batch: CellBatch) -> CellBatch:
        kids, slot = _lattice_children(batch)
        parent = kids.case
        case = np.full(parent.shape, EXTERIOR, dtype=np.int8)
        cell = parent == CELL
        case[cell] = np.where(slot[cell] == 3, HOLE, CELL)
        origin = (parent == MIXED) & (slot == 0)
        case[origin] = np.where(kids.level[origin] >= 0, CELL, MIXED)
        return kids._replace(case=case)

    def closed_form(self, case: np.ndarray, side: np.ndarray, alpha: float) -> np.ndarray:
        const = np.where(case == CELL, closed_forms.gasket_cell_by_side(1.0, alpha),
                         np.where(case == HOLE, closed_forms.hole_measure_gasket(1.0, alpha), np.nan))
        return _scaled_power(const, side, alpha)

    def hole_bound(self, side: np.ndarray, alpha: float) -> np.ndarray:
        return _scaled_power(np.full(side.shape, closed_forms.hole_measure_gasket(1.0, alpha)), side, alpha)

    def edge_touching(self, shape: CellShape, d_center: np.ndarray) -> np.ndarray:
        return d_center <= shape.inradius * (1 + 1e-9)


class KochGrid:
    """Lattice sub-triangles of the equilateral pieces tiling the polygon domain of K_n.

    Piece ``owner`` has corner P and edge vectors U, V; a cell with lattice
    coordinates (a, b) at level k sits at P + (a U + b V) 2^-k. Every cell lies
    in the snowflake domain, so the distance to the piece's boundary is a
    lower bound of the distance to K.
    """

    structured = False
    children_per_cell = 4

    def __init__(self, level: int):
        self.level = level
        self.corner, self.u, self.v = koch_pieces(level)
        self.side = np.hypot(self.u[:, 0], self.u[:, 1])
        # boundary lines of each piece as (point, direction)
        self.lines = [(self.corner, self.u), (self.corner, self.v), (self.corner + self.u, self.v - self.u)]

    def roots(self, region: Region) -> CellBatch:
        count = len(self.corner)
        zero = np.zeros(count, dtype=np.int64)
        return CellBatch(zero, zero.copy(), zero.copy(), np.ones(count, dtype=bool),
                         np.full(count, PLAIN, dtype=np.int8), np.arange(count, dtype=np.int64))

    def shape(self, batch: CellBatch) -> CellShape:
        la, lb, t = _lattice_coords(batch)
        p, u, v = self.corner[batch.owner], self.u[batch.owner], self.v[batch.owner]
        verts = (p[:, None, :] + (la * t[:, None])[:, :, None] * u[:, None, :]
                 + (lb * t[:, None])[:, :, None] * v[:, None, :])
        side = self.side[batch.owner] * t
        return CellShape(verts.mean(axis=1), side / SQRT3, side / (2 * SQRT3), (SQRT3 / 4) * side * side, side,
                         verts)

    def relation(self, shape: CellShape, region: Region):
        return _triangles_vs_region(shape, region)

    def children(self, batch: CellBatch) -> CellBatch:
        kids, _ = _lattice_children(batch)
        return kids

    def edge_spans(self, batch: CellBatch, shape: CellShape) -> np.ndarray:
        """(nearest, farthest) distance of each cell to each boundary line of its piece, shape (n, 3, 2)"""
        spans = np.empty((batch.count, 3, 2))
        for k, (point, direction) in enumerate(self.lines):
            p, e = point[batch.owner], direction[batch.owner]
            rel = shape.vertices - p[:, None, :]
            cross = e[:, None, 0] * rel[..., 1] - e[:, None, 1] * rel[..., 0]
            dist = np.abs(cross) / np.hypot(e[:, 0], e[:, 1])[:, None]
            spans[:, k, 0], spans[:, k, 1] = dist.min(axis=1), dist.max(axis=1)
        return spans

    @staticmethod
    def edge_bound(spans: np.ndarray, side: np.ndarray, alpha: float) -> np.ndarray:
        """Upper bound of the integral of dist(., boundary)^alpha over cells, -1 < alpha < 0.

        dist^alpha is at most the sum over the three lines of dist(., line)^alpha,
        and each line term integrates over a strip of width at most the side.
        """
        if alpha <= -1:
            return np.full(len(side), np.inf)
        e = alpha + 1
        strips = (spans[..., 1] ** e - spans[..., 0] ** e) / e
        return side * strips.sum(axis=1)


# ---------------------------------------------------------------------------
# Distance fields

class ExactField:
    """Exact distance at cell centers"""

    def __init__(self, spec: FractalSpec):
        self.spec = spec

    def bounds(self, centers: np.ndarray, radius: np.ndarray):
        d = distance_many(self.spec, centers)
        return d, d, d


class KochField:
    """Interval distance to K for points of the polygon domain of K_n"""

    def __init__(self, level: int):
        self.level = level
        self.index = koch_index(level)

    def bounds(self, centers: np.ndarray, radius: np.ndarray):
        lo, hi = self.index.distance_bounds(centers)
        return lo, hi, lo


def _weight_bounds(d_minus: np.ndarray, d_plus: np.ndarray, alpha: float):
    with np.errstate(divide="ignore"):
        if alpha < 0:
            return d_plus ** alpha, np.where(d_minus > 0, d_minus ** alpha, np.inf)
        if alpha > 0:
            return d_minus ** alpha, d_plus ** alpha
    return np.ones_like(d_minus), np.ones_like(d_minus)


def _interval_product(f_lo, f_hi, lo, hi):
    with np.errstate(invalid="ignore"):
        new_lo = np.where(f_lo >= 0, f_lo * lo, f_lo * hi)
        new_hi = np.where(f_hi >= 0, f_hi * hi, f_hi * lo)
    return np.nan_to_num(new_lo, nan=0.0, posinf=np.inf, neginf=-np.inf), \
        np.nan_to_num(new_hi, nan=0.0, posinf=np.inf, neginf=-np.inf)


# ---------------------------------------------------------------------------
# Integrator

class _Evaluated(NamedTuple):
    batch: CellBatch
    lo: np.ndarray
    hi: np.ndarray
    touch: np.ndarray
    frozen: np.ndarray
    certain: bool

    @property
    def count(self) -> int:
        return self.batch.count

    def take(self, index) -> "_Evaluated":
        return _Evaluated(self.batch.take(index), *(a[index] for a in self[1:-1]), self.certain)

    @classmethod
    def concat(cls, parts: List["_Evaluated"]) -> "_Evaluated":
        if not parts:
            return cls.empty()
        return cls(CellBatch.concat([p.batch for p in parts]),
                   *(np.concatenate(cols) for cols in zip(*(p[1:-1] for p in parts))),
                   any(p.certain for p in parts))

    @classmethod
    def empty(cls) -> "_Evaluated":
        flags = np.zeros(0, dtype=bool)
        return cls(CellBatch.empty(), np.zeros(0), np.zeros(0), flags, flags, False)


class _PoolOverflow(Exception):
    """Live cells would exceed the memory cap"""


class IntervalQuadrature:
    """Adaptive interval quadrature of f * dist(., E)^alpha over one region"""

    def __init__(self, spec: FractalSpec, region: Region, alpha: float, integrand: Optional[Integrand] = None,
                 koch_level: Optional[int] = None):
        settings = get_settings()
        self.spec = spec
        self.region = region
        self.alpha = float(alpha)
        self.integrand = integrand
        self.min_side = settings.MIN_CELL_SIDE
        self.chunk = settings.QUAD_CHUNK
        self.live_cap = max(settings.QUAD_MEMORY_MB * 2 ** 20 // CELL_BYTES, 1)
        if spec.kind == FractalKind.CARPET:
            self.grid, self.field = CarpetGrid(), ExactField(spec)
        elif spec.kind == FractalKind.GASKET:
            self.grid, self.field = GasketGrid(), ExactField(spec)
        else:
            level = settings.KOCH_LEVEL if koch_level is None else koch_level
            self.grid, self.field = KochGrid(level), KochField(level)

    def evaluate(self, batch: CellBatch) -> _Evaluated:
        alpha = self.alpha
        shape = self.grid.shape(batch)
        rel, ov_lo, ov_hi = self.grid.relation(shape, self.region)
        keep = np.flatnonzero(rel != OUTSIDE)
        if keep.size == 0:
            return _Evaluated.empty()
        batch, shape = batch.take(keep), shape.take(keep)
        rel, ov_lo, ov_hi = rel[keep], ov_lo[keep], ov_hi[keep]

        d_lo, d_hi, d_c = self.field.bounds(shape.centers, shape.radius)
        d_minus = np.maximum(d_lo - shape.radius, 0.0)
        d_plus = d_hi + shape.radius
        spans = None
        if isinstance(self.grid, KochGrid):
            spans = self.grid.edge_spans(batch, shape)
            d_minus = np.maximum(d_minus, spans[..., 0].min(axis=1))
        w_lo, w_hi = _weight_bounds(d_minus, d_plus, alpha)
        with np.errstate(invalid="ignore", over="ignore"):
            full_lo, full_hi = shape.area * w_lo, shape.area * w_hi
        diverges = np.zeros(batch.count, dtype=bool)
        symmetric = np.zeros(batch.count, dtype=bool)
        touch = d_minus <= 0.0

        if self.grid.structured:
            exact = self.grid.closed_form(batch.case, shape.side, alpha)
            known = ~np.isnan(exact)
            finite = known & np.isfinite(exact)
            full_lo[finite], full_hi[finite] = exact[finite], exact[finite]
            # fractal cells and holes are symmetric about their centers
            symmetric = finite
            diverges = known & np.isinf(exact)
            full_hi[diverges] = np.inf
            if alpha < 0:
                ext = batch.case == EXTERIOR
                full_hi[ext] = np.minimum(full_hi[ext], self.grid.hole_bound(shape.side[ext], alpha))
        elif spans is not None and alpha < 0:
            near = np.isinf(full_hi)
            if near.any():
                full_hi[near] = self.grid.edge_bound(spans[near], shape.side[near], alpha)

        inside = rel == INSIDE
        with np.errstate(invalid="ignore"):
            lo = np.where(inside, full_lo, ov_lo * w_lo)
            hi = np.where(inside, full_hi, np.fmin(full_hi, ov_hi * w_hi))

        f_lo = np.ones(batch.count)
        if self.integrand is not None:
            f_lo, f_hi = self.integrand(shape.centers, shape.radius, d_minus, d_plus)
            f_lo = np.broadcast_to(np.asarray(f_lo, dtype=float), (batch.count,))
            f_hi = np.broadcast_to(np.asarray(f_hi, dtype=float), (batch.count,))
            m_lo, m_hi = lo, hi
            lo, hi = _interval_product(f_lo, f_hi, lo, hi)
            if isinstance(self.integrand, SmoothIntegrand):
                lo, hi = self._second_order(shape, inside, symmetric, w_lo, m_lo, m_hi, lo, hi)

        blowup = diverges
        if self.grid.structured and alpha <= -1:
            blowup = blowup | ((batch.case == EXTERIOR) & self.grid.edge_touching(shape, d_c))
        certain = bool(np.any(inside & (f_lo > 0) & blowup))
        return _Evaluated(batch, lo, hi, touch, shape.side < self.min_side, certain)

    def _second_order(self, shape: CellShape, inside, symmetric, w_lo, m_lo, m_hi, lo, hi):
        """Tighten cells lying wholly in the region with the integrand's Taylor model.

        With c the cell centroid the first moment of (w - w_lo) bounds the
        linear term; it vanishes on symmetric cells.
        """
        sel = np.flatnonzero(inside & np.isfinite(m_hi))
        if sel.size == 0:
            return lo, hi
        value, slope, curvature = self.integrand.taylor(shape.centers[sel], shape.radius[sel])
        r, m_top = shape.radius[sel], m_hi[sel]
        with np.errstate(invalid="ignore", over="ignore"):
            excess = np.where(symmetric[sel], 0.0, np.maximum(m_top - w_lo[sel] * shape.area[sel], 0.0))
            slack = slope * r * excess + 0.5 * curvature * r * r * m_top
            ends = np.stack([value * m_lo[sel], value * m_top])
            second_lo, second_hi = ends.min(axis=0) - slack, ends.max(axis=0) + slack
        lo, hi = lo.copy(), hi.copy()
        lo[sel] = np.fmax(lo[sel], second_lo)
        hi[sel] = np.fmin(hi[sel], second_hi)
        return lo, hi

    def _refine(self, batch: CellBatch, children: bool, room: int) -> _Evaluated:
        """Evaluate (the children of) batch in bounded chunks, raising _PoolOverflow past room cells"""
        parts, held = [], 0
        step = max(self.chunk // (self.grid.children_per_cell if children else 1), 1)
        for start in range(0, batch.count, step):
            part = batch.take(slice(start, start + step))
            ev = self.evaluate(self.grid.children(part) if children else part)
            held += ev.count
            if held > room:
                raise _PoolOverflow(held)
            parts.append(ev)
        return _Evaluated.concat(parts)

    def _koch_caps(self) -> Tuple[float, float, bool]:
        """Summed bounds of the domain beyond K_n inside the region, and whether it certainly diverges"""
        level = self.grid.level
        segment = 3.0 ** (-level)
        verts = koch_caps(level)
        centers = verts.mean(axis=1)
        radius = np.max(np.hypot(*(verts - centers[:, None, :]).transpose(2, 0, 1)), axis=1)
        area = np.full(len(verts), (SQRT3 / 12) * segment ** 2)
        shape = CellShape(centers, radius, radius / 2, area, np.full(len(verts), segment), verts)
        rel, _, _ = _triangles_vs_region(shape, self.region)
        keep = rel != OUTSIDE
        if not keep.any():
            return 0.0, 0.0, False
        centers, radius, inside = centers[keep], radius[keep], rel[keep] == INSIDE
        m_lo, m_hi = closed_forms.koch_cap_bounds(segment, self.alpha)
        lo = np.where(inside, m_lo, 0.0)
        hi = np.full(len(centers), m_hi)
        f_lo = np.ones(len(centers))
        if self.integrand is not None:
            reach = np.full(len(centers), segment / (3 * SQRT3))
            f_lo, f_hi = self.integrand(centers, radius, np.zeros(len(centers)), reach)
            f_lo = np.broadcast_to(np.asarray(f_lo, dtype=float), (len(centers),))
            lo, hi = _interval_product(f_lo, np.broadcast_to(np.asarray(f_hi, dtype=float), (len(centers),)), lo, hi)
        certain = bool(np.any(inside & (f_lo > 0) & np.isinf(m_hi)))
        return float(np.sum(lo)), float(np.sum(hi)), certain

    def crude_scale(self) -> float:
        """area(region) * (distance reach)^alpha, the reference for divergence detection"""
        c = self.region.center.as_array()[None, :]
        reach = self.region.radius if isinstance(self.region, Ball) else self.region.side / math.sqrt(2)
        _, d_hi, _ = self.field.bounds(c, np.array([reach]))
        return self.region.area * float(d_hi[0] + reach) ** self.alpha

    def run(self, tol: float, budget: int, atol: float = 0.0) -> MeasureEstimate:
        settings = get_settings()
        started = time.perf_counter()
        grid = self.grid

        if self.alpha == 0.0 and self.integrand is None and self.spec.kind != FractalKind.KOCH:
            return MeasureEstimate(value=IntervalValue.exact(self.region.area), cells_used=0,
                                   tolerance_requested=tol, seconds=time.perf_counter() - started)

        settled_lo = settled_hi = band_width = 0.0
        certain = False
        if isinstance(grid, KochGrid):
            settled_lo, settled_hi, certain = self._koch_caps()
            if math.isfinite(settled_hi):
                band_width = settled_hi - settled_lo

        status = Status.CONVERGED
        roots = grid.roots(self.region)
        cells_used = roots.count
        try:
            pool = self._refine(roots, children=False, room=self.live_cap)
        except _PoolOverflow:
            pool = _Evaluated.empty()
            status = Status.BUDGET_EXCEEDED
        certain = certain or pool.certain
        scale_ref = self.crude_scale()
        frozen_width = 0.0
        iterations = 0
        total_lo, total_hi = settled_lo, settled_hi

        while status == Status.CONVERGED:
            if certain:
                status = Status.DIVERGENT
                break
            width = pool.hi - pool.lo
            total_lo = settled_lo + float(np.sum(pool.lo))
            total_hi = settled_hi + float(np.sum(pool.hi))
            scale = min(abs(total_lo), abs(total_hi)) if total_lo * total_hi > 0 else 0.0
            target = max(tol * scale, atol)

            # retire exact, frozen and negligible cells; their width stays in the totals
            negligible = width <= RETIRE_SHARE * target / max(pool.count, 1)
            done = (width <= 0) | pool.frozen | negligible
            if done.any():
                settled_lo += float(np.sum(pool.lo[done]))
                settled_hi += float(np.sum(pool.hi[done]))
                frozen_width += float(np.sum(width[done & pool.frozen]))
                pool, width = pool.take(~done), width[~done]

            if math.isfinite(total_hi - total_lo) and total_hi - total_lo <= target:
                break
            live_width = float(np.sum(width)) if width.size else 0.0
            if pool.count == 0 or settled_hi - settled_lo > target:
                status = Status.BUDGET_EXCEEDED
                break

            if self.alpha < 0 and total_lo > settings.DIVERGENCE_FACTOR * scale_ref:
                touching = width[pool.touch]
                share = 1.0 if np.isinf(touching).any() else float(np.sum(touching)) / max(live_width, 1e-300)
                if share > settings.DIVERGENCE_SHARE:
                    status = Status.DIVERGENT
                    break

            infinite = np.isinf(width)
            if infinite.any():
                chosen = np.flatnonzero(infinite)
            else:
                order = np.argsort(-width, kind="stable")
                running = np.cumsum(width[order])
                stop = int(np.searchsorted(running, 0.5 * running[-1])) + 1
                chosen = np.sort(order[:stop])

            if cells_used + chosen.size * grid.children_per_cell > budget:
                status = Status.BUDGET_EXCEEDED
                break

            rest = np.ones(pool.count, dtype=bool)
            rest[chosen] = False
            kept = pool.take(rest)
            try:
                fresh = self._refine(pool.batch.take(chosen), children=True, room=self.live_cap - kept.count)
            except _PoolOverflow:
                logger.warning(f"quadrature pool reached the memory cap of {settings.QUAD_MEMORY_MB} MB")
                status = Status.BUDGET_EXCEEDED
                break
            cells_used += chosen.size * grid.children_per_cell
            certain = fresh.certain
            pool = _Evaluated.concat([kept, fresh])
            iterations += 1

        if status == Status.DIVERGENT:
            lo = settled_lo + float(np.sum(pool.lo))
            value = IntervalValue.divergent(lo=lo if math.isfinite(lo) else 0.0)
        else:
            if status == Status.CONVERGED and math.isinf(total_hi):
                status = Status.BUDGET_EXCEEDED
            value = IntervalValue(lo=total_lo, hi=total_hi, status=status)
        elapsed = time.perf_counter() - started
        logger.debug(f"{self.spec.kind.value} quadrature: {status.value} after {iterations} rounds, "
                     f"{cells_used} cells, [{value.lo:.6g}, {value.hi:.6g}]")
        return MeasureEstimate(value=value, cells_used=cells_used, tolerance_requested=tol,
                               band_width=band_width + frozen_width, seconds=elapsed)


def integrate(spec: FractalSpec, region: Region, alpha: float, integrand: Optional[Integrand] = None,
              tol: Optional[float] = None, budget: Optional[int] = None, atol: float = 0.0,
              koch_level: Optional[int] = None) -> MeasureEstimate:
    """Interval estimate of the integral of f dmu_alpha over region (f = 1 when omitted)"""
    settings = get_settings()
    tol = settings.QUAD_TOL if tol is None else tol
    budget = settings.QUAD_BUDGET if budget is None else budget
    if tol <= 0:
        raise InputError("quadrature tolerance must be positive")
    return IntervalQuadrature(spec, region, alpha, integrand, koch_level).run(tol, budget, atol)


# ---------------------------------------------------------------------------
# Integrand bounds

def _abs_interval(lo, hi):
    a_lo = np.where(lo > 0, lo, np.where(hi < 0, -hi, 0.0))
    return a_lo, np.maximum(np.abs(lo), np.abs(hi))


def powered_integrand(bounds: Integrand, power: float = 1.0, absolute: bool = False) -> Integrand:
    """Cell bounds of |f|^power from cell bounds of f"""
    if power == 1.0 and not absolute:
        return bounds

    def powered(centers, radii, d_minus, d_plus):
        lo, hi = _abs_interval(*bounds(centers, radii, d_minus, d_plus))
        return lo ** power, hi ** power

    return powered


def lipschitz_integrand(rule: Callable[[np.ndarray], np.ndarray], lipschitz: float, power: float = 1.0,
                        absolute: bool = False) -> Integrand:
    """Cell bounds value(center) +- L * radius, optionally as |f|^power"""

    def bounds(centers, radii, d_minus, d_plus):
        v = np.asarray(rule(centers), dtype=float)
        lo, hi = v - lipschitz * radii, v + lipschitz * radii
        if absolute or power != 1.0:
            lo, hi = _abs_interval(lo, hi)
        if power != 1.0:
            lo, hi = lo ** power, hi ** power
        return lo, hi

    return bounds


def sampled_integrand(rule: Callable[[np.ndarray], np.ndarray], power: float = 1.0,
                      absolute: bool = False) -> Integrand:
    """Cell bounds from the center and four inner corners, widened by half their spread"""
    offsets = np.array([[0.0, 0.0], [1, 1], [1, -1], [-1, 1], [-1, -1]]) / math.sqrt(2)

    def bounds(centers, radii, d_minus, d_plus):
        spots = centers[:, None, :] + offsets[None, :, :] * radii[:, None, None]
        v = np.asarray(rule(spots.reshape(-1, 2)), dtype=float).reshape(len(centers), len(offsets))
        lo, hi = v.min(axis=1), v.max(axis=1)
        margin = 0.5 * (hi - lo)
        lo, hi = lo - margin, hi + margin
        if absolute or power != 1.0:
            lo, hi = _abs_interval(lo, hi)
        if power != 1.0:
            lo, hi = lo ** power, hi ** power
        return lo, hi

    return bounds


def shell_integrand(rho: float) -> Integrand:
    """Indicator of {dist(., E) <= rho}"""

    def bounds(centers, radii, d_minus, d_plus):
        lo = (d_plus <= rho).astype(float)
        hi = (d_minus <= rho).astype(float)
        return lo, hi

    return bounds


def indicator_integrand(region: Region) -> Integrand:
    """Indicator of a sub-region, with cells seen as their circumscribed discs"""
    c = region.center.as_array()

    def bounds(centers, radii, d_minus, d_plus):
        gap = centers - c
        if isinstance(region, Ball):
            dist = np.hypot(gap[:, 0], gap[:, 1])
            lo = dist + radii <= region.radius
            hi = dist - radii < region.radius
        else:
            g = np.abs(gap)
            lo = np.all(g + radii[:, None] <= region.side / 2, axis=1)
            hi = np.all(g - radii[:, None] < region.side / 2, axis=1)
        return lo.astype(float), hi.astype(float)

    return bounds


class SmoothIntegrand:
    """Cell bounds plus a Taylor model of the integrand.

    The bounds serve every cell; cells lying wholly in the region are then
    tightened to second order from (value, slope, curvature) at their centers.
    """

    def __init__(self, bounds: Integrand, taylor: Taylor):
        self.bounds = bounds
        self.taylor = taylor

    def __call__(self, centers, radii, d_minus, d_plus):
        return self.bounds(centers, radii, d_minus, d_plus)
