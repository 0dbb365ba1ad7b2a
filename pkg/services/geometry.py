"""Distance oracles, membership tests and IFS addressing for the built-in fractals.

All oracles are pure functions of immutable data. Vectorized ``*_many``
variants take an (N, 2) array of points; the scalar forms wrap them.
"""
import logging
import math
from functools import lru_cache
from typing import Dict, Tuple

import numpy as np
from scipy.spatial import cKDTree

from core.config import get_settings
from core.errors import InputError, ResourceLimitError
from models.schemas import (
    Address, Ball, FractalKind, FractalSpec, GridCase, IntervalValue, Membership, Point2,
)

logger = logging.getLogger(__name__)

SQRT3 = math.sqrt(3.0)
CARPET_DIM = math.log(8.0) / math.log(3.0)
GASKET_DIM = math.log(3.0) / math.log(2.0)
KOCH_DIM = math.log(4.0) / math.log(3.0)

# Carpet digit d -> (column, row) offset of its sub-square, skipping the center.
CARPET_OFFSETS = [(0, 0), (1, 0), (2, 0), (0, 1), (2, 1), (0, 2), (1, 2), (2, 2)]
TRIANGLE = np.array([[0.0, 0.0], [1.0, 0.0], [0.5, SQRT3 / 2]])


def _as_points(points) -> np.ndarray:
    pts = np.asarray(points, dtype=float)
    return pts.reshape(-1, 2)


@lru_cache(maxsize=None)
def fractal_spec(kind: FractalKind) -> FractalSpec:
    """Built-in spec with an ambient ball B satisfying E inside B/2"""
    kind = FractalKind(kind)
    if kind == FractalKind.CARPET:
        return FractalSpec(kind=kind, hausdorff_dim=CARPET_DIM, base_cell="square", branching=8,
                           contraction=1 / 3, ambient=Ball(center=Point2(x=0.5, y=0.5), radius=1.5))
    if kind == FractalKind.GASKET:
        return FractalSpec(kind=kind, hausdorff_dim=GASKET_DIM, base_cell="triangle", branching=3,
                           contraction=1 / 2,
                           ambient=Ball(center=Point2(x=0.5, y=SQRT3 / 6), radius=1.2))
    return FractalSpec(kind=kind, hausdorff_dim=KOCH_DIM, base_cell="segment", branching=4,
                       contraction=1 / 3, root_cells=3,
                       ambient=Ball(center=Point2(x=0.5, y=SQRT3 / 6), radius=1.2))


# ---------------------------------------------------------------------------
# IFS tables: every map is z -> lin * z + shift on complex coordinates.

@lru_cache(maxsize=None)
def ifs_tables(kind: FractalKind) -> Dict[str, np.ndarray]:
    """Child maps, root maps and the bounding disc of the normalized root cell"""
    kind = FractalKind(kind)
    if kind == FractalKind.CARPET:
        lin = np.full(8, 1 / 3, dtype=complex)
        shift = np.array([(a + 1j * b) / 3 for a, b in CARPET_OFFSETS], dtype=complex)
        roots_lin, roots_shift = np.array([1.0 + 0j]), np.array([0j])
        disc_center, disc_radius = 0.5 + 0.5j, math.sqrt(2) / 2
    elif kind == FractalKind.GASKET:
        lin = np.full(3, 0.5, dtype=complex)
        shift = np.array([0, 0.5, 0.25 + 1j * SQRT3 / 4], dtype=complex)
        roots_lin, roots_shift = np.array([1.0 + 0j]), np.array([0j])
        disc_center, disc_radius = 0.5 + 1j * SQRT3 / 6, 1 / SQRT3
    else:
        down, up = np.exp(-1j * math.pi / 3), np.exp(1j * math.pi / 3)
        lin = np.array([1 / 3, down / 3, up / 3, 1 / 3], dtype=complex)
        shift = np.array([0, 1 / 3, 0.5 - 1j * SQRT3 / 6, 2 / 3], dtype=complex)
        verts = TRIANGLE[:, 0] + 1j * TRIANGLE[:, 1]
        roots_shift = verts.astype(complex)
        roots_lin = np.roll(verts, -1) - verts
        disc_center, disc_radius = 0.5 + 0j, 0.5
    return {
        "lin": lin, "shift": shift, "roots_lin": roots_lin, "roots_shift": roots_shift,
        "disc_center": np.complex128(disc_center), "disc_radius": float(disc_radius),
    }


# ---------------------------------------------------------------------------
# Carpet

def carpet_distance_many(points, cap: int = None) -> np.ndarray:
    """Exact distance to the Sierpinski carpet by ternary digit descent"""
    cap = get_settings().DESCENT_CAP if cap is None else cap
    pts = _as_points(points)
    x, y = pts[:, 0], pts[:, 1]
    out = np.zeros(len(pts))

    outside = (x < 0) | (x > 1) | (y < 0) | (y > 1)
    gap_x = np.maximum(np.maximum(-x, x - 1), 0.0)
    gap_y = np.maximum(np.maximum(-y, y - 1), 0.0)
    out[outside] = np.hypot(gap_x, gap_y)[outside]

    active = ~outside
    u, v = x.copy(), y.copy()
    side = 1.0
    for _ in range(cap):
        if not active.any():
            break
        u3, v3 = 3 * u, 3 * v
        du, dv = np.minimum(np.floor(u3), 2), np.minimum(np.floor(v3), 2)
        hole = active & (du == 1) & (dv == 1)
        if hole.any():
            local = np.minimum(np.minimum(u3[hole] - 1, 2 - u3[hole]), np.minimum(v3[hole] - 1, 2 - v3[hole]))
            out[hole] = np.maximum(local, 0.0) * side / 3
        active &= ~hole
        u, v = u3 - du, v3 - dv
        side /= 3
    return out


def carpet_distance(p: Point2) -> float:
    return float(carpet_distance_many([[p.x, p.y]])[0])


def carpet_grid_cases(k: np.ndarray, m: np.ndarray, n: np.ndarray) -> np.ndarray:
    """Classify ternary grid squares (level k, column m, row n) against the carpet"""
    k, m, n = (np.atleast_1d(np.asarray(a, dtype=np.int64)) for a in (k, m, n))
    cases = np.full(k.shape, GridCase.EXTERIOR.value, dtype=object)

    coarse = k <= 0
    origin = (m == 0) & (n == 0)
    cases[coarse & origin & (k < 0)] = GridCase.MIXED.value
    cases[coarse & origin & (k == 0)] = GridCase.CELL.value

    fine = ~coarse
    if fine.any():
        kf, mf, nf = k[fine], m[fine], n[fine]
        size = np.power(3, kf)
        inside = (mf >= 0) & (nf >= 0) & (mf < size) & (nf < size)
        first_hole = np.zeros(kf.shape, dtype=np.int64)
        for t in range(1, int(kf.max()) + 1):
            p = kf - t
            valid = p >= 0
            base = np.power(3, np.maximum(p, 0))
            pair = valid & ((mf // base) % 3 == 1) & ((nf // base) % 3 == 1)
            first_hole = np.where((first_hole == 0) & pair, t, first_hole)
        sub = np.full(kf.shape, GridCase.EXTERIOR.value, dtype=object)
        sub[inside & (first_hole == 0)] = GridCase.CELL.value
        sub[inside & (first_hole == kf)] = GridCase.HOLE.value
        cases[fine] = sub
    return cases


def classify_grid_square(k: int, m: int, n: int) -> GridCase:
    return GridCase(carpet_grid_cases([k], [m], [n])[0])


# ---------------------------------------------------------------------------
# Gasket

def segment_distance(points: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Distance from points to segments [a, b] (broadcasting)"""
    ab = b - a
    ap = points - a
    denom = np.maximum(np.sum(ab * ab, axis=-1), 1e-300)
    t = np.clip(np.sum(ap * ab, axis=-1) / denom, 0.0, 1.0)
    foot = a + t[..., None] * ab
    return np.linalg.norm(points - foot, axis=-1)


def triangle_distance(points: np.ndarray, tri: np.ndarray) -> np.ndarray:
    """Distance from points to the boundary of triangles tri (..., 3, 2)"""
    d = [segment_distance(points, tri[..., i, :], tri[..., (i + 1) % 3, :]) for i in range(3)]
    return np.minimum(np.minimum(d[0], d[1]), d[2])


def gasket_barycentric(pts: np.ndarray) -> np.ndarray:
    l2 = pts[:, 1] / (SQRT3 / 2)
    l1 = pts[:, 0] - pts[:, 1] / SQRT3
    return np.column_stack([1.0 - l1 - l2, l1, l2])


def gasket_distance_many(points, cap: int = None) -> np.ndarray:
    """Exact distance to the Sierpinski gasket by barycentric descent"""
    cap = get_settings().DESCENT_CAP if cap is None else cap
    pts = _as_points(points)
    out = np.zeros(len(pts))
    lam = gasket_barycentric(pts)

    outside = np.any(lam < 0, axis=1)
    if outside.any():
        out[outside] = triangle_distance(pts[outside], TRIANGLE)

    active = ~outside
    height = SQRT3 / 2
    rows = np.arange(len(pts))
    for _ in range(cap):
        if not active.any():
            break
        corner = np.argmax(lam, axis=1)
        top = lam[rows, corner]
        hole = active & (top < 0.5)
        out[hole] = height * (0.5 - top[hole])
        active &= ~hole
        lam = 2 * lam
        lam[rows, corner] -= 1.0
        height /= 2
    return out


def gasket_distance(p: Point2) -> float:
    return float(gasket_distance_many([[p.x, p.y]])[0])


def gasket_grid_cases(k: np.ndarray, i: np.ndarray, j: np.ndarray, up: np.ndarray) -> np.ndarray:
    """Classify lattice triangles of side 2^-k in skew coordinates (i, j)"""
    k, i, j = (np.atleast_1d(np.asarray(a, dtype=np.int64)) for a in (k, i, j))
    up = np.atleast_1d(np.asarray(up, dtype=bool))
    cases = np.full(k.shape, GridCase.EXTERIOR.value, dtype=object)

    origin_up = up & (i == 0) & (j == 0)
    cases[origin_up & (k < 0)] = GridCase.MIXED.value

    kk = np.maximum(k, 0)
    size = np.left_shift(np.int64(1), kk)
    nonneg = (i >= 0) & (j >= 0) & (k >= 0)
    cell = nonneg & up & (i + j < size) & ((i & j) == 0)
    cases[cell] = GridCase.CELL.value

    i2, j2 = i // 2, j // 2
    half = np.left_shift(np.int64(1), np.maximum(kk - 1, 0))
    hole = nonneg & ~up & (k >= 1) & (i % 2 == 0) & (j % 2 == 0) & (i2 + j2 < half) & ((i2 & j2) == 0)
    cases[hole] = GridCase.HOLE.value
    return cases


def gasket_classify(k: int, i: int, j: int, up: bool = True) -> GridCase:
    return GridCase(gasket_grid_cases([k], [i], [j], [up])[0])


def distance_many(spec: FractalSpec, points) -> np.ndarray:
    """Exact distance for the carpet and the gasket"""
    if spec.kind == FractalKind.CARPET:
        return carpet_distance_many(points)
    if spec.kind == FractalKind.GASKET:
        return gasket_distance_many(points)
    raise InputError("the Koch snowflake only has interval distances; use koch_index(n)")


# ---------------------------------------------------------------------------
# Koch snowflake

def koch_polygon(n: int) -> np.ndarray:
    """Vertices of the level-n snowflake polygon K_n, counter-clockwise.

    Segment i joins vertex i to vertex i+1 (mod 3*4**n).
    """
    if n < 0:
        raise InputError("Koch level must be non-negative")
    segments = 3 * 4 ** n
    limit = get_settings().KOCH_MAX_SEGMENTS
    if segments > limit:
        raise ResourceLimitError(f"K_{n} has {segments} segments, above the budget of {limit}")

    z = TRIANGLE[:, 0] + 1j * TRIANGLE[:, 1]
    outward = np.exp(-1j * math.pi / 3)
    for _ in range(n):
        step = (np.roll(z, -1) - z) / 3
        first = z + step
        tip = first + step * outward
        z = np.stack([z, first, tip, z + 2 * step], axis=1).ravel()
    return np.column_stack([z.real, z.imag])


class KochIndex:
    """Segment index over K_n answering distance and side queries"""

    NEIGHBOURS = 16

    def __init__(self, n: int):
        self.level = n
        self.vertices = koch_polygon(n)
        self.starts = self.vertices
        self.ends = np.roll(self.vertices, -1, axis=0)
        self.edges = self.ends - self.starts
        self.count = len(self.starts)
        self.length = 3.0 ** (-n)
        self.band = 3.0 ** (-n)
        self.tree = cKDTree(0.5 * (self.starts + self.ends))
        incoming = np.roll(self.edges, 1, axis=0)
        self.convex = (incoming[:, 0] * self.edges[:, 1] - incoming[:, 1] * self.edges[:, 0]) > 0
        logger.debug(f"Koch index built for level {n} with {self.count} segments")

    def _segment_params(self, pts: np.ndarray, seg: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Distance and clamped foot parameter from pts to segments seg (same leading shape)"""
        if seg.ndim > 1:
            pts = pts[:, None, :]
        a = self.starts[seg]
        e = self.edges[seg]
        t = np.clip(np.sum((pts - a) * e, axis=-1) / (self.length ** 2), 0.0, 1.0)
        diff = pts - (a + t[..., None] * e)
        return np.hypot(diff[..., 0], diff[..., 1]), t

    def nearest(self, points) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Distance to K_n, nearest segment and foot parameter"""
        pts = _as_points(points)
        k = min(self.NEIGHBOURS, self.count)
        mid_d, idx = self.tree.query(pts, k=k)
        mid_d, idx = mid_d.reshape(len(pts), k), idx.reshape(len(pts), k)
        dist, t = self._segment_params(pts, idx)
        best = np.argmin(dist, axis=1)
        rows = np.arange(len(pts))
        out_d, out_seg, out_t = dist[rows, best], idx[rows, best], t[rows, best]

        # the true nearest segment has its midpoint within d + L/2 of the point
        unsure = (mid_d[:, -1] < mid_d[:, 0] + self.length / 2) & (k < self.count)
        for row in np.flatnonzero(unsure):
            cand = np.asarray(self.tree.query_ball_point(pts[row], mid_d[row, 0] + self.length / 2 + 1e-15))
            d, tt = self._segment_params(np.repeat(pts[row][None, :], len(cand), axis=0), cand)
            b = int(np.argmin(d))
            out_d[row], out_seg[row], out_t[row] = d[b], cand[b], tt[b]
        return out_d, out_seg, out_t

    def inside_polygon(self, points, nearest=None) -> np.ndarray:
        """Polygon verdict for K_n from the side of the nearest feature"""
        pts = _as_points(points)
        d, seg, t = self.nearest(pts) if nearest is None else nearest

        def left_of(s):
            rel = pts - self.starts[s]
            e = self.edges[s]
            return (e[:, 0] * rel[:, 1] - e[:, 1] * rel[:, 0]) > 0

        at_vertex = (t <= 0.0) | (t >= 1.0)
        vertex = np.where(t >= 1.0, (seg + 1) % self.count, seg)
        left_out = left_of(vertex)
        left_in = left_of((vertex - 1) % self.count)
        on_edge = left_of(seg)
        corner = np.where(self.convex[vertex], left_in & left_out, left_in | left_out)
        return np.where(at_vertex, corner, on_edge)

    def query(self, points) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Interval distance to K plus membership codes (+1 inside, -1 outside, 0 unknown)"""
        pts = _as_points(points)
        near = self.nearest(pts)
        d = near[0]
        inside = self.inside_polygon(pts, near)
        codes = np.where(d <= self.band, 0, np.where(inside, 1, -1))
        return np.maximum(d - self.band, 0.0), d + self.band, codes

    def distance_bounds(self, points) -> Tuple[np.ndarray, np.ndarray]:
        """(lower, upper) bounds of dist(x, K) for points inside the polygon K_n.

        Inside the polygon the distance to K_n is a lower bound; the upper bound
        measures to the points of K lying on the nearest segment's base line.
        Only the nearest midpoints are scanned, so far points get the midpoint
        lower bound instead of the exact polygon distance.
        """
        pts = _as_points(points)
        k = min(self.NEIGHBOURS, self.count)
        mid_d, idx = self.tree.query(pts, k=k)
        mid_d, idx = mid_d.reshape(len(pts), k), idx.reshape(len(pts), k)
        dist, t = self._segment_params(pts, idx)
        best = np.argmin(dist, axis=1)
        rows = np.arange(len(pts))
        d, t = dist[rows, best], t[rows, best]
        unsure = (mid_d[:, -1] < mid_d[:, 0] + self.length / 2) & (k < self.count)
        lo = np.where(unsure, np.clip(mid_d[:, 0] - self.length / 2, 0.0, d), d)
        return lo, np.hypot(d, self.length * cantor_gap(t))


@lru_cache(maxsize=4)
def koch_index(n: int) -> KochIndex:
    return KochIndex(n)


def koch_distance(p: Point2, n: int) -> IntervalValue:
    lo, hi, _ = koch_index(n).query([[p.x, p.y]])
    return IntervalValue(lo=float(lo[0]), hi=float(hi[0]))


def inside_snowflake(p: Point2, n: int) -> Membership:
    _, _, code = koch_index(n).query([[p.x, p.y]])
    return {1: Membership.INSIDE, -1: Membership.OUTSIDE, 0: Membership.UNKNOWN}[int(code[0])]


# ---------------------------------------------------------------------------
# Addressing

def digits_to_points(kind: FractalKind, digits: np.ndarray, sides: np.ndarray = None) -> np.ndarray:
    """Anchor points of the cells addressed by rows of ``digits``"""
    tables = ifs_tables(kind)
    digits = np.asarray(digits, dtype=np.int64)
    if digits.ndim == 1:
        digits = digits[None, :]
    count = digits.shape[0]
    if FractalKind(kind) == FractalKind.KOCH:
        sides = np.zeros(count, dtype=np.int64) if sides is None else np.asarray(sides, dtype=np.int64)
        z = tables["roots_shift"][sides].copy()
        a = tables["roots_lin"][sides].copy()
    else:
        z = np.zeros(count, dtype=complex)
        a = np.ones(count, dtype=complex)
    for col in range(digits.shape[1]):
        d = digits[:, col]
        z = z + a * tables["shift"][d]
        a = a * tables["lin"][d]
    return np.column_stack([z.real, z.imag])


def address_to_point(spec: FractalSpec, address: Address) -> Point2:
    if address.kind != spec.kind:
        raise InputError(f"{address.kind.value} address used with a {spec.kind.value} spec")
    text = address.digits
    if spec.kind == FractalKind.KOCH:
        if not text:
            return Point2(x=0.0, y=0.0)
        side, text = int(text[0]), text[1:]
        sides = np.array([side])
    else:
        sides = None
    digits = np.array([[int(ch) for ch in text]], dtype=np.int64).reshape(1, len(text))
    xy = digits_to_points(spec.kind, digits, sides)[0] * spec.scale
    return Point2.of(xy)


def prefractal_distance(spec: FractalSpec, points, level: int) -> np.ndarray:
    """Brute-force distance to the union of all level-m cells (independent oracle)"""
    pts = _as_points(points)
    kind = spec.kind
    b = spec.branching
    digits = np.array(np.unravel_index(np.arange(b ** level), (b,) * level)).T if level else np.zeros((1, 0), int)
    if kind == FractalKind.KOCH:
        raise InputError("use koch_polygon for the Koch prefractal")
    anchors = digits_to_points(kind, digits)
    size = spec.contraction ** level
    if kind == FractalKind.CARPET:
        centers = anchors + size / 2
        gap = np.maximum(np.abs(pts[:, None, :] - centers[None, :, :]) - size / 2, 0.0)
        return np.min(np.hypot(gap[..., 0], gap[..., 1]), axis=1)
    tris = anchors[:, None, :] + size * TRIANGLE[None, :, :]
    best = np.full(len(pts), np.inf)
    for lo in range(0, len(tris), 4096):
        chunk = tris[lo:lo + 4096]
        d = triangle_distance(pts[:, None, :], chunk[None, :, :, :])
        lam = gasket_barycentric(((pts[:, None, :] - chunk[None, :, 0, :]) / size).reshape(-1, 2)).reshape(len(pts), -1, 3)
        inside = np.all(lam >= 0, axis=-1)
        best = np.minimum(best, np.min(np.where(inside, 0.0, d), axis=1))
    return best


def cell_mass_in_balls(kind: FractalKind, centers, radii, level: int, chunk: int = 256) -> np.ndarray:
    """Self-similar mass of the level-k cells whose bounding discs meet each ball.

    Cells whose disc lies inside a ball contribute their full mass without
    further descent; cells still straddling a sphere at depth ``level`` are
    counted whole, so the result overestimates by at most the mass of cells
    within one cell diameter of the sphere.
    """
    tables = ifs_tables(kind)
    lin, shift = tables["lin"], tables["shift"]
    c0, r0 = tables["disc_center"], tables["disc_radius"]
    roots_lin, roots_shift = tables["roots_lin"], tables["roots_shift"]
    b, n_roots = len(lin), len(roots_lin)

    pts = _as_points(centers)
    rad = np.broadcast_to(np.asarray(radii, dtype=float), (len(pts),))
    zc = pts[:, 0] + 1j * pts[:, 1]
    total = np.zeros(len(pts))

    for start in range(0, len(pts), chunk):
        stop = min(start + chunk, len(pts))
        owner = np.repeat(np.arange(start, stop), n_roots)
        a = np.tile(roots_lin, stop - start)
        z = np.tile(roots_shift, stop - start)
        mass = 1.0 / n_roots
        for depth in range(level + 1):
            gap = np.abs(z + a * c0 - zc[owner])
            reach = np.abs(a) * r0
            r = rad[owner]
            full = gap + reach <= r
            meet = gap <= r + reach
            total += np.bincount(owner[full], minlength=len(pts)) * mass
            partial = meet & ~full
            if depth == level:
                total += np.bincount(owner[partial], minlength=len(pts)) * mass
                break
            owner, a, z = owner[partial], a[partial], z[partial]
            if owner.size == 0:
                break
            digit = np.tile(np.arange(b), owner.size)
            owner, a, z = np.repeat(owner, b), np.repeat(a, b), np.repeat(z, b)
            z = z + a * shift[digit]
            a = a * lin[digit]
            mass /= b
    return total


def koch_fringe_area(n: int) -> float:
    """Area of the snowflake domain lying outside the level-n polygon"""
    return 3.0 * SQRT3 / 20.0 * (4.0 / 9.0) ** n


CANTOR_DEPTH = 6


@lru_cache(maxsize=1)
def _cantor_endpoints() -> np.ndarray:
    ends = np.array([0.0, 1.0])
    for _ in range(CANTOR_DEPTH):
        ends = np.concatenate([ends / 3, 2 / 3 + ends / 3])
    return np.unique(ends)


def cantor_gap(t) -> np.ndarray:
    """Distance from t in [0, 1] to the endpoints of the middle-third construction.

    Those endpoints are points of the Koch curve lying on its base segment.
    """
    t = np.asarray(t, dtype=float)
    ends = _cantor_endpoints()
    right = np.clip(np.searchsorted(ends, t), 1, len(ends) - 1)
    return np.minimum(np.abs(t - ends[right - 1]), np.abs(ends[right] - t))


@lru_cache(maxsize=4)
def koch_pieces(n: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Equilateral triangles (corner, edge u, edge v) tiling the polygon domain of K_n.

    The base triangle comes first, then the bumps added at stages 1..n.
    """
    corners = [TRIANGLE[0]]
    us = [TRIANGLE[1] - TRIANGLE[0]]
    vs = [TRIANGLE[2] - TRIANGLE[0]]
    outward = np.exp(-1j * math.pi / 3)
    for stage in range(1, n + 1):
        vertices = koch_polygon(stage - 1)
        z = vertices[:, 0] + 1j * vertices[:, 1]
        step = (np.roll(z, -1) - z) / 3
        first, tip = z + step, step * outward
        corners.append(np.column_stack([first.real, first.imag]))
        us.append(np.column_stack([step.real, step.imag]))
        vs.append(np.column_stack([tip.real, tip.imag]))
    return (np.vstack([np.atleast_2d(c) for c in corners]), np.vstack([np.atleast_2d(u) for u in us]),
            np.vstack([np.atleast_2d(v) for v in vs]))


def koch_caps(n: int) -> np.ndarray:
    """Triangles over each segment of K_n holding the part of the domain beyond it, shape (3*4**n, 3, 2)"""
    vertices = koch_polygon(n)
    ends = np.roll(vertices, -1, axis=0)
    edge = ends - vertices
    normal = np.column_stack([edge[:, 1], -edge[:, 0]])
    apex = 0.5 * (vertices + ends) + normal * (SQRT3 / 6)
    return np.stack([vertices, ends, apex], axis=1)


def koch_cap_area(n: int) -> float:
    """Area of the snowflake domain beyond one segment of K_n"""
    return koch_fringe_area(n) / (3 * 4 ** n)


def cell_discs(kind: FractalKind, level: int) -> Tuple[np.ndarray, np.ndarray]:
    """Bounding discs (centers, radii) of every level-k cell of the unit fractal"""
    tables = ifs_tables(kind)
    z, a = tables["roots_shift"].copy(), tables["roots_lin"].copy()
    for _ in range(level):
        z = (z[:, None] + a[:, None] * tables["shift"][None, :]).ravel()
        a = (a[:, None] * tables["lin"][None, :]).ravel()
    c = z + a * tables["disc_center"]
    return np.column_stack([c.real, c.imag]), np.abs(a) * tables["disc_radius"]
