"""Whitney cover of B minus E, its spatial index and the hat partition of unity.

The cover comes from a quadtree over the bounding square of B. A square is
accepted once the distance from its center to E is at least its side; it then
becomes a ball with the square's center and radius equal to the side. Rejected
squares are split until depth ``max_level + 1``.
"""
import itertools
import logging
import math
from typing import Optional, Tuple

import numpy as np
import pandas as pd
from scipy import sparse
from scipy.spatial import cKDTree

from core.config import get_settings
from core.errors import CoverageError, InputError, ResolutionError, ResourceLimitError
from core.seeding import rng_for
from models.schemas import Ball, FractalKind, FractalSpec, PartitionWeights, Point2, WhitneyCover
from services import geometry

logger = logging.getLogger(__name__)

ANCHOR_LEVEL = 4
OVERLAP_STAGE = 11
CHILD_DX = np.array([0, 1, 0, 1])
CHILD_DY = np.array([0, 0, 1, 1])


def cover_koch_level(max_level: int) -> int:
    """Polygon level whose distance band stays well below the cover resolution"""
    return min(math.ceil((max_level + 2) * math.log(2.0) / math.log(3.0)) + 1, 10)


def distance_bounds(kind: FractalKind, points, koch_level: Optional[int] = None) -> Tuple[np.ndarray, np.ndarray]:
    """(lower bound, estimate) of dist(x, E); both exact off the snowflake"""
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    if kind == FractalKind.KOCH:
        level = get_settings().KOCH_LEVEL if koch_level is None else koch_level
        lo, hi, _ = geometry.koch_index(level).query(pts)
        return lo, 0.5 * (lo + hi)
    d = geometry.distance_many(geometry.fractal_spec(kind), pts)
    return d, d


def _check_inside_half(spec: FractalSpec, ball: Ball) -> None:
    centers, radii = geometry.cell_discs(spec.kind, ANCHOR_LEVEL)
    reach = np.hypot(*(centers * spec.scale - ball.center.as_array()).T) + radii * spec.scale
    if float(reach.max()) > ball.radius / 2:
        raise InputError(f"the {spec.kind.value} is not contained in half of the ambient ball "
                         f"(reach {reach.max():.4f}, half radius {ball.radius / 2:.4f})")


def _estimate_cells(spec: FractalSpec, final_level: int) -> float:
    return 4.0 * (2.0 ** final_level * spec.diameter) ** spec.hausdorff_dim


def _fitting_level(spec: FractalSpec, wanted: int, limit: int) -> int:
    """Deepest level up to wanted whose estimated cover stays within limit cells"""
    level = wanted
    while level > 0 and _estimate_cells(spec, level + 1) > limit:
        level -= 1
    return level


def build_whitney(spec: FractalSpec, ball: Optional[Ball] = None, max_level: Optional[int] = None) -> WhitneyCover:
    """Quadtree Whitney cover of ball minus E down to radius 2^-(max_level+1)"""
    settings = get_settings()
    ball = spec.ambient if ball is None else ball
    if max_level is None:
        max_level = _fitting_level(spec, settings.WHITNEY_MAX_LEVEL, settings.WHITNEY_MAX_CELLS)
        if max_level < settings.WHITNEY_MAX_LEVEL:
            logger.warning(f"Whitney cover of the {spec.kind.value} truncated from level {settings.WHITNEY_MAX_LEVEL} "
                           f"to {max_level} to stay within {settings.WHITNEY_MAX_CELLS} cells")
    if max_level < 0:
        raise InputError("max_level must be non-negative")
    _check_inside_half(spec, ball)

    final_level = max_level + 1
    estimate = _estimate_cells(spec, final_level)
    if estimate > settings.WHITNEY_MAX_CELLS:
        raise ResourceLimitError(f"a cover to level {max_level} needs about {estimate:.3g} cells, "
                                 f"above the budget of {settings.WHITNEY_MAX_CELLS}")

    root_level = -math.ceil(math.log2(2 * ball.radius))
    root_side = 2.0 ** (-root_level)
    center = ball.center.as_array()
    origin = center - root_side / 2
    koch_level = cover_koch_level(max_level) if spec.kind == FractalKind.KOCH else None
    logger.info(f"Building Whitney cover of the {spec.kind.value}: root side {root_side}, max level {max_level}")

    ix = iy = np.zeros(1, dtype=np.int64)
    kept = []
    total = 0
    for depth in range(final_level - root_level + 1):
        side = root_side * 2.0 ** (-depth)
        centers = origin + (np.column_stack([ix, iy]) + 0.5) * side
        gap = np.maximum(np.abs(centers - center) - side / 2, 0.0)
        meets = np.hypot(gap[:, 0], gap[:, 1]) <= ball.radius
        ix, iy, centers = ix[meets], iy[meets], centers[meets]

        lo, d = distance_bounds(spec.kind, centers, koch_level)
        accept = lo >= side
        total += int(accept.sum())
        if total > settings.WHITNEY_MAX_CELLS:
            raise ResourceLimitError(f"Whitney cover exceeded {settings.WHITNEY_MAX_CELLS} cells at depth {depth}")
        kept.append((depth, ix[accept], iy[accept], centers[accept], d[accept], side))

        rest = ~accept
        ix = (2 * ix[rest][:, None] + CHILD_DX).ravel()
        iy = (2 * iy[rest][:, None] + CHILD_DY).ravel()
        if ix.size == 0:
            break

    depths = np.concatenate([np.full(len(part[1]), part[0], dtype=np.int64) for part in kept])
    cover = WhitneyCover(
        kind=spec.kind,
        ambient=ball,
        max_level=max_level,
        origin=(float(origin[0]), float(origin[1])),
        root_side=root_side,
        depth=depths,
        ix=np.concatenate([part[1] for part in kept]),
        iy=np.concatenate([part[2] for part in kept]),
        levels=depths + root_level,
        centers=np.concatenate([part[3] for part in kept]).reshape(-1, 2),
        radii=np.concatenate([np.full(len(part[1]), part[5]) for part in kept]),
        dists=np.concatenate([part[4] for part in kept]),
        koch_level=koch_level,
    )
    logger.info(f"Whitney cover ready: {cover.size} cells on levels "
                f"{int(cover.levels.min())}..{int(cover.levels.max())}")
    return cover


# ---------------------------------------------------------------------------
# Spatial index

class WhitneyIndex:
    """One KD-tree per level; all cells of a level share a radius"""

    def __init__(self, cover: WhitneyCover):
        self.centers = cover.centers
        self.groups = []
        for level in np.unique(cover.levels):
            ids = np.flatnonzero(cover.levels == level)
            self.groups.append((int(level), float(cover.radii[ids[0]]), ids, cKDTree(cover.centers[ids])))

    def pairs(self, points: np.ndarray, dilation: float = 1.0,
              extra: Optional[np.ndarray] = None) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(point row, cell id, distance) for every point within ``extra`` of a dilated cell ball"""
        rows, cols = [], []
        for _, radius, ids, tree in self.groups:
            reach = dilation * radius if extra is None else dilation * radius + extra
            hits = tree.query_ball_point(points, reach)
            lengths = np.fromiter((len(h) for h in hits), dtype=np.int64, count=len(hits))
            if not lengths.any():
                continue
            rows.append(np.repeat(np.arange(len(points)), lengths))
            cols.append(ids[np.fromiter(itertools.chain.from_iterable(hits), dtype=np.int64)])
        if not rows:
            empty = np.zeros(0, dtype=np.int64)
            return empty, empty, np.zeros(0)
        rows, cols = np.concatenate(rows), np.concatenate(cols)
        diff = points[rows] - self.centers[cols]
        return rows, cols, np.hypot(diff[:, 0], diff[:, 1])

    def counts(self, points: np.ndarray, dilation: float) -> np.ndarray:
        total = np.zeros(len(points), dtype=np.int64)
        for _, radius, _, tree in self.groups:
            total += np.asarray(tree.query_ball_point(points, dilation * radius, return_length=True), dtype=np.int64)
        return total


def index_for(cover: WhitneyCover) -> WhitneyIndex:
    if cover._index is None:
        cover._index = WhitneyIndex(cover)
    return cover._index


# ---------------------------------------------------------------------------
# Partition of unity

def partition_matrix(cover: WhitneyCover, points, strict: bool = True) -> Tuple[sparse.csr_matrix, np.ndarray]:
    """Sparse (points x cells) matrix of normalized hat weights and the mask of valid rows.

    Rows of points within the resolution of E are left empty; with ``strict``
    such points raise ResolutionError instead. Points just outside B are
    accepted as long as some cell ball covers them.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    lo, _ = distance_bounds(cover.kind, pts, cover.koch_level)
    valid = lo > cover.resolution
    if strict and not valid.all():
        bad = int(np.flatnonzero(~valid)[0])
        raise ResolutionError(f"point {pts[bad].tolist()} lies within {cover.resolution:g} of E")

    rows, cols, dist = index_for(cover).pairs(pts)
    weights = 1.0 - dist / cover.radii[cols]
    keep = (weights > 0) & valid[rows]
    rows, cols, weights = rows[keep], cols[keep], weights[keep]

    sums = np.bincount(rows, weights=weights, minlength=len(pts))
    uncovered = valid & (sums <= 0)
    if uncovered.any():
        bad = int(np.flatnonzero(uncovered)[0])
        raise CoverageError(f"point {pts[bad].tolist()} is not covered by any Whitney ball")
    matrix = sparse.csr_matrix((weights / sums[rows], (rows, cols)), shape=(len(pts), cover.size))
    return matrix, valid


def partition_eval(cover: WhitneyCover, x: Point2) -> PartitionWeights:
    matrix, _ = partition_matrix(cover, [[x.x, x.y]])
    row = matrix.getrow(0).tocoo()
    order = np.argsort(row.col)
    return PartitionWeights(cell_ids=row.col[order].tolist(), weights=row.data[order].tolist())


# ---------------------------------------------------------------------------
# Diagnostics

def scatter_points(cover: WhitneyCover, n: int, seed: int, max_dist: Optional[float] = None,
                   stage: int = OVERLAP_STAGE) -> np.ndarray:
    """n points uniform in B whose distance to E lies in (resolution, max_dist)"""
    rng = rng_for(seed, stage)
    c, radius = cover.ambient.center.as_array(), cover.ambient.radius
    limit = math.inf if max_dist is None else max_dist
    found = []
    count = 0
    while count < n:
        r = radius * np.sqrt(rng.random(2 * n))
        angle = 2 * math.pi * rng.random(2 * n)
        pts = c + np.column_stack([r * np.cos(angle), r * np.sin(angle)])
        lo, d = distance_bounds(cover.kind, pts, cover.koch_level)
        pts = pts[(lo > cover.resolution) & (d < limit)]
        found.append(pts)
        count += len(pts)
    return np.concatenate(found)[:n]


def overlap_counts(cover: WhitneyCover, points, dilation: float) -> np.ndarray:
    """Number of balls T*B_ij containing each point"""
    if dilation < 1:
        raise InputError("overlap dilation must be at least 1")
    return index_for(cover).counts(np.asarray(points, dtype=float).reshape(-1, 2), dilation)


def overlap_stat(cover: WhitneyCover, dilation: float, n_points: int, seed: int) -> int:
    """Empirical N_T: the largest overlap count over random points"""
    counts = overlap_counts(cover, scatter_points(cover, n_points, seed), dilation)
    value = int(counts.max()) if counts.size else 0
    logger.info(f"Overlap N_{dilation:g} over {n_points} points: {value}")
    return value


def squares_disjoint(cover: WhitneyCover) -> bool:
    """Exact check that no generating square contains another or repeats"""
    accepted = {}
    for t in np.unique(cover.depth):
        sel = cover.depth == t
        keys = (cover.ix[sel] << 32) + cover.iy[sel]
        unique = np.unique(keys)
        if len(unique) != len(keys):
            return False
        accepted[int(t)] = unique
    for t, keys in accepted.items():
        ix, iy = keys >> 32, keys & 0xFFFFFFFF
        for k, coarse in accepted.items():
            if k >= t:
                continue
            shift = t - k
            if np.isin(((ix >> shift) << 32) + (iy >> shift), coarse).any():
                return False
    return True


def cover_frame(cover: WhitneyCover) -> pd.DataFrame:
    return pd.DataFrame({
        "i": cover.levels,
        "j": np.arange(cover.size),
        "x": cover.centers[:, 0],
        "y": cover.centers[:, 1],
        "r": cover.radii,
    })
