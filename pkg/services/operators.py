"""Extension Su, the averaged trace and the fractional maximal function.

Su(x) = sum_ij u_ij phi_ij(x), where u_ij is the nu-average of u over the
boundary samples in a dilated Whitney ball and phi_ij the hat partition of
unity. Averages are taken over ``WHITNEY_AVERAGE_DILATION`` times the cell
ball; a cell whose dilated ball holds no sample falls back to
``WHITNEY_FALLBACK_DILATION`` times it, which always reaches E under the
quadtree sandwich.
"""
import itertools
import logging
import math
import threading
from collections import OrderedDict
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import sparse
from scipy.spatial import cKDTree

from core.config import get_settings
from core.errors import EmptyAverageError, InputError, PreconditionError
from models.schemas import (
    AmbientFunction, Ball, BoundaryFunction, BoundarySampleSet, ConstantReport, FractalSpec, IntervalValue,
    Point2, Region, Square, Status, TraceResult, WhitneyCover,
)
from services.measures import mu_alpha_region
from services.quadrature import (
    Integrand, SmoothIntegrand, Taylor, lipschitz_integrand, powered_integrand, sampled_integrand,
)
from services.regularity import check_on_fractal
from services.whitney import distance_bounds, index_for, partition_matrix
from services.worker_pool import ordered_map

logger = logging.getLogger(__name__)

FD_STEP = 1e-6
MEMBER_CHUNK = 4096
POINT_CHUNK = 65_536


def _norm(vectors) -> np.ndarray:
    g = np.asarray(vectors, dtype=float).reshape(-1, 2)
    return np.hypot(g[:, 0], g[:, 1])


# ---------------------------------------------------------------------------
# Extension

class ExtensionOperator:
    """Su bound to one cover and one boundary sample set.

    The cell/sample membership is computed once, so Su is linear in u and
    every evaluation is a sparse product. Averages are kept per function name
    in a bounded cache and reused while the sampled values are unchanged.
    """

    def __init__(self, cover: WhitneyCover, samples: BoundarySampleSet):
        if samples.kind != cover.kind:
            raise InputError(f"{samples.kind.value} samples used with a {cover.kind.value} cover")
        settings = get_settings()
        self.cover = cover
        self.samples = samples
        self.sample_tree = cKDTree(samples.points)
        self.dilations = np.full(cover.size, settings.WHITNEY_AVERAGE_DILATION)
        self.members = self._membership(settings.WHITNEY_AVERAGE_DILATION)
        self.counts = np.diff(self.members.indptr)
        sparse_cells = np.flatnonzero(self.counts == 0)
        if sparse_cells.size and settings.WHITNEY_FALLBACK_DILATION > settings.WHITNEY_AVERAGE_DILATION:
            self.members = (self.members + self._membership(settings.WHITNEY_FALLBACK_DILATION, sparse_cells)).tocsr()
            self.dilations[sparse_cells] = settings.WHITNEY_FALLBACK_DILATION
            self.counts = np.diff(self.members.indptr)
        self._cache_size = settings.EXTENSION_CACHE_SIZE
        self._averages: "OrderedDict[str, Tuple[BoundaryFunction, np.ndarray, np.ndarray]]" = OrderedDict()
        self._lock = threading.Lock()
        logger.info(f"Extension operator ready: {cover.size} cells, {samples.size} samples, "
                    f"{sparse_cells.size} cells on the fallback ball, {int((self.counts == 0).sum())} without samples")

    def _membership(self, dilation: float, cells: Optional[np.ndarray] = None) -> sparse.csr_matrix:
        cover = self.cover
        cells = np.arange(cover.size) if cells is None else cells
        hits_by_cell: List[np.ndarray] = [np.zeros(0, dtype=np.int32)] * cover.size
        levels = cover.levels[cells]
        for level in np.unique(levels):
            ids = cells[levels == level]
            radius = dilation * float(cover.radii[ids[0]])
            for start in range(0, len(ids), MEMBER_CHUNK):
                sel = ids[start:start + MEMBER_CHUNK]
                for cell, hit in zip(sel, self.sample_tree.query_ball_point(cover.centers[sel], radius)):
                    hits_by_cell[cell] = np.sort(np.asarray(hit, dtype=np.int32))
        lengths = np.fromiter((len(h) for h in hits_by_cell), dtype=np.int64, count=cover.size)
        indptr = np.concatenate([[0], np.cumsum(lengths)])
        indices = np.concatenate(hits_by_cell) if cover.size else np.zeros(0, dtype=np.int32)
        data = np.ones(len(indices), dtype=np.int8)
        return sparse.csr_matrix((data, indices, indptr), shape=(cover.size, self.samples.size))

    def _entry(self, u: BoundaryFunction) -> Tuple[np.ndarray, np.ndarray]:
        """(sample values, cell averages) of u"""
        with self._lock:
            cached = self._averages.get(u.name)
            if cached is not None and cached[0] is u:
                self._averages.move_to_end(u.name)
                return cached[1], cached[2]
            values = u.values(self.samples)
            if cached is not None and np.array_equal(cached[1], values):
                avg = cached[2]
            else:
                with np.errstate(invalid="ignore", divide="ignore"):
                    avg = np.where(self.counts > 0, (self.members @ values) / self.counts, np.nan)
            self._averages[u.name] = (u, values, avg)
            self._averages.move_to_end(u.name)
            while len(self._averages) > self._cache_size:
                self._averages.popitem(last=False)
            return values, avg

    def averages(self, u: BoundaryFunction) -> np.ndarray:
        """nu-averages u_ij per cell; NaN where a cell holds no sample"""
        return self._entry(u)[1]

    def _require_averages(self, cells: np.ndarray) -> None:
        empty = cells[self.counts[cells] == 0]
        if empty.size:
            cell = self.cover.cell(int(empty[0]))
            raise EmptyAverageError(f"no boundary sample within {self.dilations[cell.index]:g} radii of cell "
                                    f"{cell.index} (level {cell.level}); draw more samples")

    def __call__(self, u: BoundaryFunction, points) -> np.ndarray:
        """Su at each point; points inside the resolution shell take the nearest sample's value"""
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        matrix, valid = partition_matrix(self.cover, pts, strict=False)
        values, avg = self._entry(u)
        self._require_averages(np.unique(matrix.indices))
        out = matrix @ np.nan_to_num(avg)
        shell = ~valid
        if shell.any():
            _, nearest = self.sample_tree.query(pts[shell])
            out[shell] = values[nearest]
        return out

    def as_ambient(self, u: BoundaryFunction) -> AmbientFunction:
        """Su as an ambient function with per-cell bounds and its exact gradient.

        Quadrature cells straddling the boundary of B reach points beyond the
        cover; those are evaluated at their nearest point of B.
        """
        return AmbientFunction(name=f"S{u.name}", rule=lambda pts: self(u, self.onto_ball(pts)),
                               gradient=lambda pts: self.gradient_field(u, self.onto_ball(pts)),
                               bounds=self.cell_bounds(u))

    def onto_ball(self, points) -> np.ndarray:
        """Radial projection onto the closed ambient ball"""
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        ball = self.cover.ambient
        c = ball.center.as_array()
        offset = pts - c
        norm = np.hypot(offset[:, 0], offset[:, 1])
        scale = np.minimum(1.0, ball.radius / np.maximum(norm, 1e-300))
        return c + offset * scale[:, None]

    def gradient_field(self, u: BoundaryFunction, points) -> np.ndarray:
        """grad Su = sum_j (u_j - Su) grad h_j / sum_j h_j over the live hats; zero in the resolution shell"""
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        _, avg = self._entry(u)
        grad = np.zeros_like(pts)
        for start in range(0, len(pts), POINT_CHUNK):
            block = pts[start:start + POINT_CHUNK]
            grad[start:start + len(block)] = self._gradient_block(avg, block)
        return grad

    def _gradient_block(self, avg: np.ndarray, pts: np.ndarray) -> np.ndarray:
        cover = self.cover
        n = len(pts)
        lo, _ = distance_bounds(cover.kind, pts, cover.koch_level)
        rows, cols, dist = index_for(cover).pairs(pts)
        radii = cover.radii[cols]
        hats = 1.0 - dist / radii
        keep = (hats > 0) & (lo[rows] > cover.resolution) & (dist > 0)
        rows, cols, dist, radii, hats = rows[keep], cols[keep], dist[keep], radii[keep], hats[keep]
        self._require_averages(cols)
        values = avg[cols]

        total = np.bincount(rows, weights=hats, minlength=n)
        safe = np.maximum(total, 1e-300)
        su = np.bincount(rows, weights=hats * values, minlength=n) / safe
        slope = (values - su[rows]) / safe[rows] / (radii * dist)
        rel = cover.centers[cols] - pts[rows]
        return np.column_stack([np.bincount(rows, weights=slope * rel[:, 0], minlength=n),
                                np.bincount(rows, weights=slope * rel[:, 1], minlength=n)])

    def cell_bounds(self, u: BoundaryFunction) -> Integrand:
        """Bounds of Su over quadrature discs.

        Su on a disc is a convex combination of the averages of the balls
        meeting it. Discs clear of the resolution shell are narrowed further
        by the Lipschitz bound of the normalized hats; discs that may reach
        the shell also take the range of the nearest-sample values there.
        """

        def bounds(centers, radii, d_minus, d_plus):
            lo, hi = np.empty(len(centers)), np.empty(len(centers))
            for start in range(0, len(centers), POINT_CHUNK):
                sl = slice(start, start + POINT_CHUNK)
                lo[sl], hi[sl] = self._disc_range(u, centers[sl], radii[sl])
            return lo, hi

        return bounds

    def _disc_range(self, u: BoundaryFunction, centers: np.ndarray, radii: np.ndarray):
        cover = self.cover
        values, avg = self._entry(u)
        pts = self.onto_ball(centers)
        n = len(pts)
        lo_d, est = distance_bounds(cover.kind, pts, cover.koch_level)
        rows, cols, dist = index_for(cover).pairs(pts, extra=radii)
        self._require_averages(cols)
        cell_values = avg[cols]
        lo, hi = np.full(n, np.inf), np.full(n, -np.inf)
        np.minimum.at(lo, rows, cell_values)
        np.maximum.at(hi, rows, cell_values)

        # the estimate sits mid-way between the distance bounds
        clear = (lo_d - radii - 2 * (est - lo_d) > cover.resolution) & (np.bincount(rows, minlength=n) > 0)
        cell_radii = cover.radii[cols]
        hats = 1.0 - dist / cell_radii
        total = np.bincount(rows, weights=np.maximum(hats, 0.0), minlength=n)
        floor = np.bincount(rows, weights=np.maximum(hats - radii[rows] / cell_radii, 0.0), minlength=n)
        steep = np.bincount(rows, weights=1.0 / cell_radii, minlength=n)
        weighted = np.bincount(rows, weights=np.maximum(hats, 0.0) * cell_values, minlength=n)
        narrow = clear & (floor > 0)
        with np.errstate(divide="ignore", invalid="ignore"):
            su = weighted / total
            reach = radii * (hi - lo) * steep / floor
        lo = np.where(narrow, np.maximum(lo, su - reach), lo)
        hi = np.where(narrow, np.minimum(hi, su + reach), hi)

        shell = np.flatnonzero(~clear)
        if shell.size:
            near, _ = self.sample_tree.query(pts[shell])
            hits = self.sample_tree.query_ball_point(pts[shell], near * (1 + 1e-9) + 2 * radii[shell] + 1e-15)
            lengths = np.fromiter((len(h) for h in hits), dtype=np.int64, count=len(hits))
            found = values[np.fromiter(itertools.chain.from_iterable(hits), dtype=np.int64, count=int(lengths.sum()))]
            starts = np.concatenate([[0], np.cumsum(lengths)[:-1]])
            lo[shell] = np.minimum(lo[shell], np.minimum.reduceat(found, starts))
            hi[shell] = np.maximum(hi[shell], np.maximum.reduceat(found, starts))
        return lo, hi

    def lipschitz(self, u: BoundaryFunction, spacing: Optional[float] = None) -> Tuple[float, float]:
        """Largest and 99th-percentile |grad Su| over a lattice of B outside the resolution shell"""
        spacing = get_settings().LIPSCHITZ_SPACING if spacing is None else spacing
        if spacing <= 0:
            raise InputError("lattice spacing must be positive")
        ball = self.cover.ambient
        ticks = np.arange(-ball.radius + spacing / 2, ball.radius, spacing)
        gx, gy = np.meshgrid(ticks, ticks)
        offsets = np.column_stack([gx.ravel(), gy.ravel()])
        pts = ball.center.as_array() + offsets[np.hypot(offsets[:, 0], offsets[:, 1]) < ball.radius]
        lo, _ = distance_bounds(self.cover.kind, pts, self.cover.koch_level)
        pts = pts[lo > self.cover.resolution]
        if not len(pts):
            return 0.0, 0.0
        slopes = _norm(self.gradient_field(u, pts))
        largest, typical = float(slopes.max()), float(np.quantile(slopes, 0.99))
        logger.debug(f"Lipschitz bound of S{u.name} over {len(pts)} lattice points: max {largest:.4g}, "
                     f"q99 {typical:.4g}")
        return largest, typical

    def _central(self, u: BoundaryFunction, pts: np.ndarray, h: np.ndarray) -> np.ndarray:
        shifts = [np.column_stack([h, np.zeros_like(h)]), np.column_stack([np.zeros_like(h), h])]
        grad = np.empty_like(pts)
        for axis, step in enumerate(shifts):
            grad[:, axis] = (self(u, pts + step) - self(u, pts - step)) / (2 * h)
        return grad


def extend(operator: ExtensionOperator, u: BoundaryFunction, x: Point2) -> float:
    return float(operator(u, [[x.x, x.y]])[0])


def extend_gradient(operator: ExtensionOperator, u: BoundaryFunction, x: Point2, h: float) -> np.ndarray:
    """Central-difference gradient of Su at x with step h <= dist(x, E) / 10"""
    lo, _ = distance_bounds(operator.cover.kind, [[x.x, x.y]], operator.cover.koch_level)
    if h <= 0 or h > lo[0] / 10:
        raise PreconditionError(f"step {h} must be positive and at most dist/10 = {lo[0] / 10:.3g}")
    return operator._central(u, np.array([[x.x, x.y]]), np.array([h]))[0]


def richardson_gap(operator: ExtensionOperator, u: BoundaryFunction, x: Point2, h: float) -> float:
    """|grad_h - grad_{h/2}|, the consistency check of the finite differences"""
    return float(np.linalg.norm(extend_gradient(operator, u, x, h) - extend_gradient(operator, u, x, h / 2)))


# ---------------------------------------------------------------------------
# Averages against mu_alpha

def gradient_rule(f: AmbientFunction):
    """Exact gradient when given, central differences otherwise"""
    if f.gradient is not None:
        return f.gradient

    def rule(pts):
        pts = np.asarray(pts, dtype=float).reshape(-1, 2)
        ex, ey = np.array([FD_STEP, 0.0]), np.array([0.0, FD_STEP])
        return np.column_stack([(f(pts + ex) - f(pts - ex)) / (2 * FD_STEP),
                                (f(pts + ey) - f(pts - ey)) / (2 * FD_STEP)])

    return rule


def _value_taylor(f: AmbientFunction, power: float, absolute: bool) -> Taylor:
    """(value, slope, curvature) of f, or of |f|^power, from f's curvature bounds"""
    grad = gradient_rule(f)
    p = power

    def taylor(centers, radii):
        v = f(centers)
        g = _norm(grad(centers))
        hess, _ = f.curvature(centers, radii)
        if not absolute:
            return v, g, hess
        a = np.abs(v)
        top = a + g * radii + 0.5 * hess * radii ** 2
        floor = a - g * radii - 0.5 * hess * radii ** 2
        spread = g + hess * radii
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            slope = p * a ** (p - 1) * g
            if p >= 2:
                curv = p * (p - 1) * top ** (p - 2) * spread ** 2 + p * top ** (p - 1) * hess
            else:
                # |f|^p bends without bound where f may vanish
                curv = np.where(floor > 0, p * (p - 1) * floor ** (p - 2) * spread ** 2 + p * top ** (p - 1) * hess,
                                np.inf)
        return a ** p, slope, curv

    return taylor


def _gradient_taylor(f: AmbientFunction, power: float) -> Taylor:
    """(value, slope, curvature) of |grad f|^power from f's Hessian and third-derivative bounds"""
    grad = gradient_rule(f)
    p = power

    def taylor(centers, radii):
        g = _norm(grad(centers))
        hess, third = f.curvature(centers, radii)
        top = g + hess * radii
        floor = g - hess * radii
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            slope = p * g ** (p - 1) * hess
            if p >= 2:
                curv = p * (p - 2) * top ** (p - 2) * hess ** 2 + p * top ** (p - 2) * (hess ** 2 + top * third)
            else:
                curv = np.where(floor > 0, p * (2 - p) * floor ** (p - 4) * top ** 2 * hess ** 2
                                + p * floor ** (p - 2) * (hess ** 2 + top * third), np.inf)
        return g ** p, slope, curv

    return taylor


def integrand_for(f: AmbientFunction, power: float = 1.0, absolute: bool = False) -> Integrand:
    """Cell bounds of f, or of |f|^power; second order where f carries curvature bounds"""
    absolute = absolute or power != 1.0
    if f.bounds is not None:
        bounds = powered_integrand(f.bounds, power, absolute)
    elif f.lipschitz is not None:
        bounds = lipschitz_integrand(f.rule, f.lipschitz, power, absolute)
    else:
        bounds = sampled_integrand(f.rule, power, absolute)
    if f.curvature is None:
        return bounds
    return SmoothIntegrand(bounds, _value_taylor(f, power, absolute))


def gradient_integrand(f: AmbientFunction, power: float) -> Integrand:
    """Cell bounds of |grad f|^power"""
    rule = gradient_rule(f)

    def norm(pts):
        return _norm(rule(pts))

    if f.gradient_lipschitz is not None:
        bounds = lipschitz_integrand(norm, f.gradient_lipschitz, power, absolute=True)
    else:
        bounds = sampled_integrand(norm, power, absolute=True)
    if f.curvature is None or f.gradient is None:
        return bounds
    return SmoothIntegrand(bounds, _gradient_taylor(f, power))




def _disjoint(region: Region, support: Region) -> bool:
    gap = np.abs(region.center.as_array() - support.center.as_array())
    if isinstance(support, Square):
        gap = np.maximum(gap - support.side / 2, 0.0)
        reach = region.radius if isinstance(region, Ball) else region.side / math.sqrt(2)
        return float(np.hypot(*gap)) > reach
    reach = region.radius if isinstance(region, Ball) else region.side / math.sqrt(2)
    return float(np.hypot(*gap)) > reach + support.radius


def _quotient(top: IntervalValue, bottom: IntervalValue) -> IntervalValue:
    status = Status.worst([top.status, bottom.status])
    if status == Status.DIVERGENT:
        return IntervalValue.divergent()
    if bottom.lo <= 0 or not math.isfinite(top.hi):
        return IntervalValue(lo=-math.inf, hi=math.inf, status=Status.BUDGET_EXCEEDED)
    ends = [top.lo / bottom.lo, top.lo / bottom.hi, top.hi / bottom.lo, top.hi / bottom.hi]
    return IntervalValue(lo=min(ends), hi=max(ends), status=status)


def ball_average(spec: FractalSpec, f: AmbientFunction, x: Point2, r: float, alpha: float,
                 tol: Optional[float] = None, budget: Optional[int] = None,
                 koch_level: Optional[int] = None) -> IntervalValue:
    """mu_alpha-average of f over B(x, r)"""
    if f.lipschitz == 0:
        return IntervalValue.exact(float(f(np.array([[x.x, x.y]]))[0]))
    ball = Ball(center=x, radius=r)
    if f.support is not None and _disjoint(ball, f.support):
        return IntervalValue.exact(0.0)
    mass = mu_alpha_region(spec, ball, alpha, tol=tol, budget=budget, koch_level=koch_level)
    total = mu_alpha_region(spec, ball, alpha, tol=tol, budget=budget, integrand=integrand_for(f),
                            koch_level=koch_level)
    return _quotient(total.value, mass.value)


# ---------------------------------------------------------------------------
# Trace

def trace(spec: FractalSpec, f: AmbientFunction, x: Point2, schedule: Sequence[float], alpha: float,
          tol: Optional[float] = None, budget: Optional[int] = None, koch_level: Optional[int] = None,
          stabilization_tol: Optional[float] = None) -> TraceResult:
    """Averages of f over shrinking balls B(x, r_m) and their final value.

    The run counts as stabilized when the last two averages agree within
    ``stabilization_tol`` times max(|last|, |previous|, 1).
    """
    radii = [float(r) for r in schedule]
    if not radii or any(r <= 0 or r > 1 for r in radii) or any(b >= a for a, b in zip(radii, radii[1:])):
        raise InputError("trace schedule must be strictly decreasing within (0, 1]")
    check_on_fractal(spec, x, koch_level)
    stabilization_tol = get_settings().TRACE_TOL if stabilization_tol is None else stabilization_tol

    averages = ordered_map(lambda r: ball_average(spec, f, x, r, alpha, tol, budget, koch_level), radii)
    mids = [a.mid for a in averages]
    stabilized = len(mids) > 1 and math.isfinite(mids[-1]) and math.isfinite(mids[-2]) and (
        abs(mids[-1] - mids[-2]) <= stabilization_tol * max(abs(mids[-1]), abs(mids[-2]), 1.0))
    result = TraceResult(x=x, radii=radii, averages=averages, limit=mids[-1], stabilized=stabilized,
                         status=Status.worst(a.status for a in averages))
    logger.debug(f"Trace of {f.name} at ({x.x:.4f}, {x.y:.4f}): {result.limit:.6g} (stabilized={stabilized})")
    return result


# ---------------------------------------------------------------------------
# Fractional maximal function

def maximal_radii(levels: Optional[int] = None) -> List[float]:
    levels = get_settings().MAXIMAL_LEVELS if levels is None else levels
    return [2.0 ** (-k) for k in range(levels + 1)]


def fractional_maximal(spec: FractalSpec, h: AmbientFunction, gamma: float, x: Point2, alpha: float,
                       radii: Optional[Sequence[float]] = None, tol: Optional[float] = None,
                       budget: Optional[int] = None, koch_level: Optional[int] = None) -> IntervalValue:
    """max over the radius schedule of r^gamma times the mu_alpha-average of h.

    A lower bound for the supremum over all radii in (0, 1].
    """
    radii = maximal_radii() if radii is None else [float(r) for r in radii]
    if not radii or any(r <= 0 or r > 1 for r in radii):
        raise InputError("maximal radii must lie in (0, 1]")
    lo = hi = 0.0
    statuses = []
    for r in radii:
        avg = ball_average(spec, h, x, r, alpha, tol, budget, koch_level)
        statuses.append(avg.status)
        if avg.status == Status.DIVERGENT:
            return IntervalValue.divergent(lo)
        lo = max(lo, r ** gamma * avg.lo)
        hi = max(hi, r ** gamma * avg.hi)
    return IntervalValue(lo=lo, hi=max(hi, lo), status=Status.worst(statuses))


def weak_type_table(spec: FractalSpec, h: AmbientFunction, gamma: float, alpha: float, points,
                    thresholds: Sequence[float], radii: Optional[Sequence[float]] = None,
                    tol: Optional[float] = None, budget: Optional[int] = None,
                    koch_level: Optional[int] = None) -> Tuple[pd.DataFrame, ConstantReport]:
    """nu({M_gamma h > t}) against (1/t) * integral of h dmu_alpha over a threshold grid.

    ``points`` are nu-distributed boundary samples of equal mass.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    if not len(thresholds) or min(thresholds) <= 0:
        raise InputError("thresholds must be positive")
    maximal = ordered_map(
        lambda p: fractional_maximal(spec, h, gamma, Point2.of(p), alpha, radii, tol, budget, koch_level), list(pts))
    values = np.array([m.mid for m in maximal])
    integral = mu_alpha_region(spec, spec.ambient, alpha, tol=tol, budget=budget, integrand=integrand_for(h),
                               koch_level=koch_level)

    rows = []
    for t in thresholds:
        level_set = float(np.mean(values > t))
        rows.append({"t": float(t), "level_set_mass": level_set, "integral": integral.mid,
                     "constant": t * level_set / integral.mid if integral.mid > 0 else math.inf})
    table = pd.DataFrame(rows, columns=["t", "level_set_mass", "integral", "constant"])
    constant = float(table["constant"].max())
    status = Status.worst([m.status for m in maximal] + [integral.status])
    report = ConstantReport(name=f"weak_type[{h.name}]", lhs=float((table["t"] * table["level_set_mass"]).max()),
                            rhs=integral.mid, constant=constant, status=status,
                            details={"gamma": gamma, "n_points": len(pts)})
    logger.info(f"Weak-type check for {h.name}: C = {constant:.4g} over {len(thresholds)} thresholds")
    return table, report


def strong_type_check(spec: FractalSpec, f: AmbientFunction, gamma: float, p: float, q: float, alpha: float,
                      points, radii: Optional[Sequence[float]] = None, tol: Optional[float] = None,
                      budget: Optional[int] = None, koch_level: Optional[int] = None) -> ConstantReport:
    """mean over nu-samples of (M_gamma(g^q))^(p/q) against the integral of g^p dmu_alpha, g = |grad f|"""
    if not 0 < q < p:
        raise InputError("strong-type check needs 0 < q < p")
    rule = gradient_rule(f)

    def g_power(pts):
        g = np.asarray(rule(pts), dtype=float).reshape(-1, 2)
        return np.hypot(g[:, 0], g[:, 1]) ** q

    g_q = AmbientFunction(name=f"|grad {f.name}|^{q:g}", rule=g_power)
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    maximal = ordered_map(
        lambda x: fractional_maximal(spec, g_q, gamma, Point2.of(x), alpha, radii, tol, budget, koch_level), list(pts))
    lhs = float(np.mean([m.mid ** (p / q) for m in maximal]))
    energy = mu_alpha_region(spec, spec.ambient, alpha, tol=tol, budget=budget,
                             integrand=gradient_integrand(f, p), koch_level=koch_level)
    rhs = energy.mid
    status = Status.worst([m.status for m in maximal] + [energy.status])
    constant = lhs / rhs if rhs > 0 else (0.0 if lhs == 0 else math.inf)
    logger.info(f"Strong-type check for {f.name}: lhs {lhs:.4g}, rhs {rhs:.4g}, C = {constant:.4g}")
    return ConstantReport(name=f"strong_type[{f.name}]", lhs=lhs, rhs=rhs, constant=constant, status=status,
                          details={"gamma": gamma, "p": p, "q": q, "n_points": len(pts)})
