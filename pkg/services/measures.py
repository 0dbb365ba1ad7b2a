"""Weighted area mu_alpha and the boundary measure nu.

Closed forms come from ``services.closed_forms``; everything else is
bracketed by the interval quadrature in ``services.quadrature``. nu is the
normalized self-similar measure on E (equal mass per cell of a level).
"""
import logging
import math
from typing import Optional, Tuple, Union

import numpy as np

from core.config import get_settings
from core.errors import InputError
from core.seeding import rng_for
from models.schemas import (
    BoundarySampleSet, FractalKind, FractalSpec, GridCase, IntervalValue, MeasureEstimate, Point2, Region,
    Square, Status, WeightParams,
)
from services import geometry
from services.closed_forms import (  # noqa: F401  (re-exported operations)
    carpet_cell_by_side, carpet_hole_by_side, carpet_series, gasket_triangle_measure, hole_measure_carpet,
    hole_measure_gasket,
)
from services.quadrature import Integrand, integrate

logger = logging.getLogger(__name__)


def _alpha_of(params: Union[WeightParams, float]) -> float:
    return params.alpha if isinstance(params, WeightParams) else float(params)


def _closed(value: float, tol: float = 0.0) -> MeasureEstimate:
    return MeasureEstimate(value=IntervalValue.exact(value), cells_used=0, tolerance_requested=tol)


def mu_alpha_region(spec: FractalSpec, region: Region, params: Union[WeightParams, float],
                    tol: Optional[float] = None, budget: Optional[int] = None,
                    integrand: Optional[Integrand] = None, koch_level: Optional[int] = None,
                    atol: float = 0.0) -> MeasureEstimate:
    """Interval estimate of mu_alpha(region), or of the integral of f dmu_alpha when an integrand is given"""
    alpha = _alpha_of(params)
    estimate = integrate(spec, region, alpha, integrand=integrand, tol=tol, budget=budget, atol=atol,
                         koch_level=koch_level)
    if estimate.status != Status.CONVERGED:
        logger.debug(f"mu_alpha over {region.shape} at alpha={alpha}: {estimate.status.value}")
    return estimate


def grid_square_index(square: Square) -> Tuple[int, int, int]:
    """(k, m, n) of a square of the ternary grid, or InputError"""
    k = round(-math.log(square.side) / math.log(3.0))
    side = 3.0 ** (-k)
    if abs(square.side / side - 1.0) > 1e-9:
        raise InputError(f"side {square.side} is not a power of 1/3")
    m_f = square.center.x / side - 0.5
    n_f = square.center.y / side - 0.5
    m, n = round(m_f), round(n_f)
    if abs(m - m_f) > 1e-6 or abs(n - n_f) > 1e-6:
        raise InputError("square is not aligned with the ternary grid")
    return k, m, n


def grid_square(k: int, m: int, n: int) -> Square:
    side = 3.0 ** (-k)
    return Square(center=Point2(x=(m + 0.5) * side, y=(n + 0.5) * side), side=side)


def grid_square_measure_carpet(square: Square, params: Union[WeightParams, float],
                               tol: Optional[float] = None, budget: Optional[int] = None) -> MeasureEstimate:
    """mu_alpha of a ternary grid square: exact for carpet cells and holes, quadrature otherwise"""
    alpha = _alpha_of(params)
    tol = get_settings().QUAD_TOL if tol is None else tol
    k, m, n = grid_square_index(square)
    case = geometry.classify_grid_square(k, m, n)
    if case == GridCase.CELL:
        return _closed(carpet_cell_by_side(square.side, alpha), tol)
    if case == GridCase.HOLE:
        return _closed(carpet_hole_by_side(square.side, alpha), tol)
    return mu_alpha_region(geometry.fractal_spec(FractalKind.CARPET), square, alpha, tol=tol, budget=budget)


def _grid_upper(k: int, m: int, n: int, alpha: float) -> float:
    case = geometry.classify_grid_square(k, m, n)
    side = 3.0 ** (-k)
    if case == GridCase.CELL:
        return carpet_cell_by_side(side, alpha)
    if case == GridCase.HOLE:
        return carpet_hole_by_side(side, alpha)
    if case == GridCase.MIXED:
        return sum(_grid_upper(k + 1, 3 * m + a, 3 * n + b, alpha) for a in range(3) for b in range(3))
    if alpha <= 0:
        return carpet_hole_by_side(side, alpha)
    d = geometry.carpet_distance_many([[(m + 0.5) * side, (n + 0.5) * side]])[0]
    return side * side * (d + side / math.sqrt(2)) ** alpha


def _grid_lower(k: int, m: int, n: int, alpha: float) -> float:
    case = geometry.classify_grid_square(k, m, n)
    side = 3.0 ** (-k)
    if case == GridCase.CELL:
        return carpet_cell_by_side(side, alpha)
    if case == GridCase.HOLE:
        return carpet_hole_by_side(side, alpha)
    d = geometry.carpet_distance_many([[(m + 0.5) * side, (n + 0.5) * side]])[0]
    reach = side / math.sqrt(2)
    if alpha < 0:
        return side * side * (d + reach) ** alpha
    return side * side * max(d - reach, 0.0) ** alpha


def general_square_bracket(square: Square, params: Union[WeightParams, float]) -> IntervalValue:
    """Closed-form bracket of mu_alpha(S) for an arbitrary square meeting the carpet.

    Upper: the grid squares of the finest level k with 3^-k >= s that meet S.
    Lower: the level k+2 grid squares contained in S.
    """
    alpha = _alpha_of(params)
    s = square.side
    if s > 9.0:
        raise InputError("bracket requires side at most 9")
    k = math.floor(-math.log(s) / math.log(3.0) + 1e-9)
    lo, hi = square.bbox()
    side = 3.0 ** (-k)
    upper = 0.0
    for m in range(math.floor(lo[0] / side), math.ceil(hi[0] / side)):
        for n in range(math.floor(lo[1] / side), math.ceil(hi[1] / side)):
            upper += _grid_upper(k, m, n, alpha)

    fine = side / 9
    lower = 0.0
    for m in range(math.ceil(lo[0] / fine - 1e-9), math.floor(hi[0] / fine + 1e-9)):
        for n in range(math.ceil(lo[1] / fine - 1e-9), math.floor(hi[1] / fine + 1e-9)):
            lower += _grid_lower(k + 2, m, n, alpha)

    if math.isinf(lower):
        return IntervalValue.divergent()
    if math.isinf(upper):
        return IntervalValue(lo=lower, hi=math.inf, status=Status.BUDGET_EXCEEDED)
    return IntervalValue(lo=lower, hi=upper)


def mu_alpha_mc_oracle(spec: FractalSpec, region: Region, params: Union[WeightParams, float], n_samples: int,
                       seed: int, koch_level: Optional[int] = None) -> Tuple[float, float]:
    """Plain Monte Carlo estimate (mean, stderr) of mu_alpha(region)"""
    if n_samples < 1:
        raise InputError("n_samples must be at least 1")
    alpha = _alpha_of(params)
    rng = rng_for(seed)
    c = region.center.as_array()
    if isinstance(region, Square):
        pts = c + (rng.random((n_samples, 2)) - 0.5) * region.side
    else:
        radius = region.radius * np.sqrt(rng.random(n_samples))
        angle = 2 * math.pi * rng.random(n_samples)
        pts = c + np.column_stack([radius * np.cos(angle), radius * np.sin(angle)])

    if spec.kind == FractalKind.KOCH:
        index = geometry.koch_index(get_settings().KOCH_LEVEL if koch_level is None else koch_level)
        near = index.nearest(pts)
        inside = index.inside_polygon(pts, near)
        with np.errstate(divide="ignore"):
            values = np.where(inside, near[0] ** alpha, 0.0)
    else:
        d = geometry.distance_many(spec, pts)
        with np.errstate(divide="ignore"):
            values = d ** alpha
    values = values * region.area
    mean = float(np.mean(values))
    stderr = float(np.std(values, ddof=1) / math.sqrt(n_samples)) if n_samples > 1 else math.inf
    return mean, stderr


# ---------------------------------------------------------------------------
# Boundary measure

def nu_ball_many(spec: FractalSpec, centers, radii, level: Optional[int] = None) -> np.ndarray:
    level = get_settings().NU_BALL_LEVEL if level is None else level
    return geometry.cell_mass_in_balls(spec.kind, centers, radii, level)


def nu_ball(spec: FractalSpec, center: Point2, r: float, level: Optional[int] = None) -> float:
    """nu(B(center, r)) counted over level-k cells, overcounting only cells near the sphere"""
    if r <= 0:
        raise InputError("ball radius must be positive")
    return float(nu_ball_many(spec, [[center.x, center.y]], [r], level)[0])


def sample_depth(spec: FractalSpec, n: int) -> int:
    return math.ceil(math.log(max(n, 2)) / math.log(spec.branching)) + get_settings().SAMPLE_EXTRA_DEPTH


def boundary_sample(spec: FractalSpec, n: int, seed: int) -> BoundarySampleSet:
    """n nu-distributed points from uniform random addresses, each of mass 1/n"""
    if n < 1:
        raise InputError("sample size must be at least 1")
    depth = sample_depth(spec, n)
    rng = rng_for(seed)
    sides = rng.integers(0, spec.root_cells, n) if spec.kind == FractalKind.KOCH else None
    digits = rng.integers(0, spec.branching, (n, depth))
    points = geometry.digits_to_points(spec.kind, digits, sides) * spec.scale
    if sides is not None:
        digits = np.column_stack([sides, digits])
    logger.debug(f"Drew {n} {spec.kind.value} boundary samples at depth {depth} (seed {seed})")
    return BoundarySampleSet(kind=spec.kind, points=points, digits=digits.astype(np.int8),
                             masses=np.full(n, 1.0 / n), total_mass=1.0, seed=seed, depth=depth)

