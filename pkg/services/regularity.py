"""Empirical checks of the structural hypotheses on mu_alpha.

Surveys sample squares around the ambient ball, evaluate a ratio per square
through the interval quadrature and report extremes plus a stability flag
obtained by doubling the sample.
"""
import logging
import math
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from core.config import get_settings
from core.errors import InputError
from core.seeding import rng_for
from models.schemas import (
    Ball, FractalKind, FractalSpec, IntervalValue, MeasureEstimate, Point2, ShellProfile, Square, Status,
    SurveyRecord, SurveyReport, WeightParams,
)
from services import geometry
from services.measures import mu_alpha_region, nu_ball
from services.quadrature import shell_integrand
from services.worker_pool import ordered_map

logger = logging.getLogger(__name__)

QUANTILES = (0.5, 0.9, 0.99)
DOUBLING_STAGE, AP_STAGE = 1, 2


def weight_params(spec: FractalSpec, alpha: float, p: float = 2.0, theta: float = 0.4, q: float = 1.0) -> WeightParams:
    """WeightParams carrying the Hausdorff dimension of spec"""
    return WeightParams(alpha=alpha, p=p, theta=theta, q=q, hausdorff_dim=spec.hausdorff_dim)


def trace_admissible(params: WeightParams) -> bool:
    """gamma > 0, alpha <= 0, p * theta < 1 and theta < 1 - gamma / p"""
    gamma = params.gamma
    return gamma > 0 and params.alpha <= 0 and params.p * params.theta < 1 and params.theta < 1 - gamma / params.p


def extension_admissible(params: WeightParams) -> bool:
    """gamma > 0, alpha <= 0 and 1 - gamma / p <= theta < 1"""
    gamma = params.gamma
    return gamma > 0 and params.alpha <= 0 and 0 < params.theta < 1 and params.theta >= 1 - gamma / params.p


def ap_window(spec: FractalSpec, p: float) -> Tuple[float, float]:
    """Open interval of alpha for which dist(., E)^alpha is an A_p weight near E"""
    q = spec.hausdorff_dim
    return q - 2.0, (p - 1.0) * (2.0 - q)


# ---------------------------------------------------------------------------
# Square sampling

def _meets_ball(square: Square, ball: Ball) -> bool:
    gap = np.maximum(np.abs(square.center.as_array() - ball.center.as_array()) - square.side / 2, 0.0)
    return float(np.hypot(gap[0], gap[1])) <= ball.radius


def sample_square(spec: FractalSpec, seed: int, stage: int, index: int) -> Square:
    """Square i of a survey: center uniform in 2B, side log-uniform, meeting B"""
    settings = get_settings()
    rng = rng_for(seed, stage, index)
    ball = spec.ambient
    c = ball.center.as_array()
    log_lo, log_hi = math.log(settings.SQUARE_SIDE_MIN), math.log(settings.SQUARE_SIDE_MAX)
    while True:
        radius = 2 * ball.radius * math.sqrt(rng.random())
        angle = 2 * math.pi * rng.random()
        side = math.exp(rng.uniform(log_lo, log_hi))
        square = Square(center=Point2.of(c + radius * np.array([math.cos(angle), math.sin(angle)])), side=side)
        if _meets_ball(square, ball):
            return square


def _ratio(top: IntervalValue, bottom: IntervalValue) -> IntervalValue:
    status = Status.worst([top.status, bottom.status])
    if status == Status.DIVERGENT:
        return IntervalValue.divergent()
    if bottom.hi <= 0:
        # empty square (snowflake exterior): no ratio
        return IntervalValue(lo=0.0, hi=math.inf, status=status)
    lo = top.lo / bottom.hi if math.isfinite(bottom.hi) else 0.0
    hi = top.hi / bottom.lo if bottom.lo > 0 else math.inf
    return IntervalValue(lo=max(lo, 0.0), hi=max(hi, max(lo, 0.0)), status=status)


def _survey(spec: FractalSpec, n_squares: int, seed: int, stage: int,
            ratio_of: Callable[[Square], IntervalValue]) -> SurveyReport:
    if n_squares < 1:
        raise InputError("a survey needs at least one square")
    squares = [sample_square(spec, seed, stage, i) for i in range(2 * n_squares)]
    ratios = ordered_map(ratio_of, squares)

    records = []
    for i, (square, ratio) in enumerate(zip(squares, ratios)):
        value = ratio.mid if ratio.status == Status.CONVERGED else math.inf
        records.append(SurveyRecord(index=i, center_x=square.center.x, center_y=square.center.y, side=square.side,
                                    ratio=value, lo=ratio.lo, hi=ratio.hi, status=ratio.status))

    finite = np.array([r.ratio for r in records if math.isfinite(r.ratio)])
    first = np.array([r.ratio for r in records[:n_squares] if math.isfinite(r.ratio)])
    max_all = float(finite.max()) if finite.size else math.inf
    max_first = float(first.max()) if first.size else math.inf
    stable = bool(finite.size and first.size
                  and abs(max_all - max_first) <= get_settings().STABILITY_TOL * max_first)
    statuses = [r.status for r in records]
    report = SurveyReport(
        n_samples=n_squares,
        seed=seed,
        max_ratio=max_all,
        min_ratio=float(finite.min()) if finite.size else math.inf,
        quantiles=[(q, float(np.quantile(finite, q))) for q in QUANTILES] if finite.size else [],
        stable=stable,
        max_ratio_first_half=max_first,
        divergent_count=statuses.count(Status.DIVERGENT),
        budget_exceeded_count=statuses.count(Status.BUDGET_EXCEEDED),
        status=Status.worst(statuses),
        records=records,
    )
    logger.info(f"Survey of {2 * n_squares} squares: max ratio {report.max_ratio:.6g}, "
                f"stable={report.stable}, divergent={report.divergent_count}")
    return report


# ---------------------------------------------------------------------------
# Doubling and A_p

def doubling_ratio(spec: FractalSpec, square: Square, alpha: float, tol: Optional[float] = None,
                   budget: Optional[int] = None) -> IntervalValue:
    """mu_alpha(3S) / mu_alpha(S) as an interval"""
    small = mu_alpha_region(spec, square, alpha, tol=tol, budget=budget).value
    big = mu_alpha_region(spec, square.scaled(3.0), alpha, tol=tol, budget=budget).value
    return _ratio(big, small)


def doubling_survey(spec: FractalSpec, alpha: float, n_squares: int, seed: int, tol: Optional[float] = None,
                    budget: Optional[int] = None) -> SurveyReport:
    logger.info(f"Doubling survey on the {spec.kind.value}: alpha={alpha}, n={n_squares}, seed={seed}")
    return _survey(spec, n_squares, seed, DOUBLING_STAGE,
                   lambda square: doubling_ratio(spec, square, alpha, tol, budget))


def ap_product(spec: FractalSpec, square: Square, alpha: float, p: float, tol: Optional[float] = None,
               budget: Optional[int] = None) -> IntervalValue:
    """(avg of w)(avg of w^(-1/(p-1)))^(p-1) over S for w = dist(., E)^alpha"""
    if p <= 1:
        raise InputError("p must exceed 1")
    area = square.area
    direct = mu_alpha_region(spec, square, alpha, tol=tol, budget=budget).value
    dual = mu_alpha_region(spec, square, -alpha / (p - 1.0), tol=tol, budget=budget).value
    status = Status.worst([direct.status, dual.status])
    if status == Status.DIVERGENT:
        return IntervalValue.divergent()
    lo = (direct.lo / area) * (dual.lo / area) ** (p - 1.0)
    hi = (direct.hi / area) * (dual.hi / area) ** (p - 1.0)
    return IntervalValue(lo=lo, hi=hi, status=status)


def ap_survey(spec: FractalSpec, alpha: float, p: float, n_squares: int, seed: int, tol: Optional[float] = None,
              budget: Optional[int] = None) -> SurveyReport:
    window = ap_window(spec, p)
    logger.info(f"A_p survey on the {spec.kind.value}: alpha={alpha}, p={p}, window={window}")
    report = _survey(spec, n_squares, seed, AP_STAGE,
                     lambda square: ap_product(spec, square, alpha, p, tol, budget))
    report.window = window
    report.in_window = window[0] < alpha < window[1]
    return report


# ---------------------------------------------------------------------------
# Codimension and shells

def check_on_fractal(spec: FractalSpec, x: Point2, koch_level: Optional[int]) -> None:
    if spec.kind == FractalKind.KOCH:
        lo, _, _ = geometry.koch_index(get_settings().KOCH_LEVEL if koch_level is None else koch_level).query(
            [[x.x, x.y]])
        off = lo[0] > 0
    else:
        off = geometry.distance_many(spec, [[x.x, x.y]])[0] > 1e-9
    if off:
        raise InputError(f"({x.x}, {x.y}) is not a point of the {spec.kind.value}")


def codimension_profile(spec: FractalSpec, alpha: float, x: Point2, radii: Sequence[float],
                        tol: Optional[float] = None, budget: Optional[int] = None,
                        koch_level: Optional[int] = None, normalize: str = "area") -> List[IntervalValue]:
    """mu_alpha(B(x, r)) / r^(2+alpha) for each radius.

    With ``normalize="nu"`` the denominator is r^(2+alpha-Q) * nu(B(x, r)),
    the comparison used for the snowflake domain.
    """
    if any(r <= 0 or r > 2 for r in radii):
        raise InputError("radii must lie in (0, 2]")
    check_on_fractal(spec, x, koch_level)

    def one(r: float) -> IntervalValue:
        est = mu_alpha_region(spec, Ball(center=x, radius=r), alpha, tol=tol, budget=budget, koch_level=koch_level)
        if est.status == Status.DIVERGENT:
            return est.value
        scale = r ** (2.0 + alpha)
        if normalize == "nu":
            scale = r ** (2.0 + alpha - spec.hausdorff_dim) * nu_ball(spec, x, r)
        return IntervalValue(lo=est.value.lo / scale, hi=est.value.hi / scale, status=est.status)

    return ordered_map(one, list(radii))


def fit_slope(rhos: Sequence[float], masses: Sequence[float]) -> float:
    """Least-squares slope of log(mass) against log(rho) over the positive masses"""
    x, y = np.asarray(rhos, dtype=float), np.asarray(masses, dtype=float)
    ok = (y > 0) & np.isfinite(y)
    if ok.sum() < 2:
        return math.nan
    slope, _ = np.polyfit(np.log(x[ok]), np.log(y[ok]), 1)
    return float(slope)


def shell_profile(x: Point2, r: float, rhos: Sequence[float], n_level: Optional[int] = None,
                  tol: float = 0.05, budget: Optional[int] = None) -> ShellProfile:
    """Lebesgue mass of {y in B(x, r) inside the snowflake : dist(y, K) <= rho} per rho.

    The slope is fitted without the two largest rho values.
    """
    spec = geometry.fractal_spec(FractalKind.KOCH)
    level = 8 if n_level is None else n_level
    rhos = sorted(float(rho) for rho in rhos)
    if not rhos or rhos[0] <= 0 or rhos[-1] > r or r > spec.diameter:
        raise InputError("shell profile needs 0 < rho <= r <= diam")
    ball = Ball(center=x, radius=r)

    masses: List[MeasureEstimate] = ordered_map(
        lambda rho: mu_alpha_region(spec, ball, 0.0, tol=tol, budget=budget, integrand=shell_integrand(rho),
                                    koch_level=level),
        rhos)

    fit = rhos[:-2] if len(rhos) > 3 else rhos
    mids = [m.mid for m in masses[:len(fit)]]
    status = Status.worst(m.status for m in masses)
    if status == Status.CONVERGED and any(m.band_width > 0.5 * max(m.mid, 1e-300) for m in masses[:len(fit)]):
        status = Status.BUDGET_EXCEEDED
    profile = ShellProfile(x=x, r=r, rho_list=rhos, masses=masses, fitted_slope=fit_slope(fit, mids),
                           fit_range=(fit[0], fit[-1]), status=status)
    logger.info(f"Shell profile at ({x.x:.4f}, {x.y:.4f}), r={r}: slope {profile.fitted_slope:.4f} ({status.value})")
    return profile
