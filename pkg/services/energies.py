"""Besov energies of boundary functions and weighted Sobolev energies on B.

The double-sum Besov kernel runs over row tiles of ``BESOV_TILE`` samples and
accumulates the tiles in a fixed order, so values do not depend on the worker
count.
"""
import logging
import math
from typing import Callable, List, Optional, Tuple

import numpy as np
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist

from core.config import get_settings
from core.errors import InputError
from core.seeding import rng_for
from models.schemas import (
    AmbientFunction, Ball, BoundaryFunction, BoundarySampleSet, ConstantReport, EnergyForm, EnergyReport,
    FamilyMember, FractalKind, FractalSpec, Region, Status, WeightParams,
)
from services import geometry
from services.measures import mu_alpha_region, nu_ball_many
from services.operators import ExtensionOperator, gradient_integrand, integrand_for
from services.worker_pool import ordered_map

logger = logging.getLogger(__name__)

LIPSCHITZ_STAGE = 21
SHORT_SCALE = 2.0 ** -8

Sampler = Callable[[np.random.Generator, int], np.ndarray]


# ---------------------------------------------------------------------------
# Besov energies

def _besov_tile(spec: FractalSpec, points: np.ndarray, values: np.ndarray, rows: np.ndarray,
                exponent: float, p: float, level: Optional[int]) -> Tuple[float, int]:
    """Partial double sum over the row block ``rows`` and the coincident pairs skipped"""
    n = len(points)
    floor = get_settings().NU_HAT_FLOOR
    d = cdist(points[rows], points)
    ordered = np.sort(d, axis=1)
    counts = np.stack([np.searchsorted(ordered[k], d[k], side="right") for k in range(len(rows))])

    off_diagonal = np.ones_like(d, dtype=bool)
    off_diagonal[np.arange(len(rows)), rows] = False
    coincident = off_diagonal & (d == 0)
    live = off_diagonal & (d > 0)

    nu_hat = counts / n
    sparse_rows, sparse_cols = np.nonzero(live & (counts < floor))
    if sparse_rows.size:
        nu_hat[sparse_rows, sparse_cols] = nu_ball_many(
            spec, points[rows][sparse_rows], d[sparse_rows, sparse_cols], level)

    diff = np.abs(values[rows][:, None] - values[None, :]) ** p
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(live, diff / (d ** exponent * nu_hat), 0.0)
    return float(terms.sum()), int(coincident.sum())


def besov_energy(spec: FractalSpec, samples: BoundarySampleSet, u: BoundaryFunction, theta: float, p: float,
                 level: Optional[int] = None, params: Optional[WeightParams] = None) -> EnergyReport:
    """(1/N^2) sum over i != j of |u_i - u_j|^p / (d_ij^(theta p) nu(B(x_i, d_ij)))

    ``params`` is recorded on the report as given; the energy itself only
    depends on theta and p.
    """
    n = samples.size
    if n < 2:
        raise InputError("the Besov double sum needs at least two samples")
    if not 0 < theta < 1 or p < 1:
        raise InputError("Besov energy needs 0 < theta < 1 and p >= 1")
    values = u.values(samples)
    tile = get_settings().BESOV_TILE
    blocks = [np.arange(start, min(start + tile, n)) for start in range(0, n, tile)]
    parts = ordered_map(lambda rows: _besov_tile(spec, samples.points, values, rows, theta * p, p, level), blocks)

    total = 0.0
    skipped = 0
    for part, count in parts:
        total += part
        skipped += count
    value = total / (n * n)
    logger.debug(f"Besov double sum of {u.name}: {value:.6g} over {n} samples ({skipped} coincident pairs)")
    return EnergyReport(value=value, form=EnergyForm.DOUBLE_SUM, n_samples=n, seed=samples.seed, skipped=skipped,
                        params=params)


def besov_energy_dyadic(spec: FractalSpec, samples: BoundarySampleSet, u: BoundaryFunction, theta: float,
                        p: float, n_max: int, params: Optional[WeightParams] = None) -> EnergyReport:
    """sum over n <= n_max of 2^(n theta p) * mean_i of the average of |u_i - u_j|^p over B(x_i, 2^-n)"""
    if n_max < 1:
        raise InputError("n_max must be at least 1")
    if not 0 < theta < 1 or p < 1:
        raise InputError("Besov energy needs 0 < theta < 1 and p >= 1")
    n = samples.size
    values = u.values(samples)
    tree = cKDTree(samples.points)
    total = 0.0
    skipped = 0
    for k in range(n_max + 1):
        pairs = tree.query_pairs(2.0 ** (-k), output_type="ndarray")
        sums = np.zeros(n)
        counts = np.zeros(n, dtype=np.int64)
        if len(pairs):
            diff = np.abs(values[pairs[:, 0]] - values[pairs[:, 1]]) ** p
            sums += np.bincount(pairs[:, 0], weights=diff, minlength=n) + np.bincount(pairs[:, 1], weights=diff,
                                                                                        minlength=n)
            counts += np.bincount(pairs[:, 0], minlength=n) + np.bincount(pairs[:, 1], minlength=n)
        empty = counts == 0
        skipped += int(empty.sum())
        averages = np.where(empty, 0.0, sums / np.maximum(counts, 1))
        total += 2.0 ** (k * theta * p) * float(averages.sum()) / n
    logger.debug(f"Dyadic Besov energy of {u.name}: {total:.6g} ({skipped} empty balls)")
    return EnergyReport(value=total, form=EnergyForm.DYADIC, n_samples=n, seed=samples.seed, skipped=skipped,
                        params=params)


def boundary_lp(samples: BoundarySampleSet, u: BoundaryFunction, p: float) -> float:
    """integral of |u|^p dnu over the sample masses"""
    return float(np.sum(samples.masses * np.abs(u.values(samples)) ** p))


# ---------------------------------------------------------------------------
# Sobolev energy

def sobolev_energy(spec: FractalSpec, f: AmbientFunction, params: WeightParams, tol: Optional[float] = None,
                   budget: Optional[int] = None, region: Optional[Region] = None,
                   koch_level: Optional[int] = None) -> EnergyReport:
    """Gradient term (value) and mass term of the N^{1,p}(B, mu_alpha) energy"""
    region = spec.ambient if region is None else region
    p, alpha = params.p, params.alpha
    mass = mu_alpha_region(spec, region, alpha, tol=tol, budget=budget,
                           integrand=integrand_for(f, power=p, absolute=True), koch_level=koch_level)
    if f.lipschitz == 0:
        grad_value, grad_status, grad_interval, grad_cells = 0.0, Status.CONVERGED, None, 0
    else:
        grad = mu_alpha_region(spec, region, alpha, tol=tol, budget=budget, integrand=gradient_integrand(f, p),
                               koch_level=koch_level)
        grad_value, grad_status, grad_interval, grad_cells = grad.mid, grad.status, grad.value, grad.cells_used
    status = Status.worst([grad_status, mass.status])
    logger.debug(f"Sobolev energy of {f.name}: gradient {grad_value:.6g}, mass {mass.mid:.6g} ({status.value})")
    return EnergyReport(value=max(grad_value, 0.0), form=EnergyForm.SOBOLEV, params=params,
                        cells_used=grad_cells + mass.cells_used, mass_term=max(mass.mid, 0.0),
                        interval=grad_interval, status=status)


# ---------------------------------------------------------------------------
# Lipschitz estimate

def ball_sampler(ball: Ball, spec: Optional[FractalSpec] = None, min_dist: float = 0.0) -> Sampler:
    """Uniform points of a ball, optionally kept at distance > min_dist from E"""
    c = ball.center.as_array()

    def sample(rng: np.random.Generator, n: int) -> np.ndarray:
        found, count = [], 0
        while count < n:
            r = ball.radius * np.sqrt(rng.random(2 * n))
            angle = 2 * math.pi * rng.random(2 * n)
            pts = c + np.column_stack([r * np.cos(angle), r * np.sin(angle)])
            if spec is not None and min_dist > 0:
                if spec.kind == FractalKind.KOCH:
                    lo, _, _ = geometry.koch_index(get_settings().KOCH_LEVEL).query(pts)
                else:
                    lo = geometry.distance_many(spec, pts)
                pts = pts[lo > min_dist]
            found.append(pts)
            count += len(pts)
        return np.concatenate(found)[:n]

    return sample


def lipschitz_estimate(f: AmbientFunction, sampler: Sampler, n_pairs: int, seed: int) -> float:
    """Largest difference quotient over global pairs and pairs at scale 2^-8"""
    if n_pairs < 1:
        raise InputError("n_pairs must be at least 1")
    rng = rng_for(seed, LIPSCHITZ_STAGE)
    x, y = sampler(rng, n_pairs), sampler(rng, n_pairs)
    angle = 2 * math.pi * rng.random(n_pairs)
    z = x + SHORT_SCALE * np.column_stack([np.cos(angle), np.sin(angle)])

    best = 0.0
    for a, b in ((x, y), (x, z)):
        gap = np.hypot(*(a - b).T)
        ok = gap > 0
        if ok.any():
            quotients = np.abs(f(a[ok]) - f(b[ok])) / gap[ok]
            best = max(best, float(np.nanmax(quotients)))
    logger.debug(f"Lipschitz estimate of {f.name} over {n_pairs} pairs: {best:.6g}")
    return best


# ---------------------------------------------------------------------------
# Test-function family

def _anchor_points(spec: FractalSpec) -> Tuple[np.ndarray, np.ndarray]:
    """Center of the largest hole and the center of a second-generation hole"""
    if spec.kind == FractalKind.CARPET:
        return np.array([0.5, 0.5]), np.array([1 / 6, 1 / 6])
    if spec.kind == FractalKind.GASKET:
        return np.array([0.5, math.sqrt(3) / 6]), np.array([0.25, math.sqrt(3) / 12])
    return np.array([0.5, math.sqrt(3) / 6]), np.array([0.5, 0.1])


def _distance_to_set(spec: FractalSpec, point: np.ndarray) -> float:
    if spec.kind == FractalKind.KOCH:
        lo, _, _ = geometry.koch_index(get_settings().KOCH_LEVEL).query([point])
        return float(lo[0])
    return float(geometry.distance_many(spec, [point])[0])


def _radial_span(centers, radii, anchor: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Smallest and largest distance to anchor over each disc"""
    rel = np.asarray(centers, dtype=float).reshape(-1, 2) - anchor
    gap = np.hypot(rel[:, 0], rel[:, 1])
    return np.maximum(gap - radii, 0.0), gap + radii


def _gauss(center: np.ndarray, width: float):
    def rule(pts):
        rel = np.asarray(pts, dtype=float).reshape(-1, 2) - center
        return np.exp(-np.sum(rel * rel, axis=1) / (2 * width ** 2))

    def gradient(pts):
        rel = np.asarray(pts, dtype=float).reshape(-1, 2) - center
        return -rel / width ** 2 * rule(pts)[:, None]

    def curvature(centers, radii):
        near, far = _radial_span(centers, radii, center)
        s_lo, s_hi = near / width, far / width
        envelope = np.exp(-0.5 * s_lo ** 2)
        return (np.maximum(1.0, s_hi ** 2) * envelope / width ** 2,
                (s_hi ** 3 + 3 * s_hi) * envelope / width ** 3)

    return rule, gradient, curvature


def _flat(centers, radii):
    zero = np.zeros(len(np.asarray(centers).reshape(-1, 2)))
    return zero, zero


def _member(name: str, rule, gradient, curvature, lipschitz: Optional[float], gradient_lipschitz: Optional[float],
            boundary_lipschitz: Optional[float]) -> FamilyMember:
    return FamilyMember(
        name=name,
        ambient=AmbientFunction(name=name, rule=rule, gradient=gradient, curvature=curvature, lipschitz=lipschitz,
                                gradient_lipschitz=gradient_lipschitz),
        boundary=BoundaryFunction(name=name, rule=rule, lipschitz=boundary_lipschitz),
    )


def function_family(spec: FractalSpec) -> List[FamilyMember]:
    """Coordinate, hole bump, distance power, two-bump difference and constant"""
    hole, second = _anchor_points(spec)
    width = 0.15
    bump, bump_grad, bump_curv = _gauss(hole, width)
    left, left_grad, left_curv = _gauss(np.array([0.25, 0.5]), 0.2)
    right, right_grad, right_curv = _gauss(np.array([0.75, 0.5]), 0.2)
    bump_lip = math.exp(-0.5) / width

    gap = _distance_to_set(spec, second)
    power = 0.9

    def dist_power(pts):
        rel = np.asarray(pts, dtype=float).reshape(-1, 2) - second
        return np.hypot(rel[:, 0], rel[:, 1]) ** power

    def dist_power_grad(pts):
        rel = np.asarray(pts, dtype=float).reshape(-1, 2) - second
        r = np.hypot(rel[:, 0], rel[:, 1])
        with np.errstate(divide="ignore", invalid="ignore"):
            scale = np.where(r > 0, power * r ** (power - 2), 0.0)
        return rel * scale[:, None]

    # radial rho^a: Hessian norm a rho^(a-2), third derivatives (a|a-1||a-2| + 3a|a-2|) rho^(a-3)
    third_coef = power * abs(power - 1) * abs(power - 2) + 3 * power * abs(power - 2)

    def dist_power_curv(centers, radii):
        near, _ = _radial_span(centers, radii, second)
        with np.errstate(divide="ignore"):
            hess = np.where(near > 0, power * near ** (power - 2), np.inf)
            third = np.where(near > 0, third_coef * near ** (power - 3), np.inf)
        return hess, third

    def two_bumps_curv(centers, radii):
        (lh, lt), (rh, rt) = left_curv(centers, radii), right_curv(centers, radii)
        return lh + rh, lt + rt

    return [
        _member("x1", lambda pts: np.asarray(pts, dtype=float).reshape(-1, 2)[:, 0],
                lambda pts: np.tile([1.0, 0.0], (len(np.asarray(pts).reshape(-1, 2)), 1)), _flat, 1.0, 0.0, 1.0),
        _member("hole_bump", bump, bump_grad, bump_curv, bump_lip, 1 / width ** 2, bump_lip),
        _member("dist_power", dist_power, dist_power_grad, dist_power_curv, None, None, power * gap ** (power - 1)),
        _member("two_bumps", lambda pts: left(pts) - right(pts), lambda pts: left_grad(pts) - right_grad(pts),
                two_bumps_curv, 2 * math.exp(-0.5) / 0.2, 2 / 0.2 ** 2, 2 * math.exp(-0.5) / 0.2),
        _member("constant", lambda pts: np.ones(len(np.asarray(pts).reshape(-1, 2))),
                lambda pts: np.zeros((len(np.asarray(pts).reshape(-1, 2)), 2)), _flat, 0.0, 0.0, 0.0),
    ]


# ---------------------------------------------------------------------------
# Norm-inequality experiments

def _ratio(lhs: float, rhs: float) -> float:
    if lhs == 0:
        return 0.0
    return lhs / rhs if rhs > 0 else math.inf


def trace_ratio(spec: FractalSpec, member: FamilyMember, params: WeightParams, samples: BoundarySampleSet,
                tol: Optional[float] = None, budget: Optional[int] = None,
                sobolev: Optional[EnergyReport] = None) -> ConstantReport:
    """Besov energy of u restricted to E over the gradient energy of u on B.

    A precomputed ``sobolev`` report is reused; it does not depend on the samples.
    """
    besov = besov_energy(spec, samples, member.boundary, params.theta, params.p, params=params)
    if sobolev is None:
        sobolev = sobolev_energy(spec, member.ambient, params, tol=tol, budget=budget)
    return ConstantReport(name=f"trace[{member.name}]", lhs=besov.value, rhs=sobolev.value,
                          constant=_ratio(besov.value, sobolev.value), seed=samples.seed, status=sobolev.status,
                          details={"theta": params.theta, "alpha": params.alpha, "p": params.p})


def trace_mass_ratio(spec: FractalSpec, member: FamilyMember, params: WeightParams, samples: BoundarySampleSet,
                     tol: Optional[float] = None, budget: Optional[int] = None,
                     sobolev: Optional[EnergyReport] = None) -> ConstantReport:
    """integral of |u|^p dnu over the full N^{1,p} energy of u"""
    lhs = boundary_lp(samples, member.boundary, params.p)
    if sobolev is None:
        sobolev = sobolev_energy(spec, member.ambient, params, tol=tol, budget=budget)
    rhs = sobolev.value + (sobolev.mass_term or 0.0)
    return ConstantReport(name=f"trace_mass[{member.name}]", lhs=lhs, rhs=rhs, constant=_ratio(lhs, rhs),
                          seed=samples.seed, status=sobolev.status, details={"p": params.p})


def extension_ratios(spec: FractalSpec, member: FamilyMember, params: WeightParams, operator: ExtensionOperator,
                     besov_samples: BoundarySampleSet, tol: Optional[float] = None,
                     budget: Optional[int] = None) -> Tuple[ConstantReport, ConstantReport]:
    """(gradient energy of Su over the Besov energy of u, mass of Su over the nu-mass of u)"""
    u = member.boundary
    besov = besov_energy(spec, besov_samples, u, params.theta, params.p, params=params)
    su = operator.as_ambient(u)
    if u.lipschitz == 0:
        su.lipschitz = 0.0
    sobolev = sobolev_energy(spec, su, params, tol=tol, budget=budget)
    boundary_mass = boundary_lp(operator.samples, u, params.p)
    details = {"theta": params.theta, "alpha": params.alpha, "p": params.p}
    gradient_report = ConstantReport(name=f"extension[{member.name}]", lhs=sobolev.value, rhs=besov.value,
                                     constant=_ratio(sobolev.value, besov.value), seed=besov_samples.seed,
                                     status=sobolev.status, details=details)
    mass = sobolev.mass_term or 0.0
    mass_report = ConstantReport(name=f"extension_mass[{member.name}]", lhs=mass, rhs=boundary_mass,
                                 constant=_ratio(mass, boundary_mass), seed=operator.samples.seed,
                                 status=sobolev.status, details=details)
    return gradient_report, mass_report
