import math

import numpy as np
import pytest

from core.errors import InputError
from models.schemas import Ball, BoundaryFunction, BoundarySampleSet, FractalKind, Point2, Square, Status
from services import energies
from services.geometry import distance_many, fractal_spec
from services.measures import boundary_sample
from services.regularity import weight_params

UNIT_SQUARE = Square(center=Point2(x=0.5, y=0.5), side=1.0)


@pytest.fixture(scope="module")
def small_samples():
    return boundary_sample(fractal_spec(FractalKind.CARPET), 300, seed=13)


@pytest.fixture
def family(carpet):
    return {member.name: member for member in energies.function_family(carpet)}


def test_family_members(family):
    assert list(family) == ["x1", "hole_bump", "dist_power", "two_bumps", "constant"]
    pts = np.array([[0.1, 0.2], [0.9, 0.4]])
    for member in family.values():
        np.testing.assert_allclose(member.ambient(pts), member.boundary.rule(pts))


def test_besov_of_constant_is_zero(carpet, small_samples, family):
    report = energies.besov_energy(carpet, small_samples, family["constant"].boundary, 0.4, 2.0, level=3)
    assert report.value == 0.0
    assert report.n_samples == 300


def test_besov_is_homogeneous(carpet, small_samples, family):
    u = family["x1"].boundary
    base = energies.besov_energy(carpet, small_samples, u, 0.4, 2.0, level=3).value
    doubled = energies.besov_energy(carpet, small_samples, u.scaled(2.0), 0.4, 2.0, level=3).value
    assert base > 0
    assert doubled == pytest.approx(4.0 * base, rel=1e-12)


def test_besov_skips_coincident_pairs(carpet, small_samples, family):
    extra = 5
    points = np.vstack([small_samples.points, small_samples.points[:extra]])
    digits = np.vstack([small_samples.digits, small_samples.digits[:extra]])
    n = len(points)
    doubled = BoundarySampleSet(kind=small_samples.kind, points=points, digits=digits, masses=np.full(n, 1.0 / n),
                                seed=small_samples.seed, depth=small_samples.depth)
    report = energies.besov_energy(carpet, doubled, family["x1"].boundary, 0.4, 2.0, level=3)
    assert report.skipped == 2 * extra
    assert math.isfinite(report.value)


def test_besov_needs_two_samples(carpet, family):
    with pytest.raises(InputError):
        energies.besov_energy(carpet, boundary_sample(carpet, 1, seed=1), family["x1"].boundary, 0.4, 2.0)


def test_besov_rejects_theta_outside_unit_interval(carpet, small_samples, family):
    with pytest.raises(InputError):
        energies.besov_energy(carpet, small_samples, family["x1"].boundary, 1.0, 2.0)


def test_dyadic_besov_of_constant_is_zero(carpet, small_samples, family):
    report = energies.besov_energy_dyadic(carpet, small_samples, family["constant"].boundary, 0.4, 2.0, n_max=8)
    assert report.value == 0.0


def test_dyadic_besov_is_homogeneous(carpet, small_samples, family):
    u = family["two_bumps"].boundary
    base = energies.besov_energy_dyadic(carpet, small_samples, u, 0.4, 2.0, n_max=6).value
    tripled = energies.besov_energy_dyadic(carpet, small_samples, u.scaled(-3.0), 0.4, 2.0, n_max=6).value
    assert tripled == pytest.approx(9.0 * base, rel=1e-12)


def test_dyadic_besov_needs_a_scale(carpet, small_samples, family):
    with pytest.raises(InputError):
        energies.besov_energy_dyadic(carpet, small_samples, family["x1"].boundary, 0.4, 2.0, n_max=0)


def test_boundary_lp_of_constant(small_samples):
    one = BoundaryFunction(rule=lambda pts: np.ones(len(pts)))
    assert energies.boundary_lp(small_samples, one, 2.0) == pytest.approx(1.0)


def test_sobolev_energy_of_coordinate_on_unit_square(carpet, family):
    params = weight_params(carpet, alpha=0.0)
    report = energies.sobolev_energy(carpet, family["x1"].ambient, params, tol=1e-2, region=UNIT_SQUARE)
    assert report.value == pytest.approx(1.0, abs=1e-9)
    assert report.mass_term == pytest.approx(1 / 3, rel=2e-2)


def test_sobolev_energy_of_constant(carpet, family):
    params = weight_params(carpet, alpha=0.0)
    report = energies.sobolev_energy(carpet, family["constant"].ambient, params, tol=1e-2, region=UNIT_SQUARE)
    assert report.value == 0.0
    assert report.mass_term == pytest.approx(1.0)
    assert report.status == Status.CONVERGED


def test_lipschitz_estimate_of_coordinate(family):
    sampler = energies.ball_sampler(Ball(center=Point2(x=0.5, y=0.5), radius=1.0))
    estimate = energies.lipschitz_estimate(family["x1"].ambient, sampler, 2000, seed=1)
    assert 0.999 <= estimate <= 1.0 + 1e-9


def test_lipschitz_estimate_of_constant(family):
    sampler = energies.ball_sampler(Ball(center=Point2(x=0.5, y=0.5), radius=1.0))
    assert energies.lipschitz_estimate(family["constant"].ambient, sampler, 500, seed=1) == 0.0


def test_sampler_keeps_away_from_the_fractal(carpet):
    sampler = energies.ball_sampler(carpet.ambient, carpet, min_dist=0.05)
    pts = sampler(np.random.default_rng(0), 200)
    assert len(pts) == 200
    assert np.all(distance_many(carpet, pts) > 0.05)


def test_trace_ratio_of_constant_is_zero(carpet, small_samples, family):
    params = weight_params(carpet, alpha=0.0, theta=0.4)
    report = energies.trace_ratio(carpet, family["constant"], params, small_samples, tol=1e-2)
    assert report.constant == 0.0
    assert report.name == "trace[constant]"


def test_trace_mass_ratio_of_constant(carpet, small_samples, family):
    params = weight_params(carpet, alpha=0.0)
    report = energies.trace_mass_ratio(carpet, family["constant"], params, small_samples, tol=1e-2)
    area = math.pi * carpet.ambient.radius ** 2
    assert report.lhs == pytest.approx(1.0)
    assert report.rhs == pytest.approx(area, rel=3e-2)
    assert report.constant == pytest.approx(1 / area, rel=3e-2)


def test_extension_ratios_of_constant(carpet, carpet_extension, small_samples, family):
    params = weight_params(carpet, alpha=0.0, theta=0.8)
    gradient, mass = energies.extension_ratios(carpet, family["constant"], params, carpet_extension, small_samples,
                                               tol=1e-2)
    assert gradient.name == "extension[constant]"
    assert gradient.constant == 0.0
    area = math.pi * carpet.ambient.radius ** 2
    assert mass.name == "extension_mass[constant]"
    assert mass.lhs == pytest.approx(area, rel=3e-2)
    assert mass.rhs == pytest.approx(float(np.sum(carpet_extension.samples.masses)))


def test_besov_accepts_p_one(carpet, small_samples, family):
    report = energies.besov_energy(carpet, small_samples, family["x1"].boundary, 0.4, 1.0, level=3)
    assert 0.0 < report.value < float("inf")
    assert report.params is None


def test_besov_records_the_given_params(carpet, small_samples, family):
    params = weight_params(carpet, alpha=-0.05, p=2.0, theta=0.3)
    report = energies.besov_energy(carpet, small_samples, family["x1"].boundary, 0.3, 2.0, level=3, params=params)
    assert report.params == params
    dyadic = energies.besov_energy_dyadic(carpet, small_samples, family["x1"].boundary, 0.3, 2.0, n_max=5,
                                          params=params)
    assert dyadic.params == params


def test_dyadic_besov_rejects_p_below_one(carpet, small_samples, family):
    with pytest.raises(InputError):
        energies.besov_energy_dyadic(carpet, small_samples, family["x1"].boundary, 0.4, 0.5, n_max=4)


@pytest.mark.slow
def test_besov_energy_of_coordinate_is_seed_stable(carpet, family):
    values = [energies.besov_energy(carpet, boundary_sample(carpet, 2000, seed=seed), family["x1"].boundary,
                                    0.4, 2.0).value for seed in (1, 2, 3)]
    assert all(0.0 < v < float("inf") for v in values)
    assert max(values) / min(values) <= 1.15


def test_gaussian_curvature_bounds_dominate_the_hessian(family):
    member = family["hole_bump"].ambient
    rng = np.random.default_rng(9)
    centers = rng.uniform(0.0, 1.0, (50, 2))
    radii = np.full(50, 0.05)
    hess, third = member.curvature(centers, radii)
    assert np.all(np.isfinite(hess)) and np.all(third >= 0)
    h = 1e-4
    for c, bound in zip(centers, hess):
        # second difference along x at the disc center
        pts = np.array([c + [h, 0.0], c, c - [h, 0.0]])
        values = member(pts)
        assert abs(values[0] - 2 * values[1] + values[2]) / h ** 2 <= bound * (1 + 1e-3) + 1e-6


def test_distance_power_curvature_blows_up_at_its_anchor(carpet, family):
    member = family["dist_power"].ambient
    far = np.array([[5.0, 5.0]])
    hess, third = member.curvature(far, np.array([0.1]))
    assert np.isfinite(hess[0]) and np.isfinite(third[0])
    # a disc wide enough to hold every point of B holds the anchor too
    hess, third = member.curvature(carpet.ambient.center.as_array()[None, :], np.array([carpet.ambient.radius]))
    assert np.isinf(hess[0]) and np.isinf(third[0])


def test_flat_members_have_no_curvature(family):
    centers = np.array([[0.2, 0.3], [0.7, 0.1]])
    for name in ("x1", "constant"):
        hess, third = family[name].ambient.curvature(centers, np.full(2, 0.1))
        np.testing.assert_array_equal(hess, 0.0)
        np.testing.assert_array_equal(third, 0.0)


@pytest.mark.slow
@pytest.mark.parametrize("name", ["hole_bump", "two_bumps"])
def test_smooth_members_converge_at_fine_tolerance(carpet, family, name):
    params = weight_params(carpet, alpha=-0.05, p=2.0)
    report = energies.sobolev_energy(carpet, family[name].ambient, params, tol=1e-3)
    assert report.status == Status.CONVERGED
    assert 0.0 < report.value < float("inf")
