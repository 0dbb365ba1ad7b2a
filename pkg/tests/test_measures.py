import math

import numpy as np
import pytest

from core.errors import InputError
from models.schemas import Ball, BoundarySampleSet, Point2, Square, Status
from services import closed_forms, geometry, measures


def test_unit_square_at_alpha_zero_is_its_area(carpet):
    estimate = measures.mu_alpha_region(carpet, measures.grid_square(0, 0, 0), 0.0)
    assert estimate.value.lo == estimate.value.hi == 1.0
    assert estimate.status == Status.CONVERGED


def test_ball_at_alpha_zero_is_its_area(gasket):
    ball = Ball(center=Point2(x=0.5, y=0.3), radius=0.25)
    assert measures.mu_alpha_region(gasket, ball, 0.0).mid == pytest.approx(math.pi / 16, rel=1e-12)


@pytest.mark.parametrize("k, m, n", [(1, 1, 1), (2, 1, 1), (2, 4, 1)])
@pytest.mark.parametrize("alpha", [-0.05, 0.5, 1.0])
def test_quadrature_brackets_hole_closed_form(carpet, k, m, n, alpha):
    exact = closed_forms.hole_measure_carpet(k, alpha)
    estimate = measures.mu_alpha_region(carpet, measures.grid_square(k, m, n), alpha)
    assert estimate.status == Status.CONVERGED
    assert estimate.value.contains(exact, slack=1e-12 * exact)


def test_quadrature_brackets_unit_cell(carpet):
    estimate = measures.mu_alpha_region(carpet, measures.grid_square(0, 0, 0), 1.0)
    assert estimate.value.contains(1 / 114, slack=1e-12)


def test_hole_at_alpha_minus_one_is_divergent(carpet):
    estimate = measures.mu_alpha_region(carpet, measures.grid_square(1, 1, 1), -1.0)
    assert estimate.status == Status.DIVERGENT
    assert math.isinf(estimate.value.hi)


def test_grid_square_measures():
    assert measures.grid_square_measure_carpet(measures.grid_square(0, 0, 0), 1.0).mid == pytest.approx(1 / 114)
    assert measures.grid_square_measure_carpet(measures.grid_square(1, 1, 1), 0.0).mid == pytest.approx(1 / 9)


def test_grid_square_index_rejects_unaligned_squares():
    with pytest.raises(InputError):
        measures.grid_square_index(Square(center=Point2(x=0.4, y=0.4), side=1 / 3))
    with pytest.raises(InputError):
        measures.grid_square_index(Square(center=Point2(x=0.5, y=0.5), side=0.2))


@pytest.mark.slow
def test_general_square_bracket_overlaps_quadrature(carpet):
    square = Square(center=Point2(x=0.4, y=0.45), side=0.2)
    bracket = measures.general_square_bracket(square, -0.05)
    estimate = measures.mu_alpha_region(carpet, square, -0.05, tol=1e-3)
    assert bracket.lo <= estimate.value.hi
    assert estimate.value.lo <= bracket.hi


def test_general_square_bracket_is_exact_on_grid_cells():
    bracket = measures.general_square_bracket(measures.grid_square(1, 1, 1), 0.0)
    assert bracket.lo - 1e-15 <= 1 / 9 <= bracket.hi + 1e-15


def test_mc_oracle_is_exact_for_unit_square_at_alpha_zero(carpet):
    mean, stderr = measures.mu_alpha_mc_oracle(carpet, measures.grid_square(0, 0, 0), 0.0, 1000, seed=1)
    assert mean == 1.0
    assert stderr == 0.0


def test_mc_oracle_agrees_with_hole_closed_form(carpet):
    exact = closed_forms.hole_measure_carpet(1, 0.5)
    mean, stderr = measures.mu_alpha_mc_oracle(carpet, measures.grid_square(1, 1, 1), 0.5, 200_000, seed=3)
    assert abs(mean - exact) <= 4 * stderr


def test_mc_oracle_is_deterministic(gasket):
    ball = Ball(center=Point2(x=0.5, y=0.3), radius=0.3)
    assert measures.mu_alpha_mc_oracle(gasket, ball, 0.4, 5000, seed=9) == \
        measures.mu_alpha_mc_oracle(gasket, ball, 0.4, 5000, seed=9)


def test_mc_oracle_needs_samples(carpet):
    with pytest.raises(InputError):
        measures.mu_alpha_mc_oracle(carpet, measures.grid_square(0, 0, 0), 0.0, 0, seed=1)


def test_nu_ball_swallowing_the_fractal_is_one(carpet, gasket):
    assert measures.nu_ball(carpet, Point2(x=0.5, y=0.5), 2.0) == pytest.approx(1.0)
    assert measures.nu_ball(gasket, Point2(x=0.5, y=0.3), 2.0) == pytest.approx(1.0)


def test_nu_ball_is_monotone_in_radius(carpet):
    radii = [0.05, 0.1, 0.2, 0.4, 0.8]
    masses = measures.nu_ball_many(carpet, [[0.0, 0.0]] * len(radii), radii, level=5)
    assert np.all(np.diff(masses) >= 0)


def test_nu_ball_rejects_nonpositive_radius(carpet):
    with pytest.raises(InputError):
        measures.nu_ball(carpet, Point2(x=0.0, y=0.0), 0.0)


def test_boundary_sample_is_deterministic(carpet):
    a = measures.boundary_sample(carpet, 500, seed=11)
    b = measures.boundary_sample(carpet, 500, seed=11)
    np.testing.assert_array_equal(a.points, b.points)
    assert isinstance(a, BoundarySampleSet)
    assert a.masses.sum() == pytest.approx(1.0)


def test_boundary_samples_lie_on_the_fractal(carpet, gasket):
    for spec in (carpet, gasket):
        samples = measures.boundary_sample(spec, 300, seed=2)
        assert np.max(geometry.distance_many(spec, samples.points)) <= 1e-9


def test_boundary_sample_gives_each_first_level_cell_equal_mass(carpet):
    samples = measures.boundary_sample(carpet, 20_000, seed=5)
    share = np.mean(samples.digits[:, 0] == 0)
    sigma = math.sqrt((1 / 8) * (7 / 8) / samples.size)
    assert abs(share - 1 / 8) <= 4 * sigma


def test_koch_samples_carry_a_side_digit(koch):
    samples = measures.boundary_sample(koch, 50, seed=4)
    assert set(np.unique(samples.digits[:, 0])) <= {0, 1, 2}
    assert samples.address(0).kind == koch.kind


def test_koch_domain_area_at_alpha_zero(koch):
    estimate = measures.mu_alpha_region(koch, koch.ambient, 0.0, tol=1e-6, koch_level=3)
    assert estimate.status == Status.CONVERGED
    assert estimate.value.contains(2 * math.sqrt(3) / 5, slack=1e-9)
    assert estimate.band_width <= geometry.koch_fringe_area(3) + 1e-12


def test_koch_square_inside_the_base_triangle_is_its_area(koch):
    square = Square(center=Point2(x=0.5, y=0.3), side=0.2)
    estimate = measures.mu_alpha_region(koch, square, 0.0, tol=1e-3, koch_level=4)
    assert estimate.status == Status.CONVERGED
    assert estimate.value.contains(0.04, slack=1e-12)
    assert estimate.value.width <= 1e-3 * 0.04 + 1e-12


@pytest.mark.slow
def test_koch_ball_over_the_boundary_is_bracketed(koch):
    # part of the ball lies outside the snowflake domain
    ball = Ball(center=Point2(x=0.5, y=0.0), radius=0.2)
    estimate = measures.mu_alpha_region(koch, ball, 0.0, tol=1e-3, koch_level=4)
    assert estimate.status == Status.CONVERGED
    assert 0.0 < estimate.value.lo <= estimate.value.hi < math.pi * 0.2 ** 2


@pytest.mark.slow
def test_koch_negative_alpha_converges_above_the_cap_threshold(koch):
    estimate = measures.mu_alpha_region(koch, koch.ambient, -0.5, tol=1e-2, koch_level=4)
    assert estimate.status == Status.CONVERGED
    assert estimate.value.hi < math.inf
    assert estimate.value.lo > 2 * math.sqrt(3) / 5


def test_koch_domain_diverges_below_the_cap_threshold(koch):
    estimate = measures.mu_alpha_region(koch, koch.ambient, -0.9, tol=1e-2, koch_level=3)
    assert estimate.status == Status.DIVERGENT
