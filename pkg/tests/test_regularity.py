import math

import numpy as np
import pytest

from core.errors import InputError
from models.schemas import Point2, Square, Status
from services import regularity

CARPET_DIM = math.log(8) / math.log(3)


@pytest.mark.parametrize("theta, trace_ok, extension_ok", [
    (0.4, True, False),
    (0.98, False, True),
    (0.6, False, False),
])
def test_admissibility_on_the_carpet(carpet, theta, trace_ok, extension_ok):
    params = regularity.weight_params(carpet, alpha=-0.05, p=2.0, theta=theta)
    assert regularity.trace_admissible(params) is trace_ok
    assert regularity.extension_admissible(params) is extension_ok


@pytest.mark.parametrize("alpha", [0.1, -0.2])
def test_positive_alpha_or_negative_codimension_is_never_admissible(carpet, alpha):
    for theta in (0.2, 0.5, 0.98):
        params = regularity.weight_params(carpet, alpha=alpha, theta=theta)
        assert not regularity.trace_admissible(params)
        assert not regularity.extension_admissible(params)


def test_codimension_uses_the_fractal_dimension(gasket):
    params = regularity.weight_params(gasket, alpha=-0.3)
    assert params.gamma == pytest.approx(-0.3 + 2 - math.log(3) / math.log(2))


def test_ap_window(carpet):
    lo, hi = regularity.ap_window(carpet, 2.0)
    assert lo == pytest.approx(CARPET_DIM - 2)
    assert hi == pytest.approx(2 - CARPET_DIM)


def test_doubling_at_alpha_zero_is_nine(carpet):
    report = regularity.doubling_survey(carpet, 0.0, n_squares=10, seed=1)
    assert report.max_ratio == pytest.approx(9.0)
    assert report.min_ratio == pytest.approx(9.0)
    assert report.stable
    assert report.status == Status.CONVERGED
    assert len(report.records) == 20


def test_surveys_are_deterministic(gasket):
    a = regularity.doubling_survey(gasket, 0.0, n_squares=5, seed=4)
    b = regularity.doubling_survey(gasket, 0.0, n_squares=5, seed=4)
    assert [r.center_x for r in a.records] == [r.center_x for r in b.records]


def test_sampled_squares_meet_the_ambient_ball(carpet):
    for i in range(50):
        square = regularity.sample_square(carpet, seed=2, stage=1, index=i)
        gap = np.maximum(np.abs(square.center.as_array() - carpet.ambient.center.as_array()) - square.side / 2, 0)
        assert np.hypot(*gap) <= carpet.ambient.radius


def test_ap_product_at_alpha_zero_is_one(carpet):
    report = regularity.ap_survey(carpet, 0.0, 2.0, n_squares=10, seed=1)
    assert report.max_ratio == pytest.approx(1.0)
    assert report.in_window


def test_ap_product_of_unit_cell_is_at_least_one(carpet):
    product = regularity.ap_product(carpet, Square(center=Point2(x=0.5, y=0.5), side=1.0), -0.05, 2.0)
    assert product.lo >= 1.0 - 1e-12


def test_ap_product_needs_p_above_one(carpet):
    with pytest.raises(InputError):
        regularity.ap_product(carpet, Square(center=Point2(x=0.5, y=0.5), side=1.0), 0.0, 1.0)


def test_codimension_profile_at_alpha_zero_is_bounded_by_pi(carpet):
    profile = regularity.codimension_profile(carpet, 0.0, Point2(x=0.0, y=0.0), [0.5, 0.25])
    for value in profile:
        assert value.hi <= math.pi + 1e-12
        assert value.lo >= math.pi - 1e-12


def test_codimension_profile_rejects_points_off_the_fractal(carpet):
    with pytest.raises(InputError):
        regularity.codimension_profile(carpet, 0.0, Point2(x=0.5, y=0.5), [0.5])


def test_codimension_profile_rejects_large_radii(carpet):
    with pytest.raises(InputError):
        regularity.codimension_profile(carpet, 0.0, Point2(x=0.0, y=0.0), [3.0])


def test_fit_slope_recovers_power_law():
    rhos = [2.0 ** -k for k in range(2, 9)]
    masses = [rho ** 0.7 for rho in rhos]
    assert regularity.fit_slope(rhos, masses) == pytest.approx(0.7)


def test_fit_slope_without_enough_mass_is_nan():
    assert math.isnan(regularity.fit_slope([0.1, 0.2], [0.0, 1.0]))


def test_shell_profile_rejects_rho_above_radius():
    with pytest.raises(InputError):
        regularity.shell_profile(Point2(x=0.0, y=0.0), 0.1, [0.05, 0.2])


@pytest.mark.slow
def test_doubling_inside_the_window_is_stable(carpet):
    report = regularity.doubling_survey(carpet, -0.05, n_squares=10, seed=1, tol=1e-3)
    assert report.status == Status.CONVERGED
    assert report.stable
    assert report.divergent_count == 0
    assert 1.0 < report.min_ratio <= report.max_ratio < 100.0


def test_doubling_far_below_the_window_diverges(carpet):
    ratio = regularity.doubling_ratio(carpet, Square(center=Point2(x=0.5, y=0.5), side=1.0), -1.2)
    assert ratio.status == Status.DIVERGENT
    report = regularity.doubling_survey(carpet, -1.2, n_squares=10, seed=1, tol=1e-2)
    assert report.status == Status.DIVERGENT
    assert report.divergent_count > 0


@pytest.mark.slow
def test_ap_inside_the_window_is_stable(carpet):
    report = regularity.ap_survey(carpet, -0.05, 2.0, n_squares=10, seed=1, tol=1e-3)
    assert report.in_window
    assert report.status == Status.CONVERGED
    assert report.stable
    assert report.min_ratio >= 1.0 - 1e-9


@pytest.mark.parametrize("fractal", ["carpet", "gasket"])
def test_codimension_profile_spread_is_bounded(fractal, request):
    spec = request.getfixturevalue(fractal)
    radii = [2.0 ** -k for k in range(1, 6)]
    profile = regularity.codimension_profile(spec, -0.05, Point2(x=0.0, y=0.0), radii, tol=1e-2)
    mids = [value.mid for value in profile]
    assert all(value.status == Status.CONVERGED for value in profile)
    assert min(mids) > 0
    assert max(mids) / min(mids) <= 100.0


@pytest.mark.slow
def test_koch_shell_exponent():
    exponent = 2 - math.log(4) / math.log(3)
    profile = regularity.shell_profile(Point2(x=0.0, y=0.0), 0.5, [2.0 ** -k for k in range(3, 9)], n_level=8)
    assert profile.status != Status.DIVERGENT
    assert profile.fitted_slope == pytest.approx(exponent, abs=0.08)
