import numpy as np
import pytest

from core.config import get_settings
from core.errors import EmptyAverageError, InputError, PreconditionError
from experiments.operator_experiments import indicator
from models.schemas import AmbientFunction, BoundaryFunction, Point2, Square, Status
from services import operators
from services.measures import boundary_sample
from services.whitney import build_whitney, scatter_points


def coordinate(axis: int, name: str) -> BoundaryFunction:
    return BoundaryFunction(name=name, rule=lambda pts: np.asarray(pts, dtype=float).reshape(-1, 2)[:, axis],
                            lipschitz=1.0)


def constant(value: float = 1.0) -> BoundaryFunction:
    return BoundaryFunction(name="one", rule=lambda pts: np.full(len(np.asarray(pts).reshape(-1, 2)), value),
                            lipschitz=0.0)


def ambient_constant(value: float = 1.0) -> AmbientFunction:
    return AmbientFunction(name="one", rule=lambda pts: np.full(len(pts), value), lipschitz=0.0)


def ambient_x1() -> AmbientFunction:
    return AmbientFunction(name="x1", rule=lambda pts: pts[:, 0], lipschitz=1.0)


@pytest.fixture(scope="module")
def spots(carpet_cover):
    return scatter_points(carpet_cover, 300, seed=2)


def test_extension_reproduces_constants(carpet_extension, spots):
    values = carpet_extension(constant(2.5), spots)
    np.testing.assert_allclose(values, 2.5, atol=1e-12)


def test_extension_is_linear(carpet_extension, spots):
    u, v = coordinate(0, "x1"), coordinate(1, "x2")
    w = BoundaryFunction(name="w", rule=lambda pts: 2 * pts[:, 0] + 3 * pts[:, 1])
    combined = carpet_extension(w, spots)
    separate = 2 * carpet_extension(u, spots) + 3 * carpet_extension(v, spots)
    np.testing.assert_allclose(combined, separate, atol=1e-10)


def test_extension_inside_the_shell_takes_the_nearest_sample(carpet_extension):
    value = operators.extend(carpet_extension, coordinate(0, "x1"), Point2(x=0.0, y=0.0))
    assert abs(value) <= 0.05


def test_gradient_of_extended_constant_vanishes(carpet_extension):
    grad = operators.extend_gradient(carpet_extension, constant(), Point2(x=0.5, y=-0.5), 0.01)
    np.testing.assert_allclose(grad, 0.0, atol=1e-9)


def test_gradient_step_must_respect_the_distance(carpet_extension):
    with pytest.raises(PreconditionError):
        operators.extend_gradient(carpet_extension, constant(), Point2(x=0.5, y=-0.5), 0.2)
    with pytest.raises(PreconditionError):
        operators.extend_gradient(carpet_extension, constant(), Point2(x=0.5, y=-0.5), 0.0)


def test_richardson_gap_is_finite_away_from_the_fractal(carpet_extension):
    gap = operators.richardson_gap(carpet_extension, coordinate(0, "x1"), Point2(x=0.5, y=-0.5), 0.01)
    assert 0.0 <= gap < float("inf")


def test_sparse_samples_leave_cells_without_averages(carpet, carpet_cover, spots):
    operator = operators.ExtensionOperator(carpet_cover, boundary_sample(carpet, 3, seed=1))
    with pytest.raises(EmptyAverageError):
        operator(constant(), spots)


def test_samples_must_match_the_cover(gasket, carpet_cover):
    with pytest.raises(InputError):
        operators.ExtensionOperator(carpet_cover, boundary_sample(gasket, 10, seed=1))


def test_ball_average_of_constant_is_exact(carpet):
    value = operators.ball_average(carpet, ambient_constant(4.0), Point2(x=0.0, y=0.0), 0.5, -0.05)
    assert value.lo == value.hi == 4.0


def test_ball_average_outside_support_is_zero(carpet):
    far = Square(center=Point2(x=1.4, y=1.4), side=0.1)
    bump = AmbientFunction(name="bump", rule=lambda pts: np.ones(len(pts)), support=far)
    value = operators.ball_average(carpet, bump, Point2(x=0.0, y=0.0), 0.25, 0.0)
    assert value.mid == 0.0


def test_trace_of_constant(carpet):
    result = operators.trace(carpet, ambient_constant(2.0), Point2(x=0.0, y=0.0), [0.5, 0.25, 0.125], -0.05)
    assert result.limit == 2.0
    assert result.stabilized
    assert result.status == Status.CONVERGED


@pytest.mark.slow
def test_trace_of_coordinate(carpet):
    x = Point2(x=1 / 3, y=1 / 3)
    result = operators.trace(carpet, ambient_x1(), x, [2.0 ** -k for k in range(1, 5)], 0.0, tol=1e-2)
    assert result.limit == pytest.approx(1 / 3, abs=1e-2)


def test_trace_schedule_must_decrease(carpet):
    with pytest.raises(InputError):
        operators.trace(carpet, ambient_constant(), Point2(x=0.0, y=0.0), [0.25, 0.5], 0.0)
    with pytest.raises(InputError):
        operators.trace(carpet, ambient_constant(), Point2(x=0.0, y=0.0), [], 0.0)


def test_trace_needs_a_point_of_the_fractal(carpet):
    with pytest.raises(InputError):
        operators.trace(carpet, ambient_constant(), Point2(x=0.5, y=0.5), [0.5, 0.25], 0.0)


def test_maximal_function_of_one_is_one(carpet):
    value = operators.fractional_maximal(carpet, ambient_constant(), 0.05, Point2(x=0.0, y=0.0), -0.05)
    assert value.lo == pytest.approx(1.0)
    assert value.hi == pytest.approx(1.0)


def test_maximal_radii_schedule():
    radii = operators.maximal_radii(4)
    assert radii == [1.0, 0.5, 0.25, 0.125, 0.0625]


def test_maximal_rejects_bad_radii(carpet):
    with pytest.raises(InputError):
        operators.fractional_maximal(carpet, ambient_constant(), 0.05, Point2(x=0.0, y=0.0), 0.0, radii=[2.0])


def test_weak_type_table_of_constant(carpet):
    points = boundary_sample(carpet, 5, seed=3).points
    table, report = operators.weak_type_table(carpet, ambient_constant(), 0.05, 0.0, points, [0.5, 2.0],
                                              radii=[1.0, 0.5], tol=1e-2)
    assert list(table.columns) == ["t", "level_set_mass", "integral", "constant"]
    assert table["level_set_mass"].tolist() == [1.0, 0.0]
    assert report.constant > 0


def test_weak_type_rejects_nonpositive_thresholds(carpet):
    with pytest.raises(InputError):
        operators.weak_type_table(carpet, ambient_constant(), 0.05, 0.0, [[0.0, 0.0]], [0.0])


def test_strong_type_check_of_constant_is_zero(carpet):
    points = boundary_sample(carpet, 2, seed=3).points
    report = operators.strong_type_check(carpet, ambient_constant(), 0.05, 2.0, 1.0, 0.0, points,
                                         radii=[1.0, 0.5], tol=1e-2)
    assert report.lhs == 0.0
    assert report.constant == 0.0
    assert report.name == "strong_type[one]"


def test_strong_type_check_needs_q_below_p(carpet):
    with pytest.raises(InputError):
        operators.strong_type_check(carpet, ambient_constant(), 0.05, 2.0, 2.0, 0.0, [[0.0, 0.0]])


def test_onto_ball_projects_outer_points(carpet_extension):
    ball = carpet_extension.cover.ambient
    c = ball.center.as_array()
    inner = c + np.array([[0.1, -0.2]])
    outer = c + np.array([[3.0, 4.0]])
    np.testing.assert_allclose(carpet_extension.onto_ball(inner), inner)
    projected = carpet_extension.onto_ball(outer)
    assert np.hypot(*(projected[0] - c)) == pytest.approx(ball.radius)
    np.testing.assert_allclose(projected[0] - c, np.array([0.6, 0.8]) * ball.radius)


def test_ambient_extension_accepts_points_beyond_the_cover(carpet_extension):
    su = carpet_extension.as_ambient(constant(1.5))
    far = np.array([[-1.5, -1.5], [2.5, 0.5]])
    np.testing.assert_allclose(su(far), 1.5, atol=1e-12)


def test_default_averages_use_the_doubled_ball(carpet_extension):
    assert get_settings().WHITNEY_AVERAGE_DILATION == 2.0
    assert set(np.unique(carpet_extension.dilations)) <= {2.0, 3.0}


def test_cells_fall_back_to_the_wider_ball(carpet, carpet_cover, carpet_samples, spots, monkeypatch):
    monkeypatch.setenv("FTL_WHITNEY_AVERAGE_DILATION", "1.0")
    get_settings.cache_clear()
    operator = operators.ExtensionOperator(carpet_cover, carpet_samples)
    assert set(np.unique(operator.dilations)) <= {1.0, get_settings().WHITNEY_FALLBACK_DILATION}
    np.testing.assert_allclose(operator(constant(3.0), spots), 3.0, atol=1e-12)


def test_averages_are_cached_by_name(carpet_extension):
    first = carpet_extension.averages(coordinate(0, "x1"))
    again = carpet_extension.averages(coordinate(0, "x1"))
    assert again is first
    other = carpet_extension.averages(coordinate(1, "x1"))
    assert other is not first
    assert not np.allclose(np.nan_to_num(other), np.nan_to_num(first))


def test_averages_cache_is_bounded(carpet_cover, carpet_samples, monkeypatch):
    monkeypatch.setenv("FTL_EXTENSION_CACHE_SIZE", "2")
    get_settings.cache_clear()
    operator = operators.ExtensionOperator(carpet_cover, carpet_samples)
    for k in range(5):
        operator.averages(BoundaryFunction(name=f"c{k}", rule=lambda pts, k=k: np.full(len(pts), float(k))))
    assert list(operator._averages) == ["c3", "c4"]
    assert len(operator._averages) == 2


def test_gradient_field_matches_finite_differences(carpet_extension, spots):
    u = coordinate(0, "x1")
    exact = carpet_extension.gradient_field(u, spots)
    h = np.full(len(spots), 1e-6)
    numeric = carpet_extension._central(u, spots, h)
    close = np.all(np.abs(exact - numeric) <= 1e-4 * (1 + np.abs(numeric)), axis=1)
    # hat kinks sit on the ball boundaries
    assert close.mean() >= 0.95


def test_gradient_of_constant_extension_vanishes(carpet_extension, spots):
    np.testing.assert_allclose(carpet_extension.gradient_field(constant(2.0), spots), 0.0, atol=1e-9)


def test_cell_bounds_enclose_the_extension(carpet_extension):
    u = coordinate(0, "x1")
    rng = np.random.default_rng(11)
    ball = carpet_extension.cover.ambient
    centers = ball.center.as_array() + rng.uniform(-1.0, 1.0, (60, 2)) * ball.radius / 2
    radii = rng.uniform(0.005, 0.1, 60)
    lo, hi = carpet_extension.cell_bounds(u)(centers, radii, np.zeros(60), np.zeros(60))
    assert np.all(lo <= hi)
    su = carpet_extension.as_ambient(u)
    for k in range(60):
        angle = rng.uniform(0, 2 * np.pi, 40)
        radius = radii[k] * np.sqrt(rng.random(40))
        pts = centers[k] + np.column_stack([radius * np.cos(angle), radius * np.sin(angle)])
        values = su(pts)
        assert np.all(values >= lo[k] - 1e-12)
        assert np.all(values <= hi[k] + 1e-12)


def test_lipschitz_of_constant_extension_is_zero(carpet_extension):
    largest, typical = carpet_extension.lipschitz(constant(), spacing=2.0 ** -4)
    assert largest == pytest.approx(0.0, abs=1e-9)
    assert typical <= largest


@pytest.mark.slow
def test_extension_of_coordinate_stays_lipschitz(carpet):
    cover = build_whitney(carpet, max_level=4)
    operator = operators.ExtensionOperator(cover, boundary_sample(carpet, 100_000, seed=21))
    largest, typical = operator.lipschitz(coordinate(0, "x1"))
    assert 0.5 <= typical <= largest <= 50.0


@pytest.mark.slow
def test_trace_of_the_extension_recovers_the_boundary_values(carpet, carpet_extension):
    su = carpet_extension.as_ambient(coordinate(0, "x1"))
    x = Point2(x=1 / 3, y=0.0)
    result = operators.trace(carpet, su, x, [2.0 ** -k for k in range(6, 11)], 0.0, tol=1e-2)
    assert result.status == Status.CONVERGED
    assert result.limit == pytest.approx(1 / 3, abs=0.02)


def test_weak_type_table_of_indicators(carpet):
    points = boundary_sample(carpet, 8, seed=3).points
    h = indicator(Square(center=Point2.of(points[0]), side=0.1), "indicator_0")
    thresholds = [0.001, 0.01, 0.1, 0.5, 2.0]
    table, report = operators.weak_type_table(carpet, h, 0.05, 0.0, points, thresholds,
                                              radii=[1.0, 0.5, 0.25, 0.125], tol=1e-2)
    masses = table["level_set_mass"].tolist()
    assert masses[0] >= 1 / 8
    assert masses == sorted(masses, reverse=True)
    assert masses[-1] == 0.0
    assert table["integral"].iloc[0] == pytest.approx(0.01, rel=1e-2)
    assert 0.0 < report.constant < float("inf")
    assert report.status != Status.DIVERGENT
