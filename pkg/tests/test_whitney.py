import math

import numpy as np
import pytest

from core.config import get_settings
from core.errors import InputError, ResolutionError, ResourceLimitError
from models.schemas import Ball, Point2
from services import whitney

SANDWICH = 2 + 1 / math.sqrt(2)


def test_carpet_cover_geometry(carpet_cover):
    assert carpet_cover.root_side == 4.0
    assert carpet_cover.origin == (-1.5, -1.5)
    assert carpet_cover.resolution == 2.0 ** -3
    assert int(carpet_cover.levels.min()) >= -2
    assert int(carpet_cover.levels.max()) <= carpet_cover.max_level + 1


def test_cells_satisfy_the_distance_sandwich(carpet_cover):
    assert np.all(carpet_cover.dists >= carpet_cover.radii)
    assert np.all(carpet_cover.dists <= SANDWICH * carpet_cover.radii + 1e-12)


def test_generating_squares_are_disjoint(carpet_cover):
    assert whitney.squares_disjoint(carpet_cover)


def test_partition_of_unity_sums_to_one(carpet_cover):
    points = whitney.scatter_points(carpet_cover, 2000, seed=3, max_dist=carpet_cover.ambient.radius / 2)
    matrix, valid = whitney.partition_matrix(carpet_cover, points)
    assert valid.all()
    np.testing.assert_allclose(np.asarray(matrix.sum(axis=1)).ravel(), 1.0, atol=1e-9)
    assert matrix.data.min() > 0


def test_point_below_the_carpet(carpet_cover):
    x = np.array([0.45, -0.3])
    inside = np.all(np.abs(carpet_cover.centers - x) < carpet_cover.radii[:, None] / 2, axis=1)
    assert inside.sum() == 1
    assert int(carpet_cover.levels[inside][0]) in {1, 2, 3}

    weights = whitney.partition_eval(carpet_cover, Point2(x=0.45, y=-0.3))
    assert weights.total == pytest.approx(1.0, abs=1e-9)
    assert all(w > 0 for w in weights.weights)


def test_overlap_grows_with_dilation(carpet_cover):
    points = whitney.scatter_points(carpet_cover, 500, seed=5)
    counts = [whitney.overlap_counts(carpet_cover, points, t) for t in (1.0, 2.0, 3.0)]
    assert np.all(counts[0] >= 1)
    assert np.all(counts[0] <= counts[1])
    assert np.all(counts[1] <= counts[2])


def test_overlap_statistic_is_deterministic(carpet_cover):
    assert whitney.overlap_stat(carpet_cover, 2.0, 300, seed=8) == whitney.overlap_stat(carpet_cover, 2.0, 300, seed=8)


def test_overlap_rejects_shrinking_dilation(carpet_cover):
    with pytest.raises(InputError):
        whitney.overlap_counts(carpet_cover, [[0.5, -0.5]], 0.5)


def test_points_inside_the_resolution_shell_are_rejected(carpet_cover):
    with pytest.raises(ResolutionError):
        whitney.partition_eval(carpet_cover, Point2(x=0.0, y=0.0))
    _, valid = whitney.partition_matrix(carpet_cover, [[0.0, 0.0], [0.5, -0.5]], strict=False)
    assert valid.tolist() == [False, True]


def test_cover_budget_is_enforced(carpet, monkeypatch):
    monkeypatch.setenv("FTL_WHITNEY_MAX_CELLS", "10")
    get_settings.cache_clear()
    with pytest.raises(ResourceLimitError):
        whitney.build_whitney(carpet, max_level=3)


def test_ambient_ball_must_hold_the_fractal_in_its_half(carpet):
    with pytest.raises(InputError):
        whitney.build_whitney(carpet, ball=Ball(center=Point2(x=0.5, y=0.5), radius=1.0), max_level=2)


def test_gasket_cover_is_disjoint(gasket):
    cover = whitney.build_whitney(gasket, max_level=3)
    assert whitney.squares_disjoint(cover)
    assert np.all(cover.dists >= cover.radii)


def test_cover_frame_columns(carpet_cover):
    frame = whitney.cover_frame(carpet_cover)
    assert list(frame.columns) == ["i", "j", "x", "y", "r"]
    assert len(frame) == carpet_cover.size


def test_cover_defaults():
    settings = get_settings()
    assert settings.WHITNEY_MAX_LEVEL == 14
    assert settings.WHITNEY_AVERAGE_DILATION == 2.0
    assert settings.WHITNEY_FALLBACK_DILATION == 3.0


def test_default_level_is_clamped_to_the_cell_budget(carpet, monkeypatch):
    monkeypatch.setenv("FTL_WHITNEY_MAX_CELLS", "20000")
    get_settings.cache_clear()
    expected = whitney._fitting_level(carpet, 14, 20000)
    assert expected < 14
    cover = whitney.build_whitney(carpet)
    assert cover.max_level == expected
    assert cover.size <= 20000
