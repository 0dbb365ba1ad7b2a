import pytest

from core.config import get_settings
from models.schemas import FractalKind
from services import geometry
from services.measures import boundary_sample
from services.operators import ExtensionOperator
from services.whitney import build_whitney

SMALL_LEVEL = 3


@pytest.fixture(autouse=True)
def fresh_settings(monkeypatch):
    """Every test starts from default settings; env overrides apply after cache_clear"""
    for key in ("FTL_WORKERS", "FTL_LOG_FILE", "FTL_WHITNEY_MAX_LEVEL"):
        monkeypatch.delenv(key, raising=False)
    get_settings.cache_clear()
    yield
    get_settings.cache_clear()


@pytest.fixture
def carpet():
    return geometry.fractal_spec(FractalKind.CARPET)


@pytest.fixture
def gasket():
    return geometry.fractal_spec(FractalKind.GASKET)


@pytest.fixture
def koch():
    return geometry.fractal_spec(FractalKind.KOCH)


@pytest.fixture(scope="session")
def carpet_cover():
    return build_whitney(geometry.fractal_spec(FractalKind.CARPET), max_level=SMALL_LEVEL)


@pytest.fixture(scope="session")
def carpet_samples():
    return boundary_sample(geometry.fractal_spec(FractalKind.CARPET), 50_000, seed=7)


@pytest.fixture(scope="session")
def carpet_extension(carpet_cover, carpet_samples):
    return ExtensionOperator(carpet_cover, carpet_samples)


@pytest.fixture
def output_dir(tmp_path):
    path = tmp_path / "results"
    path.mkdir()
    return path

