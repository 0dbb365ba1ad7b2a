from functools import lru_cache
from typing import Optional

from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    # Project
    PROJECT_NAME: str = "fractal-trace-lab"

    # Worker pool (FTL_WORKERS)
    WORKERS: int = 1

    # Distance oracles
    DESCENT_CAP: int = 60
    KOCH_LEVEL: int = 6
    KOCH_MAX_SEGMENTS: int = 3 * 4 ** 10

    # Quadrature
    QUAD_TOL: float = 1e-4
    QUAD_BUDGET: int = 10_000_000
    DIVERGENCE_FACTOR: float = 1e6
    DIVERGENCE_SHARE: float = 0.5
    MIN_CELL_SIDE: float = 1e-14
    QUAD_CHUNK: int = 65_536
    QUAD_MEMORY_MB: int = 2048

    # Boundary measure
    NU_BALL_LEVEL: int = 8
    NU_HAT_FLOOR: int = 8
    SAMPLE_EXTRA_DEPTH: int = 10

    # Energies
    BESOV_TILE: int = 1024

    # Whitney cover
    WHITNEY_MAX_LEVEL: int = 14
    WHITNEY_AVERAGE_DILATION: float = 2.0
    WHITNEY_FALLBACK_DILATION: float = 3.0
    WHITNEY_MAX_CELLS: int = 4_000_000

    # Operators
    EXTENSION_CACHE_SIZE: int = 32
    LIPSCHITZ_SPACING: float = 2.0 ** -7
    TRACE_TOL: float = 1e-3
    MAXIMAL_LEVELS: int = 12

    # Surveys
    STABILITY_TOL: float = 0.10
    SQUARE_SIDE_MIN: float = 3.0 ** -7
    SQUARE_SIDE_MAX: float = 9.0

    # Logging Configuration
    LOG_LEVEL: str = "INFO"
    LOG_FORMAT: str = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
    LOG_FILE: Optional[str] = None

    model_config = SettingsConfigDict(env_file=".env", env_prefix="FTL_", case_sensitive=True, extra="ignore")


@lru_cache
def get_settings() -> Settings:
    return Settings()
