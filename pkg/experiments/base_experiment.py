from abc import ABC, abstractmethod
from typing import Any, Callable, Dict, List, Optional
import logging

import numpy as np

from core.errors import ConfigurationError
from core.seeding import split_seed
from models.schemas import (
    Ball, ExperimentConfig, ExperimentOutcome, FamilyMember, FractalSpec, Point2, Region, Square, Status,
)
from services import geometry
from services.cache_manager import CacheManager
from services.energies import function_family

logger = logging.getLogger(__name__)

_MISSING = object()


class BaseExperiment(ABC):
    """Base class for all experiment runners"""

    name: str = "experiment"

    def __init__(self, cache: CacheManager):
        self.cache = cache
        self.logger = logging.getLogger(f"experiments.{self.name}")

    @abstractmethod
    def run(self, config: ExperimentConfig) -> ExperimentOutcome:
        """Execute the operation described by config"""
        pass

    def spec(self, config: ExperimentConfig) -> FractalSpec:
        return geometry.fractal_spec(config.fractal)

    def option(self, config: ExperimentConfig, key: str, default: Any = _MISSING,
               cast: Optional[Callable[[Any], Any]] = None) -> Any:
        """Operation option with type coercion; missing required options are configuration errors"""
        if key not in config.options:
            if default is _MISSING:
                raise ConfigurationError(f"operation '{config.operation}' needs the option '{key}'")
            return default
        value = config.options[key]
        if cast is None:
            return value
        try:
            return cast(value)
        except (TypeError, ValueError) as e:
            raise ConfigurationError(f"option '{key}' = {value!r} is invalid: {e}") from e

    def region(self, config: ExperimentConfig, key: str = "region", default: Any = _MISSING) -> Region:
        """Square or ball from an options table {shape, center, side | radius}"""
        raw = self.option(config, key, default)
        if isinstance(raw, (Square, Ball)):
            return raw
        try:
            center = Point2(x=float(raw["center"][0]), y=float(raw["center"][1]))
            shape = raw.get("shape", "square")
            if shape == "square":
                return Square(center=center, side=float(raw["side"]))
            if shape == "ball":
                return Ball(center=center, radius=float(raw["radius"]))
        except (KeyError, TypeError, IndexError, ValueError) as e:
            raise ConfigurationError(f"malformed region {raw!r}: {e}") from e
        raise ConfigurationError(f"unknown region shape {shape!r}; use 'square' or 'ball'")

    def dyadic_radii(self, config: ExperimentConfig, first: int, last: int, prefix: str = "radius") -> List[float]:
        """2^-k for k between the configured exponents, largest radius first"""
        k_min = self.option(config, f"{prefix}_exp_min", first, int)
        k_max = self.option(config, f"{prefix}_exp_max", last, int)
        if k_max < k_min:
            raise ConfigurationError(f"{prefix}_exp_max must be at least {prefix}_exp_min")
        return [2.0 ** (-k) for k in range(k_min, k_max + 1)]

    def boundary_points(self, config: ExperimentConfig, count: int, stage: int) -> np.ndarray:
        """nu-distributed points of E for per-point diagnostics"""
        samples = self.cache.samples(config.fractal, count, split_seed(config.seed, stage))
        return samples.points

    def create_outcome(self, status: Status, summary: Dict[str, Any], table=None) -> ExperimentOutcome:
        """Create a standardized runner outcome"""
        self.logger.info(f"{self.name} finished with status {status.value}")
        return ExperimentOutcome(status=status, summary=summary, table=table)

    def family_member(self, config: ExperimentConfig, default: str = "x1") -> FamilyMember:
        """Named member of the test-function family of the configured fractal"""
        name = self.option(config, "function", default, str)
        members = {member.name: member for member in function_family(self.spec(config))}
        if name not in members:
            raise ConfigurationError(f"unknown test function {name!r}; choose from {', '.join(members)}")
        return members[name]
