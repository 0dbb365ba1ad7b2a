from typing import Any, Dict, List, Optional, Tuple, Type
import itertools
import logging
import time
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

import pandas as pd
from pydantic import ValidationError

from core.errors import ConfigurationError, FractalLabError
from experiments.base_experiment import BaseExperiment
from experiments.energy_experiments import (
    BesovExperiment, ExtensionInequalityExperiment, SobolevExperiment, TraceInequalityExperiment,
)
from experiments.measure_experiments import (
    ClosedFormExperiment, McOracleExperiment, MeasureExperiment, PolygonExperiment,
)
from experiments.operator_experiments import (
    ExtensionExperiment, MaximalExperiment, TraceExperiment, WhitneyExperiment,
)
from experiments.regularity_experiments import (
    AdmissibilityExperiment, ApExperiment, CodimensionExperiment, DoublingExperiment, ShellExperiment,
)
from models.schemas import ExperimentConfig, ExperimentOutcome, FractalKind, RunReport, Status, WeightParams
from services import geometry, regularity
from services.cache_manager import CacheManager
from services.reporting import output_paths, plain, write_csv, write_json

logger = logging.getLogger(__name__)

RUNNERS: List[Type[BaseExperiment]] = [
    MeasureExperiment, ClosedFormExperiment, McOracleExperiment, DoublingExperiment, ApExperiment,
    CodimensionExperiment, ShellExperiment, WhitneyExperiment, ExtensionExperiment, TraceExperiment,
    MaximalExperiment, BesovExperiment, SobolevExperiment, TraceInequalityExperiment,
    ExtensionInequalityExperiment, AdmissibilityExperiment, PolygonExperiment,
]
PARAM_KEYS = ("alpha", "p", "theta", "q")
RUN_KEYS = ("seed", "tol", "budget")


def parse_config(raw: Dict[str, Any], output_dir: Optional[str] = None) -> ExperimentConfig:
    """Validate a parsed TOML document; WeightParams get the Hausdorff dimension of the chosen fractal"""
    data = dict(raw)
    try:
        kind = FractalKind(data.get("fractal", FractalKind.CARPET.value))
        params = dict(data.get("params", {}))
        params.setdefault("hausdorff_dim", geometry.fractal_spec(kind).hausdorff_dim)
        data["params"] = params
        if output_dir is not None:
            data["output_dir"] = output_dir
        return ExperimentConfig(**data)
    except ValidationError as e:
        raise ConfigurationError(f"invalid experiment config: {e}") from e
    except (ValueError, TypeError) as e:
        raise ConfigurationError(f"invalid experiment config: {e}") from e


def load_config(path: str, output_dir: Optional[str] = None) -> ExperimentConfig:
    """Read and validate a TOML experiment file"""
    try:
        with open(path, "rb") as handle:
            raw = tomllib.load(handle)
    except OSError as e:
        raise ConfigurationError(f"cannot read config {path}: {e}") from e
    except tomllib.TOMLDecodeError as e:
        raise ConfigurationError(f"malformed config {path}: {e}") from e
    return parse_config(raw, output_dir)


def _scalars(summary: Dict[str, Any]) -> Dict[str, Any]:
    return {k: v for k, v in plain(summary).items() if isinstance(v, (int, float, str, bool)) or v is None}


class ExperimentService:
    """Runs experiments end to end: validation, execution and report writing"""

    def __init__(self, cache: Optional[CacheManager] = None):
        self.cache = cache or CacheManager()
        self.runners: Dict[str, BaseExperiment] = {cls.name: cls(self.cache) for cls in RUNNERS}
        logger.info(f"Experiment service initialized with {len(self.runners)} operations")

    def runner_for(self, operation: str) -> BaseExperiment:
        if operation not in self.runners:
            raise ConfigurationError(f"unknown operation {operation!r}; choose from {', '.join(sorted(self.runners))}")
        return self.runners[operation]

    def validate(self, config: ExperimentConfig) -> Tuple[BaseExperiment, bool, bool]:
        """Resolve the runner and evaluate the admissibility predicates"""
        runner = self.runner_for(config.operation)
        trace_ok = regularity.trace_admissible(config.params)
        extension_ok = regularity.extension_admissible(config.params)
        p = config.params
        logger.info(f"{config.operation} on {config.fractal.value}: alpha={p.alpha:g} p={p.p:g} theta={p.theta:g} "
                    f"gamma={p.gamma:.4f} trace_admissible={trace_ok} extension_admissible={extension_ok}")
        return runner, trace_ok, extension_ok

    def execute(self, runner: BaseExperiment, config: ExperimentConfig) -> ExperimentOutcome:
        try:
            return runner.run(config)
        except FractalLabError as e:
            logger.error(f"{config.operation} failed: {e}")
            raise

    def run(self, config: ExperimentConfig) -> RunReport:
        """Execute one operation and write <operation>.json and <operation>.csv"""
        started = time.perf_counter()

        # Phase 1: validation and admissibility echo
        logger.info(f"Phase 1: Validating {config.operation}")
        runner, trace_ok, extension_ok = self.validate(config)

        # Phase 2: execution
        logger.info(f"Phase 2: Running {config.operation} (seed {config.seed})")
        outcome = self.execute(runner, config)
        table = outcome.table if outcome.table is not None else pd.DataFrame([_scalars(outcome.summary)])

        # Phase 3: reports
        logger.info(f"Phase 3: Writing reports to {config.output_dir}")
        report = RunReport(operation=config.operation, fractal=config.fractal, seed=config.seed, params=config.params,
                           trace_admissible=trace_ok, extension_admissible=extension_ok, status=outcome.status,
                           summary=plain(outcome.summary), rows=len(table))
        json_path, csv_path = output_paths(config.output_dir, config.operation)
        write_json(report, json_path)
        write_csv(table, csv_path)

        logger.info(f"{config.operation} finished: {outcome.status.value} in {time.perf_counter() - started:.2f}s")
        return report

    def grid(self, config: ExperimentConfig) -> List[Dict[str, Any]]:
        """Cross product of the sweep table, keys in sorted order"""
        if not config.sweep or any(len(values) == 0 for values in config.sweep.values()):
            raise ConfigurationError("sweep needs a nonempty [sweep] table with nonempty value lists")
        keys = sorted(config.sweep)
        return [dict(zip(keys, values)) for values in itertools.product(*(config.sweep[k] for k in keys))]

    def point_config(self, config: ExperimentConfig, point: Dict[str, Any]) -> ExperimentConfig:
        """config with one grid point applied: exponents go to params, seed/tol/budget to the run, the rest to options"""
        params = config.params.model_dump(exclude={"gamma"})
        options = dict(config.options)
        run: Dict[str, Any] = {}
        for key, value in point.items():
            if key in PARAM_KEYS:
                params[key] = value
            elif key in RUN_KEYS:
                run[key] = value
            else:
                options[key] = value
        try:
            return config.model_copy(update={"params": WeightParams(**params), "options": options, **run})
        except ValidationError as e:
            raise ConfigurationError(f"invalid sweep point {point}: {e}") from e

    def sweep(self, config: ExperimentConfig) -> RunReport:
        """Run every grid point with shared caches; one CSV row per point, worst status overall"""
        started = time.perf_counter()

        logger.info(f"Phase 1: Validating sweep of {config.operation}")
        runner, trace_ok, extension_ok = self.validate(config)
        points = self.grid(config)
        logger.info(f"Sweep over {len(points)} grid points: {', '.join(sorted(config.sweep))}")

        logger.info("Phase 2: Running grid points")
        rows, statuses, failed = [], [], 0
        for i, point in enumerate(points):
            try:
                point_config = self.point_config(config, point)
                outcome = self.execute(runner, point_config)
                statuses.append(outcome.status)
                rows.append({**plain(point), "status": outcome.status.value, "error": "",
                             **_scalars(outcome.summary)})
            except FractalLabError as e:
                failed += 1
                rows.append({**plain(point), "status": "failed", "error": str(e)})
            logger.info(f"Grid point {i + 1}/{len(points)}: {rows[-1]['status']}")

        logger.info(f"Phase 3: Writing sweep reports to {config.output_dir}")
        status = Status.worst(statuses)
        table = pd.DataFrame(rows)
        summary = {"grid": plain(config.sweep), "points": len(points), "failed": failed,
                   "statuses": {s.value: sum(1 for t in statuses if t == s) for s in Status},
                   "cache": {"hits": self.cache.hits, "misses": self.cache.misses}}
        report = RunReport(operation=config.operation, fractal=config.fractal, seed=config.seed, params=config.params,
                           trace_admissible=trace_ok, extension_admissible=extension_ok, status=status,
                           summary=summary, rows=len(table))
        json_path, csv_path = output_paths(config.output_dir, config.operation, sweep=True)
        write_json(report, json_path)
        write_csv(table, csv_path)

        logger.info(f"Sweep finished: {status.value}, {failed} failed points, {time.perf_counter() - started:.2f}s")
        return report
