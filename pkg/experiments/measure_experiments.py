import math
from typing import Optional

import pandas as pd

from core.errors import ConfigurationError, InputError
from experiments.base_experiment import BaseExperiment
from models.schemas import ExperimentConfig, ExperimentOutcome, FractalKind, GridCase, Region, Square, Status
from services import closed_forms, geometry, measures
from services.reporting import estimate_summary, plain


class MeasureExperiment(BaseExperiment):
    """mu_alpha of one region by interval quadrature, with the closed form when one exists"""

    name = "measure"

    def run(self, config: ExperimentConfig) -> ExperimentOutcome:
        spec = self.spec(config)
        region = self.region(config)
        estimate = measures.mu_alpha_region(spec, region, config.params, tol=config.tol, budget=config.budget,
                                            koch_level=self.option(config, "koch_level", None, int),
                                            atol=self.option(config, "atol", 0.0, float))
        summary = {"region": plain(region), **estimate_summary(estimate, config.timings)}
        reference = self._reference(config.fractal, region, config.params.alpha)
        if reference is not None:
            summary["reference"] = reference
            summary["brackets_reference"] = estimate.value.contains(reference, slack=1e-12 * abs(reference))

        row = {"shape": region.shape, "lo": estimate.value.lo, "hi": estimate.value.hi, "mid": estimate.mid,
               "status": estimate.status.value, "cells_used": estimate.cells_used}
        if config.timings:
            row["seconds"] = estimate.seconds
        return self.create_outcome(estimate.status, summary, pd.DataFrame([row]))

    def _reference(self, kind: FractalKind, region: Region, alpha: float) -> Optional[float]:
        if kind != FractalKind.CARPET or not isinstance(region, Square):
            return None
        try:
            k, m, n = measures.grid_square_index(region)
        except InputError:
            return None
        case = geometry.classify_grid_square(k, m, n)
        if case == GridCase.CELL:
            return closed_forms.carpet_cell_by_side(region.side, alpha)
        if case == GridCase.HOLE:
            return closed_forms.carpet_hole_by_side(region.side, alpha)
        return None


class ClosedFormExperiment(BaseExperiment):
    """Closed-form hole, cell and series values"""

    name = "closed_form"
    FORMS = ("carpet_hole", "carpet_cell", "carpet_series", "gasket_hole", "gasket_triangle")

    def run(self, config: ExperimentConfig) -> ExperimentOutcome:
        form = self.option(config, "form", "carpet_hole", str)
        alpha = config.params.alpha
        if form not in self.FORMS:
            raise ConfigurationError(f"unknown closed form {form!r}; choose from {', '.join(self.FORMS)}")

        summary = {"form": form, "alpha": alpha}
        try:
            self._evaluate(config, form, alpha, summary)
        except ValueError as e:
            raise ConfigurationError(f"closed form {form}: {e}") from e

        status = Status.CONVERGED if math.isfinite(summary["value"]) else Status.DIVERGENT
        table = pd.DataFrame([{k: v for k, v in summary.items() if not isinstance(v, dict)}])
        return self.create_outcome(status, summary, table)

    def _evaluate(self, config: ExperimentConfig, form: str, alpha: float, summary: dict) -> None:
        if form == "carpet_series":
            terms = self.option(config, "terms", 40, int)
            value, tail = closed_forms.carpet_series(alpha, terms)
            exact = closed_forms.carpet_cell_by_side(1.0, alpha)
            summary.update({"terms": terms, "value": value, "tail_bound": tail, "closed_form": exact,
                            "within_tail": abs(exact - value) <= tail if math.isfinite(exact) else False})
        elif form == "gasket_triangle":
            k = self.option(config, "k", 0, int)
            value = closed_forms.gasket_triangle_measure(k, alpha)
            summary.update({"k": k, "value": value})
        else:
            side = self._side(config, form)
            value = {
                "carpet_hole": closed_forms.carpet_hole_by_side,
                "carpet_cell": closed_forms.carpet_cell_by_side,
                "gasket_hole": closed_forms.hole_measure_gasket,
            }[form](side, alpha)
            summary.update({"side": side, "value": value})

    def _side(self, config: ExperimentConfig, form: str) -> float:
        if "k" in config.options:
            k = self.option(config, "k", cast=int)
            return 3.0 ** (-k) if form.startswith("carpet") else 2.0 ** (-k)
        return self.option(config, "side", 1.0, float)


class McOracleExperiment(BaseExperiment):
    """Plain Monte Carlo mean and standard error of mu_alpha(region)"""

    name = "mc_oracle"

    def run(self, config: ExperimentConfig) -> ExperimentOutcome:
        spec = self.spec(config)
        region = self.region(config)
        n = self.option(config, "n_samples", 100_000, int)
        mean, stderr = measures.mu_alpha_mc_oracle(spec, region, config.params, n, config.seed,
                                                   koch_level=self.option(config, "koch_level", None, int))
        summary = {"region": plain(region), "n_samples": n, "mean": mean, "stderr": stderr}
        status = Status.CONVERGED if math.isfinite(mean) else Status.DIVERGENT
        return self.create_outcome(status, summary, pd.DataFrame([{"n_samples": n, "mean": mean, "stderr": stderr}]))


class PolygonExperiment(BaseExperiment):
    """Vertices of the snowflake polygon K_n"""

    name = "polygon"

    def run(self, config: ExperimentConfig) -> ExperimentOutcome:
        level = self.option(config, "level", 4, int)
        vertices = geometry.koch_polygon(level)
        table = pd.DataFrame({"index": range(len(vertices)), "x": vertices[:, 0], "y": vertices[:, 1]})
        summary = {"level": level, "segments": len(vertices), "segment_length": 3.0 ** (-level),
                   "fringe_area": geometry.koch_fringe_area(level)}
        return self.create_outcome(Status.CONVERGED, summary, table)
