import math

import numpy as np
import pandas as pd

from core.errors import ConfigurationError
from experiments.base_experiment import BaseExperiment
from models.schemas import ExperimentConfig, ExperimentOutcome, FractalKind, Point2, Status
from services import regularity
from services.reporting import intervals_frame, survey_frame, survey_summary

CODIMENSION_STAGE = 31
SHELL_STAGE = 32
KOCH_SHELL_EXPONENT = 2.0 - math.log(4.0) / math.log(3.0)


class DoublingExperiment(BaseExperiment):
    """Survey of mu_alpha(3S) / mu_alpha(S) over random squares"""

    name = "doubling"

    def run(self, config: ExperimentConfig) -> ExperimentOutcome:
        n = self.option(config, "n_squares", 1000, int)
        report = regularity.doubling_survey(self.spec(config), config.params.alpha, n, config.seed,
                                            tol=config.tol, budget=config.budget)
        return self.create_outcome(report.status, survey_summary(report), survey_frame(report))


class ApExperiment(BaseExperiment):
    """Survey of the A_p product of dist(., E)^alpha over random squares"""

    name = "ap"

    def run(self, config: ExperimentConfig) -> ExperimentOutcome:
        n = self.option(config, "n_squares", 1000, int)
        report = regularity.ap_survey(self.spec(config), config.params.alpha, config.params.p, n, config.seed,
                                      tol=config.tol, budget=config.budget)
        return self.create_outcome(report.status, survey_summary(report), survey_frame(report))


class CodimensionExperiment(BaseExperiment):
    """mu_alpha(B(x, r)) / r^(2+alpha) at boundary points over dyadic radii"""

    name = "codimension"

    def run(self, config: ExperimentConfig) -> ExperimentOutcome:
        spec = self.spec(config)
        n_points = self.option(config, "n_points", 100, int)
        radii = self.dyadic_radii(config, 3, 10)
        normalize = self.option(config, "normalize", "area", str)
        if normalize not in ("area", "nu"):
            raise ConfigurationError("normalize must be 'area' or 'nu'")
        koch_level = self.option(config, "koch_level", None, int)

        keys, values = [], []
        for i, xy in enumerate(self.boundary_points(config, n_points, CODIMENSION_STAGE)):
            x = Point2.of(xy)
            profile = regularity.codimension_profile(spec, config.params.alpha, x, radii, tol=config.tol,
                                                     budget=config.budget, koch_level=koch_level,
                                                     normalize=normalize)
            keys.extend({"point": i, "x": x.x, "y": x.y, "r": r} for r in radii)
            values.extend(profile)

        table = intervals_frame(keys, values)
        status = Status.worst(v.status for v in values)
        mids = table["mid"][np.isfinite(table["mid"]) & (table["mid"] > 0)]
        spread = float(mids.max() / mids.min()) if len(mids) else math.inf
        summary = {"n_points": n_points, "radii": radii, "normalize": normalize,
                   "max_ratio": float(mids.max()) if len(mids) else math.inf,
                   "min_ratio": float(mids.min()) if len(mids) else 0.0, "spread": spread}
        return self.create_outcome(status, summary, table)


class ShellExperiment(BaseExperiment):
    """Mass of rho-shells of the snowflake boundary inside B(x, r) and the fitted exponent"""

    name = "shell"

    def run(self, config: ExperimentConfig) -> ExperimentOutcome:
        if config.fractal != FractalKind.KOCH:
            raise ConfigurationError("the shell experiment runs on the Koch snowflake")
        n_points = self.option(config, "n_points", 5, int)
        r = self.option(config, "r", 0.5, float)
        rhos = self.dyadic_radii(config, 3, 8, prefix="rho")
        n_level = self.option(config, "koch_level", 8, int)
        tol = config.tol if config.tol is not None else 0.05

        rows, slopes, statuses = [], [], []
        for i, xy in enumerate(self.boundary_points(config, n_points, SHELL_STAGE)):
            profile = regularity.shell_profile(Point2.of(xy), r, rhos, n_level=n_level, tol=tol,
                                               budget=config.budget)
            slopes.append(profile.fitted_slope)
            statuses.append(profile.status)
            for rho, mass in zip(profile.rho_list, profile.masses):
                rows.append({"point": i, "x": float(xy[0]), "y": float(xy[1]), "rho": rho, "lo": mass.value.lo,
                             "hi": mass.value.hi, "band_width": mass.band_width, "slope": profile.fitted_slope,
                             "status": mass.status.value})

        deviation = max((abs(s - KOCH_SHELL_EXPONENT) for s in slopes), default=math.inf)
        summary = {"n_points": n_points, "r": r, "rhos": sorted(rhos), "slopes": slopes,
                   "reference_exponent": KOCH_SHELL_EXPONENT, "max_deviation": deviation}
        return self.create_outcome(Status.worst(statuses), summary, pd.DataFrame(rows))


class AdmissibilityExperiment(BaseExperiment):
    """Trace/extension admissibility of the configured exponents and the A_p window"""

    name = "admissibility"

    def run(self, config: ExperimentConfig) -> ExperimentOutcome:
        spec = self.spec(config)
        params = config.params
        window = regularity.ap_window(spec, params.p)
        summary = {
            "gamma": params.gamma,
            "trace_admissible": regularity.trace_admissible(params),
            "extension_admissible": regularity.extension_admissible(params),
            "trace_theta_max": min(1.0 / params.p, 1.0 - params.gamma / params.p),
            "extension_theta_min": 1.0 - params.gamma / params.p,
            "ap_window": list(window),
            "alpha_in_ap_window": window[0] < params.alpha < window[1],
        }
        table = pd.DataFrame([{k: v for k, v in summary.items() if not isinstance(v, list)}])
        return self.create_outcome(Status.CONVERGED, summary, table)
