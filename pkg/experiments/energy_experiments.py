import math
from typing import Dict, List

import pandas as pd

from core.errors import ConfigurationError
from core.seeding import split_seed
from experiments.base_experiment import BaseExperiment
from models.schemas import ConstantReport, ExperimentConfig, ExperimentOutcome, FamilyMember, Status
from services.energies import (
    besov_energy, besov_energy_dyadic, extension_ratios, function_family, sobolev_energy, trace_mass_ratio,
    trace_ratio,
)
from services.reporting import plain

BESOV_STAGE = 51
TRACE_RATIO_STAGE = 52
EXTENSION_SAMPLE_STAGE = 53
EXTENSION_BESOV_STAGE = 54
SEED_TOLERANCE = 0.25
REPORT_COLUMNS = ["function", "seed", "name", "lhs", "rhs", "constant", "status"]


def _spread(values: List[float]) -> float:
    """max/min of finite positive ratios; 1 when fewer than two are positive"""
    positive = [v for v in values if math.isfinite(v) and v > 0]
    if len(positive) < 2:
        return 1.0 if all(math.isfinite(v) for v in values) else math.inf
    return max(positive) / min(positive)


def _row(member: str, seed: int, report: ConstantReport) -> dict:
    return {"function": member, "seed": seed, "name": report.name, "lhs": report.lhs, "rhs": report.rhs,
            "constant": report.constant, "status": report.status.value}


class BesovExperiment(BaseExperiment):
    """Besov energy of a boundary test function, double-sum or dyadic form"""

    name = "besov"

    def run(self, config: ExperimentConfig) -> ExperimentOutcome:
        spec = self.spec(config)
        member = self.family_member(config)
        form = self.option(config, "form", "double_sum", str)
        n_samples = self.option(config, "n_samples", 2000, int)
        samples = self.cache.samples(config.fractal, n_samples, split_seed(config.seed, BESOV_STAGE))
        theta, p = config.params.theta, config.params.p

        if form == "double_sum":
            report = besov_energy(spec, samples, member.boundary, theta, p,
                                  level=self.option(config, "nu_level", None, int), params=config.params)
        elif form == "dyadic":
            report = besov_energy_dyadic(spec, samples, member.boundary, theta, p,
                                         n_max=self.option(config, "n_max", 10, int), params=config.params)
        else:
            raise ConfigurationError("form must be 'double_sum' or 'dyadic'")

        summary = {"function": member.name, **plain(report.model_dump(mode="python"))}
        row = {"function": member.name, "form": form, "theta": theta, "p": p, "n_samples": report.n_samples,
               "value": report.value, "skipped": report.skipped}
        return self.create_outcome(report.status, summary, pd.DataFrame([row]))


class SobolevExperiment(BaseExperiment):
    """Weighted gradient and mass energies of an ambient test function on B"""

    name = "sobolev"

    def run(self, config: ExperimentConfig) -> ExperimentOutcome:
        spec = self.spec(config)
        member = self.family_member(config)
        region = self.region(config) if "region" in config.options else None
        report = sobolev_energy(spec, member.ambient, config.params, tol=config.tol, budget=config.budget,
                                region=region, koch_level=self.option(config, "koch_level", None, int))

        summary = {"function": member.name, "region": plain(region) if region is not None else "ambient",
                   **plain(report.model_dump(mode="python"))}
        row = {"function": member.name, "alpha": config.params.alpha, "p": config.params.p,
               "gradient": report.value, "mass": report.mass_term, "cells_used": report.cells_used,
               "status": report.status.value}
        return self.create_outcome(report.status, summary, pd.DataFrame([row]))


class _InequalityExperiment(BaseExperiment):
    """Shared plumbing for the norm-inequality runs over the test-function family and several seeds"""

    def members(self, config: ExperimentConfig) -> List[FamilyMember]:
        family = function_family(self.spec(config))
        names = self.option(config, "functions", [m.name for m in family])
        known = {m.name: m for m in family}
        unknown = [n for n in names if n not in known]
        if unknown:
            raise ConfigurationError(f"unknown test functions {unknown}; choose from {', '.join(known)}")
        return [known[n] for n in names]

    def seeds(self, config: ExperimentConfig) -> List[int]:
        count = self.option(config, "n_seeds", 1, int)
        if count < 1:
            raise ConfigurationError("n_seeds must be at least 1")
        return [config.seed + k for k in range(count)]

    def finish(self, config: ExperimentConfig, rows: List[dict], statuses: List[Status]) -> ExperimentOutcome:
        table = pd.DataFrame(rows, columns=REPORT_COLUMNS)
        stability: Dict[str, dict] = {}
        tolerance = self.option(config, "seed_tolerance", SEED_TOLERANCE, float)
        for name, group in table.groupby("name", sort=False):
            constants = group["constant"].tolist()
            spread = _spread(constants)
            stability[name] = {"constant": max(constants), "spread": spread,
                               "finite": all(math.isfinite(c) for c in constants)}
        worst = max((s["spread"] for s in stability.values()), default=1.0)
        summary = {"ratios": stability, "max_spread": worst,
                   "all_finite": all(s["finite"] for s in stability.values()),
                   "seed_stable": worst <= 1.0 + tolerance}
        return self.create_outcome(Status.worst(statuses), summary, table)


class TraceInequalityExperiment(_InequalityExperiment):
    """Besov energy of u|_E against the weighted gradient energy of u, and the trace mass ratio"""

    name = "trace_experiment"

    def run(self, config: ExperimentConfig) -> ExperimentOutcome:
        spec = self.spec(config)
        n_samples = self.option(config, "n_samples", 2000, int)
        members = self.members(config)
        energies = {m.name: sobolev_energy(spec, m.ambient, config.params, tol=config.tol, budget=config.budget)
                    for m in members}
        rows, statuses = [], []
        for seed in self.seeds(config):
            samples = self.cache.samples(config.fractal, n_samples, split_seed(seed, TRACE_RATIO_STAGE))
            for member in members:
                sobolev = energies[member.name]
                for report in (trace_ratio(spec, member, config.params, samples, sobolev=sobolev),
                               trace_mass_ratio(spec, member, config.params, samples, sobolev=sobolev)):
                    rows.append(_row(member.name, seed, report))
                    statuses.append(report.status)
                    self.logger.info(f"{report.name} seed {seed}: C = {report.constant:.4g}")
        return self.finish(config, rows, statuses)


class ExtensionInequalityExperiment(_InequalityExperiment):
    """Gradient energy of Su against the Besov energy of u, and the mass of Su against the nu-mass of u"""

    name = "extension_experiment"

    def run(self, config: ExperimentConfig) -> ExperimentOutcome:
        spec = self.spec(config)
        max_level = self.option(config, "max_level", None, int)
        n_samples = self.option(config, "n_samples", 200_000, int)
        n_besov = self.option(config, "n_besov", 2000, int)
        rows, statuses = [], []
        for seed in self.seeds(config):
            operator = self.cache.extension(config.fractal, max_level, n_samples,
                                            split_seed(seed, EXTENSION_SAMPLE_STAGE))
            besov_samples = self.cache.samples(config.fractal, n_besov, split_seed(seed, EXTENSION_BESOV_STAGE))
            for member in self.members(config):
                for report in extension_ratios(spec, member, config.params, operator, besov_samples,
                                               config.tol, config.budget):
                    rows.append(_row(member.name, seed, report))
                    statuses.append(report.status)
                    self.logger.info(f"{report.name} seed {seed}: C = {report.constant:.4g}")
        return self.finish(config, rows, statuses)
