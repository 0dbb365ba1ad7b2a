import math
from typing import List

import numpy as np
import pandas as pd

from core.config import get_settings
from core.errors import ConfigurationError
from core.seeding import split_seed
from experiments.base_experiment import BaseExperiment
from models.schemas import (
    AmbientFunction, BoundaryFunction, ExperimentConfig, ExperimentOutcome, FamilyMember, Point2, Square, Status,
)
from services import whitney
from services.operators import fractional_maximal, maximal_radii, strong_type_check, trace, weak_type_table
from services.quadrature import indicator_integrand
from services.reporting import intervals_frame

WHITNEY_POINT_STAGE = 41
EXTENSION_SAMPLE_STAGE = 42
EXTENSION_EVAL_STAGE = 43
TRACE_STAGE = 44
EXTENSION_TRACE_STAGE = 46
MAXIMAL_STAGE = 45
DILATIONS = (1.0, 2.0, 3.0)
EXTENSION_TRACE_TOL = 1e-2


def seed_spread(values: List[float]) -> float:
    """max/min over seeds; 1 when every value is zero"""
    top, bottom = max(values), min(values)
    if top == 0:
        return 1.0
    return top / bottom if bottom > 0 else math.inf


class WhitneyExperiment(BaseExperiment):
    """Cover statistics: size, disjointness, overlap counts and partition sums"""

    name = "whitney"

    def run(self, config: ExperimentConfig) -> ExperimentOutcome:
        max_level = self.option(config, "max_level", None, int)
        n_points = self.option(config, "n_points", 10_000, int)
        cover = self.cache.cover(config.fractal, max_level)

        seed = split_seed(config.seed, WHITNEY_POINT_STAGE)
        overlap = {f"N_{t:g}": whitney.overlap_stat(cover, t, n_points, seed) for t in DILATIONS}
        doubled = {f"N_{t:g}": whitney.overlap_stat(cover, t, 2 * n_points, seed) for t in DILATIONS}

        points = whitney.scatter_points(cover, n_points, seed, max_dist=cover.ambient.radius / 2)
        matrix, _ = whitney.partition_matrix(cover, points)
        sums = np.asarray(matrix.sum(axis=1)).ravel()
        summary = {
            "cells": cover.size,
            "max_level": cover.max_level,
            "levels": [int(cover.levels.min()), int(cover.levels.max())],
            "disjoint": whitney.squares_disjoint(cover),
            "overlap": overlap,
            "overlap_doubled_points": doubled,
            "overlap_stable": overlap == doubled,
            "partition_sum_error": float(np.max(np.abs(sums - 1.0))),
        }
        return self.create_outcome(Status.CONVERGED, summary, whitney.cover_frame(cover))


class ExtensionExperiment(BaseExperiment):
    """Su of a test function for several sample seeds: values, constant reproduction and Lipschitz bound"""

    name = "extension"

    def run(self, config: ExperimentConfig) -> ExperimentOutcome:
        max_level = self.option(config, "max_level", None, int)
        n_samples = self.option(config, "n_samples", 200_000, int)
        n_eval = self.option(config, "n_eval", 2000, int)
        n_seeds = self.option(config, "n_seeds", 3, int)
        n_trace = self.option(config, "trace_points", 0, int)
        spacing = self.option(config, "lattice_spacing", get_settings().LIPSCHITZ_SPACING, float)
        tolerance = self.option(config, "seed_tolerance", get_settings().STABILITY_TOL, float)
        if n_seeds < 1:
            raise ConfigurationError("n_seeds must be at least 1")
        member = self.family_member(config)
        constant = BoundaryFunction(name="one", rule=lambda pts: np.ones(len(pts)), lipschitz=0.0)

        runs, tables, statuses = [], [], []
        cells = 0
        for seed in range(config.seed, config.seed + n_seeds):
            operator = self.cache.extension(config.fractal, max_level, n_samples,
                                            split_seed(seed, EXTENSION_SAMPLE_STAGE))
            cover = operator.cover
            cells = cover.size
            points = whitney.scatter_points(cover, n_eval, split_seed(config.seed, EXTENSION_EVAL_STAGE))
            values = operator(member.boundary, points)
            largest, typical = operator.lipschitz(member.boundary, spacing)
            run = {"seed": seed, "constant_error": float(np.max(np.abs(operator(constant, points) - 1.0))),
                   "lipschitz": largest, "lipschitz_q99": typical}
            if n_trace:
                run["trace_error"], status = self._trace_error(config, member, operator.as_ambient(member.boundary),
                                                               n_trace)
                statuses.append(status)
            self.logger.info(f"S{member.name} seed {seed}: Lip {largest:.4g} (q99 {typical:.4g})")
            runs.append(run)
            tables.append(pd.DataFrame({"seed": seed, "x": points[:, 0], "y": points[:, 1], "value": values}))

        lipschitz = [run["lipschitz"] for run in runs]
        spread = seed_spread(lipschitz)
        summary = {"function": member.name, "cells": cells, "n_samples": n_samples, "n_seeds": n_seeds,
                   "constant_error": max(run["constant_error"] for run in runs),
                   "lipschitz": max(lipschitz), "lipschitz_q99": max(run["lipschitz_q99"] for run in runs),
                   "boundary_lipschitz": member.boundary.lipschitz, "spread": spread,
                   "seed_stable": spread <= 1.0 + tolerance, "seeds": runs}
        if n_trace:
            summary["trace_error"] = max(run["trace_error"] for run in runs)
        return self.create_outcome(Status.worst(statuses), summary, pd.concat(tables, ignore_index=True))

    def _trace_error(self, config: ExperimentConfig, member: FamilyMember, su: AmbientFunction, count: int):
        """Largest gap between the averaged trace of Su and u at boundary points, with the worst status"""
        spec = self.spec(config)
        radii = self.dyadic_radii(config, 6, 10)
        tol = self.option(config, "trace_tol", EXTENSION_TRACE_TOL, float)
        gaps, statuses = [], []
        for xy in self.boundary_points(config, count, EXTENSION_TRACE_STAGE):
            result = trace(spec, su, Point2.of(xy), radii, config.params.alpha, tol=tol, budget=config.budget)
            gaps.append(abs(result.limit - float(member.boundary.rule(np.array([xy]))[0])))
            statuses.append(result.status)
        return max(gaps), Status.worst(statuses)


class TraceExperiment(BaseExperiment):
    """mu_alpha-averages of an ambient test function over balls shrinking to boundary points"""

    name = "trace"

    def run(self, config: ExperimentConfig) -> ExperimentOutcome:
        spec = self.spec(config)
        member = self.family_member(config)
        n_points = self.option(config, "n_points", 20, int)
        radii = self.dyadic_radii(config, 1, 10)
        koch_level = self.option(config, "koch_level", None, int)

        keys, values, errors, stabilized = [], [], [], 0
        statuses = []
        for i, xy in enumerate(self.boundary_points(config, n_points, TRACE_STAGE)):
            x = Point2.of(xy)
            result = trace(spec, member.ambient, x, radii, config.params.alpha, tol=config.tol,
                           budget=config.budget, koch_level=koch_level)
            exact = float(member.boundary.rule(np.array([xy]))[0])
            errors.append(abs(result.limit - exact))
            stabilized += int(result.stabilized)
            statuses.append(result.status)
            keys.extend({"point": i, "x": x.x, "y": x.y, "r": r} for r in radii)
            values.extend(result.averages)

        summary = {"function": member.name, "n_points": n_points, "radii": radii, "stabilized": stabilized,
                   "max_error": max(errors, default=0.0), "final_radius": radii[-1]}
        return self.create_outcome(Status.worst(statuses), summary, intervals_frame(keys, values))


def indicator(square: Square, name: str) -> AmbientFunction:
    c = square.center.as_array()

    def rule(pts):
        rel = np.abs(np.asarray(pts, dtype=float).reshape(-1, 2) - c)
        return np.all(rel <= square.side / 2, axis=1).astype(float)

    return AmbientFunction(name=name, rule=rule, bounds=indicator_integrand(square), support=square)


class MaximalExperiment(BaseExperiment):
    """Weak-type tables of M_gamma for indicator inputs, plus the constant-input check"""

    name = "maximal"

    def run(self, config: ExperimentConfig) -> ExperimentOutcome:
        spec = self.spec(config)
        gamma = self.option(config, "gamma", config.params.gamma, float)
        n_points = self.option(config, "n_points", 50, int)
        n_inputs = self.option(config, "n_inputs", 3, int)
        side = self.option(config, "side", 0.1, float)
        thresholds = [float(t) for t in self.option(config, "thresholds", [0.01, 0.02, 0.05, 0.1, 0.2, 0.5, 1.0])]
        radii = maximal_radii(self.option(config, "levels", get_settings().MAXIMAL_LEVELS, int))
        alpha = config.params.alpha

        points = self.boundary_points(config, n_points, MAXIMAL_STAGE)
        anchors = self.boundary_points(config, n_inputs, MAXIMAL_STAGE + 1)
        tables, constants, statuses = [], {}, []
        for k, xy in enumerate(anchors):
            h = indicator(Square(center=Point2.of(xy), side=side), f"indicator_{k}")
            table, report = weak_type_table(spec, h, gamma, alpha, points, thresholds, radii,
                                            tol=config.tol, budget=config.budget)
            tables.append(table.assign(input=h.name))
            constants[h.name] = report.constant
            statuses.append(report.status)

        one = AmbientFunction(name="one", rule=lambda pts: np.ones(len(np.atleast_2d(pts))), lipschitz=0.0)
        at_one = fractional_maximal(spec, one, gamma, Point2.of(points[0]), alpha, radii)
        summary = {"gamma": gamma, "thresholds": thresholds, "constants": constants,
                   "constant": max(constants.values(), default=0.0),
                   "constant_input_value": at_one.mid if math.isfinite(at_one.mid) else None}
        q = self.option(config, "strong_q", None, float)
        if q is not None:
            member = self.family_member(config)
            strong = strong_type_check(spec, member.ambient, gamma, config.params.p, q, alpha, points, radii,
                                       tol=config.tol, budget=config.budget)
            summary["strong_type"] = {"function": member.name, "q": q, "lhs": strong.lhs, "rhs": strong.rhs,
                                      "constant": strong.constant}
            statuses.append(strong.status)
        table = pd.concat(tables, ignore_index=True) if tables else pd.DataFrame()
        return self.create_outcome(Status.worst(statuses), summary, table)
