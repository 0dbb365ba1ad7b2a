import json
import math
from pathlib import Path

import pandas as pd
import pytest

from core.config import get_settings
from core.errors import ConfigurationError
from experiments import energy_experiments
from main import EXIT_BUDGET, EXIT_DIVERGENT, EXIT_OK, EXIT_RUNTIME, EXIT_VALIDATION, main
from services import energies
from services.experiment_service import ExperimentService, load_config, parse_config

HOLE = """
operation = "measure"
fractal = "carpet"
seed = 1

[params]
alpha = {alpha}

[options.region]
shape = "square"
center = [0.5, 0.5]
side = 0.3333333333333333
"""

CLOSED_FORM_SWEEP = """
operation = "closed_form"
fractal = "{fractal}"

[params]
alpha = 0.0

[options]
form = "{form}"

[sweep]
alpha = [0.0, 0.5]
k = {ks}
"""


def write_config(tmp_path, text, name="experiment.toml"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return str(path)


def run_cli(tmp_path, output_dir, text, command="run"):
    return main([command, write_config(tmp_path, text), "--output-dir", str(output_dir)])


def test_hole_measure_run_writes_reports(tmp_path, output_dir):
    assert run_cli(tmp_path, output_dir, HOLE.format(alpha=0.0)) == EXIT_OK

    report = json.loads((output_dir / "measure.json").read_text())
    assert report["status"] == "converged"
    assert report["summary"]["reference"] == pytest.approx(1 / 9)
    assert report["summary"]["brackets_reference"] is True
    assert report["params"]["gamma"] == pytest.approx(2 - math.log(8) / math.log(3))

    table = pd.read_csv(output_dir / "measure.csv")
    assert list(table.columns) == ["shape", "lo", "hi", "mid", "status", "cells_used"]


def test_divergent_hole_exits_three(tmp_path, output_dir):
    assert run_cli(tmp_path, output_dir, HOLE.format(alpha=-1.0)) == EXIT_DIVERGENT
    report = json.loads((output_dir / "measure.json").read_text())
    assert report["status"] == "divergent"


def test_exhausted_budget_exits_four(tmp_path, output_dir):
    text = """
operation = "measure"
budget = 1

[params]
alpha = -0.05

[options.region]
shape = "square"
center = [0.4, 0.45]
side = 0.2
"""
    assert run_cli(tmp_path, output_dir, text) == EXIT_BUDGET


@pytest.mark.parametrize("text", [
    'operation = "no_such_operation"\n[params]\nalpha = 0.0\n',
    'operation = "measure"\n[params]\nalpha = 5.0\n',
    'operation = "measure"\n',
    'operation = "measure"\n[params]\nalpha = 0.0\n',
    'operation = "closed_form"\n[params]\nalpha = 0.0\n[options]\nform = "nonsense"\n',
    'operation = [broken\n',
])
def test_invalid_configs_exit_two(tmp_path, output_dir, text):
    assert run_cli(tmp_path, output_dir, text) == EXIT_VALIDATION


def test_missing_config_exits_two(tmp_path, output_dir):
    assert main(["run", str(tmp_path / "absent.toml"), "--output-dir", str(output_dir)]) == EXIT_VALIDATION


def test_unwritable_output_exits_five(tmp_path):
    blocker = tmp_path / "blocker"
    blocker.write_text("not a directory")
    assert run_cli(tmp_path, blocker / "out", HOLE.format(alpha=0.0)) == EXIT_RUNTIME


@pytest.mark.slow
def test_reruns_are_byte_identical(tmp_path):
    text = """
operation = "doubling"
seed = 4

[params]
alpha = 0.0

[options]
n_squares = 6
"""
    first, second = tmp_path / "first", tmp_path / "second"
    assert run_cli(tmp_path, first, text) == EXIT_OK
    assert run_cli(tmp_path, second, text) == EXIT_OK
    for name in ("doubling.json", "doubling.csv"):
        assert (first / name).read_bytes() == (second / name).read_bytes()
    header = (first / "doubling.csv").read_text().splitlines()[0]
    assert header == "index,center_x,center_y,side,ratio,lo,hi,status"


def test_worker_count_does_not_change_results(tmp_path, monkeypatch):
    text = HOLE.format(alpha=-0.05)
    assert run_cli(tmp_path, tmp_path / "serial", text) == EXIT_OK
    monkeypatch.setenv("FTL_WORKERS", "4")
    get_settings.cache_clear()
    assert run_cli(tmp_path, tmp_path / "parallel", text) == EXIT_OK
    assert (tmp_path / "serial" / "measure.csv").read_bytes() == (tmp_path / "parallel" / "measure.csv").read_bytes()


def test_whitney_run_writes_the_cover(tmp_path, output_dir):
    text = """
operation = "whitney"

[params]
alpha = 0.0

[options]
max_level = 2
n_points = 200
"""
    assert run_cli(tmp_path, output_dir, text) == EXIT_OK
    assert (output_dir / "whitney.csv").read_text().splitlines()[0] == "i,j,x,y,r"
    summary = json.loads((output_dir / "whitney.json").read_text())["summary"]
    assert summary["disjoint"] is True
    assert summary["partition_sum_error"] <= 1e-9


def test_trace_run_of_constant(tmp_path, output_dir):
    text = """
operation = "trace"

[params]
alpha = -0.05

[options]
function = "constant"
n_points = 2
radius_exp_min = 1
radius_exp_max = 3
"""
    assert run_cli(tmp_path, output_dir, text) == EXIT_OK
    table = pd.read_csv(output_dir / "trace.csv")
    assert list(table.columns) == ["point", "x", "y", "r", "lo", "hi", "mid", "status"]
    assert len(table) == 6
    assert (table["mid"] == 1.0).all()


def test_polygon_run(tmp_path, output_dir):
    text = 'operation = "polygon"\nfractal = "koch"\n[params]\nalpha = 0.0\n[options]\nlevel = 2\n'
    assert run_cli(tmp_path, output_dir, text) == EXIT_OK
    assert len(pd.read_csv(output_dir / "polygon.csv")) == 48


def test_sweep_writes_one_row_per_point(tmp_path, output_dir):
    text = CLOSED_FORM_SWEEP.format(fractal="carpet", form="carpet_hole", ks="[1, 2]")
    assert run_cli(tmp_path, output_dir, text, command="sweep") == EXIT_OK
    table = pd.read_csv(output_dir / "closed_form_sweep.csv")
    assert len(table) == 4
    assert list(table.columns[:4]) == ["alpha", "k", "status", "error"]
    first = table.iloc[0]
    assert first["value"] == pytest.approx(1 / 9)
    report = json.loads((output_dir / "closed_form_sweep.json").read_text())
    assert report["summary"]["points"] == 4
    assert report["summary"]["failed"] == 0


def test_sweep_with_a_failed_point_exits_five(tmp_path, output_dir):
    text = CLOSED_FORM_SWEEP.format(fractal="gasket", form="gasket_triangle", ks="[0, -1]")
    assert run_cli(tmp_path, output_dir, text, command="sweep") == EXIT_RUNTIME
    table = pd.read_csv(output_dir / "closed_form_sweep.csv")
    assert (table["status"] == "failed").sum() == 2
    assert table.loc[table["status"] == "failed", "error"].str.contains("non-negative").all()


def test_sweep_without_grid_exits_two(tmp_path, output_dir):
    assert run_cli(tmp_path, output_dir, HOLE.format(alpha=0.0), command="sweep") == EXIT_VALIDATION


def test_parse_config_uses_the_fractal_dimension():
    config = parse_config({"operation": "measure", "fractal": "gasket", "params": {"alpha": 0.0}})
    assert config.params.hausdorff_dim == pytest.approx(math.log(3) / math.log(2))


def test_parse_config_rejects_unknown_fractals():
    with pytest.raises(ConfigurationError):
        parse_config({"operation": "measure", "fractal": "dragon", "params": {"alpha": 0.0}})


def test_service_knows_every_operation():
    service = ExperimentService()
    assert set(service.runners) == {
        "measure", "closed_form", "mc_oracle", "doubling", "ap", "codimension", "shell", "whitney", "extension",
        "trace", "maximal", "besov", "sobolev", "trace_experiment", "extension_experiment", "admissibility",
        "polygon",
    }
    with pytest.raises(ConfigurationError):
        service.runner_for("unknown")


def test_sweep_grid_is_sorted_by_key():
    service = ExperimentService()
    config = parse_config({"operation": "closed_form", "params": {"alpha": 0.0},
                           "sweep": {"theta": [0.2, 0.4], "alpha": [0.0]}})
    assert service.grid(config) == [{"alpha": 0.0, "theta": 0.2}, {"alpha": 0.0, "theta": 0.4}]
    point = service.point_config(config, {"alpha": -0.05, "seed": 9, "n_squares": 3})
    assert point.params.alpha == -0.05
    assert point.seed == 9
    assert point.options["n_squares"] == 3


@pytest.mark.parametrize("path", sorted((Path(__file__).parent.parent / "configs").glob("*.toml")), ids=lambda p: p.stem)
def test_shipped_configs_validate(path):
    config = load_config(str(path))
    runner, _, _ = ExperimentService().validate(config)
    assert runner.name == config.operation


@pytest.mark.slow
def test_trace_experiment_is_seed_stable(tmp_path, output_dir):
    text = """
operation = "trace_experiment"
seed = 11
tol = 1e-3

[params]
alpha = -0.05
p = 2.0
theta = 0.4

[options]
functions = ["x1", "hole_bump", "two_bumps"]
n_samples = 2000
n_seeds = 3
"""
    assert run_cli(tmp_path, output_dir, text) == EXIT_OK
    summary = json.loads((output_dir / "trace_experiment.json").read_text())["summary"]
    assert summary["all_finite"] is True
    assert summary["seed_stable"] is True
    table = pd.read_csv(output_dir / "trace_experiment.csv")
    assert sorted(table["seed"].unique()) == [11, 12, 13]


@pytest.mark.slow
def test_extension_run_is_seed_stable(tmp_path, output_dir):
    text = """
operation = "extension"
seed = 5

[params]
alpha = 0.0

[options]
function = "x1"
max_level = 3
n_samples = 100000
n_seeds = 3
"""
    assert run_cli(tmp_path, output_dir, text) == EXIT_OK
    summary = json.loads((output_dir / "extension.json").read_text())["summary"]
    assert summary["n_seeds"] == 3
    assert summary["constant_error"] <= 1e-12
    assert summary["lipschitz"] <= 50.0
    assert summary["seed_stable"] is True
    assert len(summary["seeds"]) == 3


def test_trace_experiment_reuses_the_sobolev_energy_across_seeds(monkeypatch):
    calls = []
    real = energies.sobolev_energy

    def counted(*args, **kwargs):
        calls.append(args[1].name)
        return real(*args, **kwargs)

    monkeypatch.setattr(energy_experiments, "sobolev_energy", counted)
    monkeypatch.setattr(energies, "sobolev_energy", counted)
    config = parse_config({"operation": "trace_experiment", "tol": 1e-2, "params": {"alpha": 0.0},
                           "options": {"functions": ["x1", "constant"], "n_samples": 50, "n_seeds": 3}})
    runner, _, _ = ExperimentService().validate(config)
    outcome = runner.run(config)
    assert sorted(calls) == ["constant", "x1"]
    assert len(outcome.table) == 2 * 2 * 3
