# Copyright 2026, bilevel-gr authors. All rights reserved.

import json
import math
import os

import numpy as np
import pytest
import yaml

from bilevel_gr.bench.cli import EXIT_CONFIGURATION, EXIT_DIVERGED, EXIT_OK, build_parser, main
from bilevel_gr.bench.config import (
    bundled_config_names,
    load_experiment_config,
    parse_experiment_config,
)
from bilevel_gr.bench.plotdata import PLOT_COLUMNS, emit_plotdata, load_summary
from bilevel_gr.bench.runner import ExperimentRunner, dump_json_text, json_safe, trace_csv_text
from bilevel_gr.errors import ConfigurationError, ExperimentDivergedError, UnknownPlotKindError
from bilevel_gr.problems import ToySpec, toy_oracle
from bilevel_gr.solvers import SolverConfig, run_solver


def _toy_config(out_dir, *solvers, **top_level):
    data = {
        "experiment": "toy_convergence",
        "seed": 0,
        "output": {"dir": str(out_dir)},
        "problem": {"n": 1, "theta0": 3.0, "omega0": 3.0},
        "solvers": list(solvers)
        or [
            {"variant": "FastGR", "alpha": 0.5, "beta": 0.1, "outer_iters": 100, "stop_rel_tol": float("inf")},
            {"variant": "ADI", "alpha": 0.5, "beta": 0.1, "outer_iters": 100, "stop_rel_tol": float("inf")},
        ],
    }
    data.update(top_level)
    return data


def _write_yaml(path, data):
    with open(path, "w") as outfile:
        yaml.safe_dump(data, outfile)
    return str(path)


class TestExperimentConfig:
    def test_defaults_are_merged(self, tmp_path):
        config = parse_experiment_config(_toy_config(tmp_path / "out"))
        assert config.problem["a"] == 2.0
        assert config.repeats == 1
        assert [e.label for e in config.solvers] == ["FastGR", "ADI"]
        assert config.record_timing

    def test_unknown_solver_key(self, tmp_path):
        data = _toy_config(tmp_path, {"variant": "FastGR", "aplha": 0.5})
        with pytest.raises(ConfigurationError) as e:
            parse_experiment_config(data)
        assert e.value.key == "solvers[0].aplha"

    def test_unknown_top_level_and_problem_keys(self, tmp_path):
        with pytest.raises(ConfigurationError) as e:
            parse_experiment_config(_toy_config(tmp_path, colour="blue"))
        assert e.value.key == "colour"
        data = _toy_config(tmp_path)
        data["problem"]["radius"] = 2.0
        with pytest.raises(ConfigurationError) as e:
            parse_experiment_config(data)
        assert e.value.key == "problem.radius"

    def test_duplicate_labels(self, tmp_path):
        data = _toy_config(tmp_path, {"variant": "FastGR"}, {"variant": "fast-gr"})
        with pytest.raises(ConfigurationError) as e:
            parse_experiment_config(data)
        assert e.value.key == "solvers[1].label"

    def test_labels_allow_variant_repeats(self, tmp_path):
        data = _toy_config(
            tmp_path,
            {"variant": "RHG", "inner_steps": 5},
            {"variant": "RHG", "label": "RHG-20", "inner_steps": 20},
        )
        config = parse_experiment_config(data)
        assert [e.label for e in config.solvers] == ["RHG", "RHG-20"]

    def test_invalid_values(self, tmp_path):
        with pytest.raises(ConfigurationError) as e:
            parse_experiment_config(_toy_config(tmp_path, repeats=0))
        assert e.value.key == "repeats"
        with pytest.raises(ConfigurationError) as e:
            parse_experiment_config(dict(_toy_config(tmp_path), experiment="cifar"))
        assert e.value.key == "experiment"

    def test_overrides(self, tmp_path):
        config = parse_experiment_config(_toy_config(tmp_path)).with_overrides(
            seed=7, solver_labels=["adi"], record_timing=False
        )
        assert config.seed == 7
        assert [e.label for e in config.solvers] == ["ADI"]
        assert not config.solvers[0].config.record_timing
        with pytest.raises(ConfigurationError):
            config.with_overrides(solver_labels=["BDA"])

    def test_bundled_configs_parse(self):
        names = bundled_config_names()
        assert {"toy_convergence", "toy_scaling", "mog_ring", "mog_grid_ls", "hyperclean", "meta"} <= set(names)
        for name in names:
            load_experiment_config(name)

    def test_bundled_comparisons(self):
        every_variant = {"ADI", "FastGR", "ImplicitCG", "Neumann", "RHG", "TRHG", "BDA"}
        for name in ("toy_convergence", "hyperclean"):
            config = load_experiment_config(name)
            assert {e.config.variant.value for e in config.solvers} == every_variant
        mog = [load_experiment_config(name) for name in bundled_config_names() if name.startswith("mog")]
        assert {c.problem["family"] for c in mog} == {"ring2d", "random2d", "grid2d", "cube3d"}
        assert {c.problem["loss"] for c in mog} == {"vanilla", "least_squares", "wasserstein"}

    def test_bundled_timing_defaults(self):
        for name in bundled_config_names():
            config = load_experiment_config(name)
            timed = name in ("toy_scaling", "hyperclean")
            assert config.record_timing == timed, name
            assert all(e.config.record_timing == timed for e in config.solvers)

    def test_yaml_infinity(self, tmp_path):
        path = tmp_path / "inf.yaml"
        path.write_text(
            "experiment: toy_convergence\n"
            "solvers:\n"
            "  - {variant: FastGR, stop_rel_tol: .inf}\n"
        )
        config = load_experiment_config(str(path))
        assert math.isinf(config.solvers[0].config.stop_rel_tol)


class TestTraceOutput:
    def test_trace_csv(self):
        trace = run_solver(
            toy_oracle(ToySpec()),
            SolverConfig(variant="FastGR", alpha=0.5, beta=0.1, outer_iters=3, record_timing=False),
            np.array([3.0]),
            np.array([3.0]),
        )
        lines = trace_csv_text(trace).splitlines()
        assert lines[0].startswith("iter,theta_rel_err,ol_rel_err")
        assert len(lines) == 4
        assert lines[1].split(",")[0] == "1"
        # no reference: relative errors are empty
        assert lines[1].split(",")[1] == ""

    def test_json_safe(self):
        assert json_safe({"a": float("inf"), "b": np.float64(1.5), "c": np.arange(2)}) == {
            "a": "inf",
            "b": 1.5,
            "c": [0, 1],
        }
        assert json.loads(dump_json_text({"x": float("nan")})) == {"x": "nan"}


class TestExperimentRunner:
    def test_outputs(self, tmp_path):
        out_dir = tmp_path / "toy"
        summary = ExperimentRunner(parse_experiment_config(_toy_config(out_dir))).run()
        assert os.path.exists(out_dir / "summary.json")
        assert os.path.exists(out_dir / "traces" / "FastGR__r0.csv")
        assert os.path.exists(out_dir / "traces" / "ADI__r0.csv")
        merged = (out_dir / "all_traces.csv").read_text().splitlines()
        assert merged[0].startswith("label,repeat,dim,iter")
        assert len(merged) == 1 + 2 * 100
        fast = summary["solvers"]["FastGR"]
        assert fast["status_counts"]["max_iters"] == 1
        assert fast["final_mean"]["theta_rel_err"] < summary["solvers"]["ADI"]["final_mean"]["theta_rel_err"]
        assert summary["references"]["default"]["discrepancy"] is True

    def test_convergence_plotdata(self, tmp_path):
        summary = ExperimentRunner(parse_experiment_config(_toy_config(tmp_path / "toy"))).run()
        lines = emit_plotdata(summary, "convergence").splitlines()
        assert lines[0] == ",".join(PLOT_COLUMNS)
        assert len(lines) == 1 + 200
        assert {line.split(",")[0] for line in lines[1:]} == {"FastGR", "ADI"}

    def test_scaling_cells(self, tmp_path):
        data = {
            "experiment": "toy_scaling",
            "repeats": 2,
            "output": {"dir": str(tmp_path / "scaling"), "record_timing": False},
            "problem": {"dims": [2, 4]},
            "solvers": [{"variant": "FastGR", "alpha": 0.5, "beta": 0.1, "outer_iters": 20}],
        }
        runner = ExperimentRunner(parse_experiment_config(data))
        assert len(runner.cells()) == 4
        summary = runner.run()
        assert [(s["label"], s["dim"]) for s in summary["scaling"]] == [("FastGR", 2), ("FastGR", 4)]
        rows = emit_plotdata(summary, "scaling").splitlines()
        assert len(rows) == 3
        assert {c["series"] for c in summary["curves"]} == {"FastGR@n=2", "FastGR@n=4"}

    def test_divergence_writes_error_record(self, tmp_path):
        out_dir = tmp_path / "diverge"
        data = _toy_config(out_dir, {"variant": "ADI", "alpha": 1.0e200, "beta": 0.1, "outer_iters": 5})
        with pytest.raises(ExperimentDivergedError) as e:
            ExperimentRunner(parse_experiment_config(data)).run()
        assert e.value.record["label"] == "ADI"
        record = json.loads((out_dir / "error.json").read_text())
        assert record["error"] == "solver_diverged"
        assert os.path.exists(out_dir / "summary.json")

    def test_allowed_divergence(self, tmp_path):
        out_dir = tmp_path / "allowed"
        data = _toy_config(
            out_dir, {"variant": "ADI", "alpha": 1.0e200, "beta": 0.1, "outer_iters": 5, "allow_diverge": True}
        )
        summary = ExperimentRunner(parse_experiment_config(data)).run()
        assert summary["solvers"]["ADI"]["status_counts"]["diverged"] == 1
        assert not os.path.exists(out_dir / "error.json")


class TestPlotData:
    def test_empty_summary(self):
        assert emit_plotdata({}, "convergence") == "series,x,y,y_err\n"
        assert emit_plotdata({}, "metric_bars") == "series,x,y,y_err\n"

    def test_unknown_kind(self):
        with pytest.raises(UnknownPlotKindError):
            emit_plotdata({}, "violin")

    def test_metric_bars(self):
        summary = {"solvers": {"FastGR": {"metrics_mean": {"f1": 0.5}, "metrics_std": {"f1": 0.0}}}}
        assert emit_plotdata(summary, "metric_bars").splitlines()[1] == "f1,FastGR,0.5,0.0"

    def test_missing_summary(self, tmp_path):
        with pytest.raises(ConfigurationError):
            load_summary(str(tmp_path / "nope.json"))


class TestCommandLine:
    def test_list(self, capsys):
        assert main(["list"]) == EXIT_OK
        out = capsys.readouterr().out
        assert "FastGR" in out
        assert "toy_convergence" in out

    def test_misspelled_key(self, tmp_path, capsys):
        path = _write_yaml(tmp_path / "bad.yaml", _toy_config(tmp_path / "out", {"variant": "FastGR", "aplha": 0.5}))
        assert main(["run", path]) == EXIT_CONFIGURATION
        assert "solvers[0].aplha" in capsys.readouterr().err

    def test_missing_config(self, tmp_path):
        assert main(["run", str(tmp_path / "missing.yaml")]) == EXIT_CONFIGURATION

    def test_bad_arguments(self):
        assert main([]) == EXIT_CONFIGURATION
        assert main(["plotdata", "summary.json", "--kind", "violin"]) == EXIT_CONFIGURATION

    def test_no_timing_outputs_are_byte_identical(self, tmp_path):
        out_dir = tmp_path / "det"
        path = _write_yaml(tmp_path / "toy.yaml", _toy_config(out_dir))
        names = ["summary.json", "all_traces.csv", os.path.join("traces", "FastGR__r0.csv")]
        assert main(["run", path, "--no-timing", "--quiet"]) == EXIT_OK
        first = {name: (out_dir / name).read_bytes() for name in names}
        assert main(["run", path, "--no-timing", "--quiet"]) == EXIT_OK
        second = {name: (out_dir / name).read_bytes() for name in names}
        assert first == second
        rows = (out_dir / "traces" / "FastGR__r0.csv").read_text().splitlines()[1:]
        assert all(row.split(",")[6] == "0.0" for row in rows)

    def test_timing_flags(self):
        parser = build_parser()
        assert parser.parse_args(["run", "toy_convergence"]).timing is None
        assert parser.parse_args(["run", "toy_convergence", "--timing"]).timing is True
        assert parser.parse_args(["run", "toy_convergence", "--no-timing"]).timing is False
        with pytest.raises(ConfigurationError):
            parser.parse_args(["run", "toy_convergence", "--timing", "--no-timing"])

    def test_solver_filter_and_plotdata(self, tmp_path, capsys):
        out_dir = tmp_path / "filtered"
        path = _write_yaml(tmp_path / "toy.yaml", _toy_config(out_dir))
        assert main(["run", path, "--solver", "FastGR", "--quiet"]) == EXIT_OK
        summary = load_summary(str(out_dir / "summary.json"))
        assert list(summary["solvers"]) == ["FastGR"]
        output = str(tmp_path / "curve.csv")
        summary_path = str(out_dir / "summary.json")
        assert main(["plotdata", summary_path, "--kind", "convergence", "--output", output]) == EXIT_OK
        with open(output) as infile:
            assert len(infile.read().splitlines()) == 101

    def test_divergence_exit_code(self, tmp_path, capsys):
        out_dir = tmp_path / "diverge"
        data = _toy_config(out_dir, {"variant": "ADI", "alpha": 1.0e200, "beta": 0.1, "outer_iters": 5})
        path = _write_yaml(tmp_path / "diverge.yaml", data)
        assert main(["run", path, "--quiet"]) == EXIT_DIVERGED
        assert os.path.exists(out_dir / "error.json")
        assert "solver_diverged" in capsys.readouterr().err
