# Copyright 2026, bilevel-gr authors. All rights reserved.

"""Runs the repeats x solvers (x dims) matrix of an experiment and writes
per-cell CSV traces, a merged CSV and summary.json."""

import csv
import io
import json
import logging
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from logging import Logger
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np

from ..buffer_tracking import BufferTracker  # type:ignore
from ..core import BilevelOracle  # type:ignore
from ..env_support import resolve_worker_count  # type:ignore
from ..errors import ExperimentDivergedError  # type:ignore
from ..internal_utils import (
    broadcast_vector,
    derive_seed,
    format_float,
    get_run_fingerprint,
    write_text_atomically,
)  # type:ignore
from ..metrics import (
    MetricReport,
    default_js_grid,
    f1_corruption,
    fid_gaussian,
    js_histogram,
    mode_count,
)  # type:ignore
from ..problems.gan import GANProblemSpec, gan_oracle, generate_samples, initial_point  # type:ignore
from ..problems.hyperclean import HyperCleanSpec, hyperclean_oracle  # type:ignore
from ..problems.meta import MetaTaskSpec, meta_oracle  # type:ignore
from ..problems.mog import MOGSpec, mog_sampler  # type:ignore
from ..problems.toy import ToyReference, ToySpec, toy_oracle, toy_reference  # type:ignore
from ..solvers import SolverTrace, TraceStatus, run_solver  # type:ignore
from .config import ExperimentConfig, SolverEntry  # type:ignore

TRACE_COLUMNS = (
    "iter",
    "theta_rel_err",
    "ol_rel_err",
    "ol_value",
    "cl_value",
    "grad_norm_theta",
    "wall_ms",
    "grad_evals",
    "hvp_evals",
    "peak_bytes",
)
MERGED_PREFIX_COLUMNS = ("label", "repeat", "dim")
FINAL_FIELDS = (
    "theta_rel_err",
    "ol_rel_err",
    "ol_value",
    "cl_value",
    "wall_ms",
    "grad_evals",
    "hvp_evals",
    "peak_bytes",
)

_logger = logging.getLogger(__name__)


def _csv_cell(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, (int, np.integer)) and not isinstance(value, bool):
        return str(int(value))
    return format_float(value)


def trace_rows(trace: SolverTrace) -> List[List[str]]:
    return [
        [
            _csv_cell(r.iteration),
            _csv_cell(r.theta_rel_err),
            _csv_cell(r.ol_rel_err),
            _csv_cell(r.ol_value),
            _csv_cell(r.cl_value),
            _csv_cell(r.grad_norm_theta),
            _csv_cell(r.wall_ms),
            _csv_cell(r.grad_eval_count),
            _csv_cell(r.hvp_eval_count),
            _csv_cell(r.peak_tracked_bytes),
        ]
        for r in trace.records
    ]


def _rows_to_text(header, rows) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buffer.getvalue()


def trace_csv_text(trace: SolverTrace) -> str:
    """One row per outer iteration (1..K) under TRACE_COLUMNS; floats are
    written so they parse back to the same double; missing values are empty."""
    return _rows_to_text(TRACE_COLUMNS, trace_rows(trace))


def json_safe(value: Any) -> Any:
    """Converts numpy scalars / arrays and non-finite floats ('inf', 'nan') for strict JSON."""
    if isinstance(value, dict):
        return {str(k): json_safe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [json_safe(v) for v in value]
    if isinstance(value, np.ndarray):
        return json_safe(value.tolist())
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if math.isfinite(value):
            return value
        return "nan" if math.isnan(value) else ("inf" if value > 0 else "-inf")
    return value


def dump_json_text(data: Any) -> str:
    return json.dumps(json_safe(data), indent=2, sort_keys=True, allow_nan=False) + "\n"


@dataclass(frozen=True)
class Cell:
    label: str
    repeat: int
    dim: Optional[int]
    entry: SolverEntry

    @property
    def name(self) -> str:
        if self.dim is None:
            return f"{self.label}__r{self.repeat}"
        return f"{self.label}__n{self.dim}__r{self.repeat}"

    @property
    def series(self) -> str:
        return self.label if self.dim is None else f"{self.label}@n={self.dim}"


class ProblemInstance:
    """Everything a cell needs besides the solver settings.
    Attributes:
        evaluate: final (theta, omega) -> metric reports (empty for toy problems)
        beta_scale: multiplies the configured outer rate
    """

    def __init__(
        self,
        *,
        oracle: BilevelOracle,
        theta0: np.ndarray,
        omega0: np.ndarray,
        reference: Optional[ToyReference] = None,
        evaluate: Optional[Callable[[np.ndarray, np.ndarray], Dict[str, MetricReport]]] = None,
        beta_scale: float = 1.0,
    ):
        self.oracle = oracle
        self.theta0 = theta0
        self.omega0 = omega0
        self.reference = reference
        self.evaluate = evaluate
        self.beta_scale = beta_scale


def build_problem_instance(
    experiment: str,
    problem: Dict[str, Any],
    seed: int,
    dim: Optional[int] = None,
    reference: Optional[ToyReference] = None,
) -> ProblemInstance:
    """Instantiates the problem for one (repeat seed, dim) cell. All solvers of
    a repeat receive the same instance."""
    if experiment in ("toy_convergence", "toy_scaling"):
        n = problem["n"] if dim is None else dim
        spec = ToySpec(a=problem["a"], c=problem["c"], n=n)
        scale = 1.0 / (1.0 + n) if problem.get("normalize_outer_rate") else 1.0
        return ProblemInstance(
            oracle=toy_oracle(spec),
            theta0=broadcast_vector(problem["theta0"], 1, name="problem.theta0"),
            omega0=broadcast_vector(problem["omega0"], n, name="problem.omega0"),
            reference=reference if reference is not None else toy_reference(spec),
            beta_scale=scale,
        )

    if experiment == "mog":
        mog = MOGSpec(
            family=problem["family"],
            components=problem["components"],
            variance=problem["variance"],
            batch=problem["batch"],
            radius=problem["radius"],
            spacing=problem["spacing"],
            center_seed=problem["center_seed"],
        )
        spec = GANProblemSpec(
            mog=mog,
            loss=problem["loss"],
            noise_dim=problem["noise_dim"],
            hidden_width=problem["hidden_width"],
            hidden_layers=problem["hidden_layers"],
            activation=problem["activation"],
            ls_a=problem["ls_a"],
            ls_b=problem["ls_b"],
            ls_c=problem["ls_c"],
            clip=problem["clip"],
            seed=seed,
        )
        theta0, omega0 = initial_point(spec, derive_seed(seed, 2))

        def evaluate_gan(theta, omega):
            count = problem["eval_samples"]
            generated = generate_samples(spec, theta, count, derive_seed(seed, 7))
            real, centers = mog_sampler(mog, derive_seed(seed, 8), batch=count)
            return {
                "modes": mode_count(
                    generated,
                    centers,
                    mog.sigma,
                    capture_radius_sigmas=problem["capture_radius_sigmas"],
                    min_fraction=problem["min_fraction"],
                ),
                "js": js_histogram(real, generated, default_js_grid(centers, mog.sigma, problem["js_bins"])),
                "fid": fid_gaussian(real, generated),
            }

        return ProblemInstance(oracle=gan_oracle(spec), theta0=theta0, omega0=omega0, evaluate=evaluate_gan)

    if experiment == "hyperclean":
        settings = {k: v for k, v in problem.items() if k != "f1_threshold"}
        instance = hyperclean_oracle(HyperCleanSpec(seed=seed, **settings))
        theta0, omega0 = instance.initial_point()

        def evaluate_hyperclean(theta, omega):
            test_accuracy = instance.test_accuracy(omega)
            return {
                "f1": f1_corruption(theta, instance.truth_mask, problem["f1_threshold"]),
                "test_accuracy": MetricReport(
                    name="test_accuracy",
                    value=test_accuracy,
                    sample_sizes={"test": instance.spec.n_test},
                ),
            }

        return ProblemInstance(oracle=instance.oracle, theta0=theta0, omega0=omega0, evaluate=evaluate_hyperclean)

    if experiment == "meta":
        settings = dict(problem)
        settings["hidden"] = tuple(settings["hidden"])
        instance = meta_oracle(MetaTaskSpec(seed=seed, **settings))
        theta0, omega0 = instance.initial_point(derive_seed(seed, 2))

        def evaluate_meta(theta, omega):
            return {
                "val_accuracy": MetricReport(
                    name="val_accuracy",
                    value=instance.val_accuracy(theta, omega),
                    sample_sizes={"tasks": len(instance.tasks)},
                )
            }

        return ProblemInstance(oracle=instance.oracle, theta0=theta0, omega0=omega0, evaluate=evaluate_meta)

    raise ValueError(f"Unknown experiment {experiment!r}")


class CellResult:
    def __init__(
        self,
        *,
        cell: Cell,
        trace: SolverTrace,
        metrics: Dict[str, MetricReport],
        csv_path: str,
    ):
        self.cell = cell
        self.trace = trace
        self.metrics = metrics
        self.csv_path = csv_path

    @property
    def mandatory_failure(self) -> bool:
        return self.trace.status == TraceStatus.DIVERGED and not self.cell.entry.allow_diverge

    def final_values(self) -> Dict[str, Any]:
        final = self.trace.final
        if final is None:
            return {name: None for name in FINAL_FIELDS}
        return {
            "theta_rel_err": final.theta_rel_err,
            "ol_rel_err": final.ol_rel_err,
            "ol_value": final.ol_value,
            "cl_value": final.cl_value,
            "wall_ms": final.wall_ms,
            "grad_evals": final.grad_eval_count,
            "hvp_evals": final.hvp_eval_count,
            "peak_bytes": final.peak_tracked_bytes,
        }

    def to_dict(self, out_dir: str) -> Dict[str, Any]:
        initial = self.trace.initial
        return {
            "label": self.cell.label,
            "variant": self.cell.entry.config.variant.value,
            "repeat": self.cell.repeat,
            "dim": self.cell.dim,
            "status": self.trace.status.value,
            "iterations": self.trace.iterations,
            "stop_iteration": self.trace.stop_iteration,
            "initial": None
            if initial is None
            else {"theta_rel_err": initial.theta_rel_err, "ol_value": initial.ol_value, "cl_value": initial.cl_value},
            "final": self.final_values(),
            "metrics": {name: report.to_dict() for name, report in self.metrics.items()},
            "flags": dict(self.trace.flags),
            "message": self.trace.message,
            "csv": os.path.relpath(self.csv_path, out_dir),
        }


def _mean_std(values: List[Optional[float]]) -> Tuple[Optional[float], Optional[float]]:
    present = [float(v) for v in values if v is not None]
    if len(present) == 0:
        return None, None
    return float(np.mean(present)), float(np.std(present))


def _curve(results: List[CellResult], series: str) -> Optional[Dict[str, Any]]:
    traces = [r.trace for r in results if r.trace.iterations > 0]
    if len(traces) == 0:
        return None
    length = min(t.iterations for t in traces)
    metric = "theta_rel_err" if traces[0].records[0].theta_rel_err is not None else "ol_value"
    values = np.array([[getattr(rec, metric) for rec in t.records[:length]] for t in traces], dtype=np.float64)
    return {
        "series": series,
        "label": results[0].cell.label,
        "dim": results[0].cell.dim,
        "metric": metric,
        "x": [rec.iteration for rec in traces[0].records[:length]],
        "y": values.mean(axis=0).tolist(),
        "y_err": values.std(axis=0).tolist(),
    }


def summarize(
    config: ExperimentConfig,
    results: List[CellResult],
    out_dir: str,
    references: Dict[Any, Any],
) -> Dict[str, Any]:
    """Per-solver mean / std (population) of final values and metrics, status
    counts, mean convergence curves and, for scaling runs, wall time per dim."""
    solvers: Dict[str, Any] = {}
    curves: List[Dict[str, Any]] = []
    scaling: List[Dict[str, Any]] = []
    for entry in config.solvers:
        mine = [r for r in results if r.cell.label == entry.label]
        status_counts = {status.value: 0 for status in TraceStatus}
        for r in mine:
            status_counts[r.trace.status.value] += 1
        finals = [r.final_values() for r in mine]
        final_mean, final_std = {}, {}
        for name in FINAL_FIELDS:
            final_mean[name], final_std[name] = _mean_std([f[name] for f in finals])
        metric_names = sorted({name for r in mine for name in r.metrics})
        metrics_mean, metrics_std = {}, {}
        for name in metric_names:
            metrics_mean[name], metrics_std[name] = _mean_std(
                [r.metrics[name].value if name in r.metrics else None for r in mine]
            )
        stops = [r.trace.stop_iteration for r in mine]
        solvers[entry.label] = {
            "variant": entry.config.variant.value,
            "allow_diverge": entry.allow_diverge,
            "config": entry.config.to_dict(),
            "runs": len(mine),
            "status_counts": status_counts,
            "final_mean": final_mean,
            "final_std": final_std,
            "metrics_mean": metrics_mean,
            "metrics_std": metrics_std,
            "stop_iteration_mean": _mean_std(stops)[0],
        }
        dims = sorted({r.cell.dim for r in mine if r.cell.dim is not None})
        for dim in dims if dims else [None]:
            group = [r for r in mine if r.cell.dim == dim]
            curve = _curve(group, group[0].cell.series) if group else None
            if curve is not None:
                curves.append(curve)
            if dim is not None:
                walls = [r.final_values()["wall_ms"] for r in group]
                wall_s = [None if w is None else w / 1000.0 for w in walls]
                mean, std = _mean_std(wall_s)
                scaling.append(
                    {
                        "label": entry.label,
                        "variant": entry.config.variant.value,
                        "dim": dim,
                        "wall_s_mean": mean,
                        "wall_s_std": std,
                        "iterations_mean": _mean_std([float(r.trace.iterations) for r in group])[0],
                        "grad_evals_mean": _mean_std([r.final_values()["grad_evals"] for r in group])[0],
                        "hvp_evals_mean": _mean_std([r.final_values()["hvp_evals"] for r in group])[0],
                    }
                )
    summary = {
        "experiment": config.experiment,
        "seed": config.seed,
        "repeats": config.repeats,
        "fingerprint": get_run_fingerprint(),
        "config": config.to_dict(),
        "runs": [r.to_dict(out_dir) for r in results],
        "solvers": solvers,
        "curves": curves,
    }
    if references:
        summary["references"] = {("default" if k is None else f"n={k}"): v.to_dict() for k, v in references.items()}
    if scaling:
        summary["scaling"] = scaling
    return summary


class ExperimentRunner:
    """Runs one ExperimentConfig.

    Cells are independent and run on a thread pool (BILEVEL_GR_THREADS caps
    its size). Every cell writes its own CSV atomically; the merged CSV and
    summary.json are written afterwards in config order, so outputs do not
    depend on scheduling.
    """

    config: ExperimentConfig
    logger: Logger
    clock: Optional[Callable[[], float]]

    def __init__(
        self,
        config: ExperimentConfig,
        *,
        logger: Optional[Logger] = None,
        clock: Optional[Callable[[], float]] = None,
    ):
        self.config = config
        self.logger = logger if logger is not None else _logger
        self.clock = clock

    @property
    def out_dir(self) -> str:
        return self.config.output_dir

    def cells(self) -> List[Cell]:
        dims = self.config.problem["dims"] if self.config.experiment == "toy_scaling" else [None]
        return [
            Cell(label=entry.label, repeat=repeat, dim=dim, entry=entry)
            for repeat in range(self.config.repeats)
            for dim in dims
            for entry in self.config.solvers
        ]

    def _references(self) -> Dict[Optional[int], ToyReference]:
        # toy optima do not depend on the seed; compute once per dimension
        problem = self.config.problem
        if self.config.experiment == "toy_convergence":
            return {None: toy_reference(ToySpec(a=problem["a"], c=problem["c"], n=problem["n"]))}
        if self.config.experiment == "toy_scaling":
            return {n: toy_reference(ToySpec(a=problem["a"], c=problem["c"], n=n)) for n in problem["dims"]}
        return {}

    def run_cell(self, cell: Cell, references: Dict[Optional[int], ToyReference]) -> CellResult:
        seed = derive_seed(self.config.seed, cell.repeat)
        instance = build_problem_instance(
            self.config.experiment, self.config.problem, seed, dim=cell.dim, reference=references.get(cell.dim)
        )
        solver_config = cell.entry.config
        if instance.beta_scale != 1.0:
            solver_config = replace(solver_config, beta=solver_config.beta * instance.beta_scale)
        tracker = BufferTracker(label=cell.name)
        started = time.perf_counter()
        trace = run_solver(
            instance.oracle,
            solver_config,
            instance.theta0,
            instance.omega0,
            instance.reference,
            logger=self.logger,
            clock=self.clock,
            tracker=tracker,
        )
        metrics: Dict[str, MetricReport] = {}
        if trace.status != TraceStatus.DIVERGED and instance.evaluate is not None:
            metrics = instance.evaluate(trace.theta, trace.omega)
        csv_path = os.path.join(self.out_dir, "traces", f"{cell.name}.csv")
        write_text_atomically(csv_path, trace_csv_text(trace))
        if self.logger.isEnabledFor(logging.DEBUG):
            values = {name: report.value for name, report in metrics.items()}
            self.logger.debug(f"cell {cell.name}: {trace} in {time.perf_counter() - started:.3f}s, metrics={values}")
        return CellResult(cell=cell, trace=trace, metrics=metrics, csv_path=csv_path)

    def run(self) -> Dict[str, Any]:
        """Runs every cell and writes the artifacts.
        Returns:
            The summary dict (also written to <out_dir>/summary.json).
        Raises:
            ExperimentDivergedError: a cell without allow_diverge diverged;
                <out_dir>/error.json holds the same record.
        """
        cells = self.cells()
        references = self._references()
        stale_error = os.path.join(self.out_dir, "error.json")
        if os.path.exists(stale_error):
            os.remove(stale_error)
        workers = min(resolve_worker_count(self.config.workers, logger=self.logger), len(cells))
        self.logger.info(
            f"Running {self.config.experiment}: {len(cells)} cells on {workers} worker(s), output in {self.out_dir}"
        )
        if workers <= 1:
            results = [self.run_cell(cell, references) for cell in cells]
        else:
            with ThreadPoolExecutor(max_workers=workers) as executor:
                futures = [executor.submit(self.run_cell, cell, references) for cell in cells]
                results = [f.result() for f in futures]

        merged_rows = []
        for result in results:
            dim = "" if result.cell.dim is None else str(result.cell.dim)
            prefix = [result.cell.label, str(result.cell.repeat), dim]
            merged_rows.extend(prefix + row for row in trace_rows(result.trace))
        write_text_atomically(
            os.path.join(self.out_dir, "all_traces.csv"),
            _rows_to_text(MERGED_PREFIX_COLUMNS + TRACE_COLUMNS, merged_rows),
        )
        summary = summarize(self.config, results, self.out_dir, references)
        write_text_atomically(os.path.join(self.out_dir, "summary.json"), dump_json_text(summary))

        failures = [r for r in results if r.mandatory_failure]
        if failures:
            first = failures[0]
            record = {
                "error": "solver_diverged",
                "experiment": self.config.experiment,
                "label": first.cell.label,
                "variant": first.cell.entry.config.variant.value,
                "repeat": first.cell.repeat,
                "dim": first.cell.dim,
                "message": first.trace.message,
                "diverged_cells": [r.cell.name for r in failures],
            }
            write_text_atomically(os.path.join(self.out_dir, "error.json"), dump_json_text(record))
            self.logger.error(
                f"{len(failures)} mandatory run(s) diverged, first: {first.cell.name}: {first.trace.message}"
            )
            raise ExperimentDivergedError(f"{first.cell.name} diverged: {first.trace.message}", record=record)
        return summary


def run_experiment(
    config: ExperimentConfig,
    *,
    logger: Optional[Logger] = None,
    clock: Optional[Callable[[], float]] = None,
) -> Dict[str, Any]:
    return ExperimentRunner(config, logger=logger, clock=clock).run()
