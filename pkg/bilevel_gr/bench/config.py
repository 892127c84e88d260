# Copyright 2026, bilevel-gr authors. All rights reserved.

"""Experiment files: a YAML mapping validated key by key.

    experiment: toy_convergence
    seed: 0
    repeats: 1
    output: {dir: runs/toy, record_timing: true}
    problem: {n: 1, theta0: 3.0, omega0: 3.0}
    solvers:
      - {variant: FastGR, alpha: 0.5, beta: 0.1, outer_iters: 5000}
      - {variant: ADI, alpha: 0.5, beta: 0.1, outer_iters: 5000, allow_diverge: true}

Unknown keys at any level raise ConfigurationError naming the key path.
See docs/config.md for the full grammar.
"""

import copy
import os
import re
from dataclasses import dataclass, replace
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import yaml

from ..errors import ConfigurationError  # type:ignore
from ..solvers import SolverConfig  # type:ignore

EXPERIMENTS = ("toy_convergence", "toy_scaling", "mog", "hyperclean", "meta")
TOP_LEVEL_KEYS = ("experiment", "seed", "repeats", "output", "problem", "solvers", "workers")
OUTPUT_KEYS = ("dir", "record_timing")
SOLVER_ENTRY_KEYS = ("label", "allow_diverge")

PROBLEM_DEFAULTS: Dict[str, Dict[str, Any]] = {
    "toy_convergence": {"a": 2.0, "c": 2.0, "n": 1, "theta0": 3.0, "omega0": 3.0},
    "toy_scaling": {
        "a": 2.0,
        "c": 2.0,
        "dims": [100, 1000],
        "theta0": 3.0,
        "omega0": 3.0,
        "normalize_outer_rate": True,
    },
    "mog": {
        "family": "ring2d",
        "components": None,
        "variance": 0.02,
        "batch": 512,
        "radius": 2.0,
        "spacing": 2.0,
        "center_seed": 0,
        "loss": "vanilla",
        "noise_dim": 2,
        "hidden_width": 256,
        "hidden_layers": 2,
        "activation": "leaky_relu(0.2)",
        "ls_a": 0.0,
        "ls_b": 1.0,
        "ls_c": 1.0,
        "clip": 0.01,
        "eval_samples": 2500,
        "js_bins": 64,
        "capture_radius_sigmas": 3.0,
        "min_fraction": 0.01,
    },
    "hyperclean": {
        "n_train": 500,
        "n_val": 500,
        "n_test": 500,
        "classes": 5,
        "feature_dim": 20,
        "corruption_rate": 0.5,
        "eta": 0.0,
        "cl_l2": 1e-3,
        "separation": 4.0,
        "noise": 1.0,
        "f1_threshold": 0.5,
    },
    "meta": {
        "tasks": 4,
        "ways": 3,
        "shots": 5,
        "val_shots": 5,
        "input_dim": 8,
        "embed_dim": 4,
        "hidden": [16],
        "activation": "tanh",
        "head_l2": 1e-3,
        "separation": 2.0,
        "noise": 0.5,
    },
}

_LABEL_PATTERN = re.compile(r"^[A-Za-z0-9_.+-]+$")


@dataclass(frozen=True)
class SolverEntry:
    config: SolverConfig
    label: str
    allow_diverge: bool = False


@dataclass(frozen=True)
class ExperimentConfig:
    """A validated experiment.
    Attributes:
        problem: the experiment's problem block merged over its defaults
        solvers: entries in file order; labels are unique
        workers: requested pool size (BILEVEL_GR_THREADS caps it)
        source: the file the config was read from, if any
    """

    experiment: str
    seed: int
    repeats: int
    output_dir: str
    record_timing: bool
    problem: Dict[str, Any]
    solvers: Tuple[SolverEntry, ...]
    workers: Optional[int] = None
    source: Optional[str] = None

    def with_overrides(
        self,
        *,
        seed: Optional[int] = None,
        output_dir: Optional[str] = None,
        solver_labels: Optional[Sequence[str]] = None,
        record_timing: Optional[bool] = None,
        workers: Optional[int] = None,
    ) -> "ExperimentConfig":
        """Applies command-line overrides. solver_labels keeps entries whose
        label or variant name matches, in file order."""
        changes: Dict[str, Any] = {}
        if seed is not None:
            changes["seed"] = int(seed)
        if output_dir is not None:
            changes["output_dir"] = output_dir
        if workers is not None:
            changes["workers"] = int(workers)
        solvers = self.solvers
        if solver_labels:
            wanted = {s.lower() for s in solver_labels}
            solvers = tuple(
                e for e in solvers if e.label.lower() in wanted or e.config.variant.value.lower() in wanted
            )
            if len(solvers) == 0:
                raise ConfigurationError(
                    f"--solver {list(solver_labels)} matches none of {[e.label for e in self.solvers]}",
                    key="solvers",
                )
        if record_timing is not None:
            changes["record_timing"] = bool(record_timing)
            solvers = tuple(replace(e, config=replace(e.config, record_timing=bool(record_timing))) for e in solvers)
        changes["solvers"] = solvers
        return replace(self, **changes)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "experiment": self.experiment,
            "seed": self.seed,
            "repeats": self.repeats,
            "output": {"dir": self.output_dir, "record_timing": self.record_timing},
            "problem": copy.deepcopy(self.problem),
            "solvers": [
                dict(e.config.to_dict(), label=e.label, allow_diverge=e.allow_diverge) for e in self.solvers
            ],
            "workers": self.workers,
        }


def _check_keys(block: Any, allowed: Sequence[str], path: str) -> Mapping[str, Any]:
    if not isinstance(block, Mapping):
        raise ConfigurationError(f"Expected a mapping, got {type(block).__name__}", key=path)
    for key in block:
        if key not in allowed:
            raise ConfigurationError(f"Unknown key {key!r}", key=f"{path}.{key}" if path else str(key))
    return block


def _as_int(value: Any, key: str, minimum: int) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigurationError(f"Expected an integer, got {value!r}", key=key)
    if value < minimum:
        raise ConfigurationError(f"Must be >= {minimum}, got {value}", key=key)
    return value


def _parse_solver(entry: Any, index: int, record_timing: bool) -> SolverEntry:
    path = f"solvers[{index}]"
    allowed = list(SolverConfig.field_names()) + list(SOLVER_ENTRY_KEYS)
    block = dict(_check_keys(entry, allowed, path))
    label = block.pop("label", None)
    allow_diverge = block.pop("allow_diverge", False)
    if not isinstance(allow_diverge, bool):
        raise ConfigurationError(f"Expected true or false, got {allow_diverge!r}", key=f"{path}.allow_diverge")
    block.setdefault("record_timing", record_timing)
    config = SolverConfig.from_mapping(block, key_prefix=path)
    label = config.variant.value if label is None else str(label)
    if not _LABEL_PATTERN.match(label):
        raise ConfigurationError(
            f"Labels may only use letters, digits and _.+-, got {label!r}", key=f"{path}.label"
        )
    return SolverEntry(config=config, label=label, allow_diverge=allow_diverge)


def _parse_problem(experiment: str, block: Any) -> Dict[str, Any]:
    defaults = PROBLEM_DEFAULTS[experiment]
    block = _check_keys({} if block is None else block, list(defaults), "problem")
    problem = copy.deepcopy(defaults)
    problem.update(copy.deepcopy(dict(block)))
    if experiment == "toy_scaling":
        dims = problem["dims"]
        if not isinstance(dims, list) or len(dims) == 0:
            raise ConfigurationError("Expected a non-empty list of dimensions", key="problem.dims")
        problem["dims"] = [_as_int(n, f"problem.dims[{i}]", 1) for i, n in enumerate(dims)]
    if experiment == "toy_convergence":
        problem["n"] = _as_int(problem["n"], "problem.n", 1)
    if experiment == "meta" and not isinstance(problem["hidden"], list):
        raise ConfigurationError("Expected a list of hidden widths", key="problem.hidden")
    return problem


def parse_experiment_config(data: Any, source: Optional[str] = None) -> ExperimentConfig:
    """Validates a parsed YAML document.
    Raises:
        ConfigurationError: naming the first offending key path.
    """
    data = _check_keys(data, TOP_LEVEL_KEYS, "")
    experiment = data.get("experiment")
    if experiment not in EXPERIMENTS:
        raise ConfigurationError(f"experiment must be one of {EXPERIMENTS}, got {experiment!r}", key="experiment")
    seed = _as_int(data.get("seed", 0), "seed", 0)
    repeats = _as_int(data.get("repeats", 1), "repeats", 1)
    output = _check_keys(data.get("output", {}) or {}, OUTPUT_KEYS, "output")
    output_dir = str(output.get("dir", os.path.join("runs", experiment)))
    record_timing = output.get("record_timing", True)
    if not isinstance(record_timing, bool):
        raise ConfigurationError(f"Expected true or false, got {record_timing!r}", key="output.record_timing")
    workers = data.get("workers")
    if workers is not None:
        workers = _as_int(workers, "workers", 1)
    problem = _parse_problem(experiment, data.get("problem"))

    entries = data.get("solvers")
    if not isinstance(entries, list) or len(entries) == 0:
        raise ConfigurationError("At least one solver is required", key="solvers")
    solvers: List[SolverEntry] = []
    for index, entry in enumerate(entries):
        parsed = _parse_solver(entry, index, record_timing)
        if any(s.label == parsed.label for s in solvers):
            raise ConfigurationError(f"Duplicate solver label {parsed.label!r}", key=f"solvers[{index}].label")
        solvers.append(parsed)
    return ExperimentConfig(
        experiment=experiment,
        seed=seed,
        repeats=repeats,
        output_dir=output_dir,
        record_timing=record_timing,
        problem=problem,
        solvers=tuple(solvers),
        workers=workers,
        source=source,
    )


def bundled_config_dir() -> str:
    return os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "configs")


def bundled_config_names() -> List[str]:
    directory = bundled_config_dir()
    if not os.path.isdir(directory):
        return []
    return sorted(name[: -len(".yaml")] for name in os.listdir(directory) if name.endswith(".yaml"))


def resolve_config_path(name_or_path: str) -> str:
    """A path as given, or the name of a bundled config (e.g. 'toy_convergence')."""
    if os.path.exists(name_or_path):
        return name_or_path
    bundled = os.path.join(bundled_config_dir(), f"{name_or_path}.yaml")
    if os.path.exists(bundled):
        return bundled
    raise ConfigurationError(f"No such config file or bundled config: {name_or_path}")


def load_experiment_config(name_or_path: str) -> ExperimentConfig:
    path = resolve_config_path(name_or_path)
    with open(path, "r", encoding="utf-8") as infile:
        try:
            data = yaml.safe_load(infile)
        except yaml.YAMLError as e:
            raise ConfigurationError(f"{path} is not valid YAML: {e}")
    return parse_experiment_config(data, source=path)
