# Copyright 2026, bilevel-gr authors. All rights reserved.

"""Command line entry point.

    bilevel-gr run <config> [--seed N] [--out-dir DIR] [--solver LABEL]... [--timing | --no-timing] [--workers N]
    bilevel-gr selftest
    bilevel-gr list
    bilevel-gr plotdata <summary.json> --kind {convergence,scaling,metric_bars} [--output FILE]

Exit codes: 0 success, 1 configuration error, 2 a mandatory run diverged,
3 self-test failure.
"""

import argparse
import json
import logging
import sys
from typing import List, Optional

from ..errors import BilevelError, ConfigurationError, ExperimentDivergedError, SelfTestFailedError  # type:ignore
from ..problems.gan import GAN_LOSSES  # type:ignore
from ..problems.mog import MOG_FAMILIES  # type:ignore
from ..selftest import run_selftest  # type:ignore
from ..solvers import SolverVariant  # type:ignore
from ..version import __version__  # type:ignore
from .config import EXPERIMENTS, bundled_config_names, load_experiment_config  # type:ignore
from .plotdata import PLOT_KINDS, emit_plotdata, load_summary  # type:ignore
from .runner import ExperimentRunner  # type:ignore

EXIT_OK = 0
EXIT_CONFIGURATION = 1
EXIT_DIVERGED = 2
EXIT_SELFTEST = 3

_logger = logging.getLogger(__name__)


class _ArgumentParser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigurationError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    common = _ArgumentParser(add_help=False)
    verbosity = common.add_mutually_exclusive_group()
    verbosity.add_argument("--quiet", action="store_true", help="Only log warnings and errors")
    verbosity.add_argument("--verbose", action="store_true", help="Log debug output")

    parser = _ArgumentParser(prog="bilevel-gr", description="Bilevel hypergradient benchmarks")
    parser.add_argument("--version", action="version", version=f"bilevel-gr {__version__}")
    commands = parser.add_subparsers(dest="command", parser_class=_ArgumentParser)

    run = commands.add_parser("run", parents=[common], help="Run an experiment config")
    run.add_argument("config", help="Path to a YAML config, or the name of a bundled config")
    run.add_argument("--seed", type=int, help="Override the config seed")
    run.add_argument("--out-dir", help="Override output.dir")
    run.add_argument(
        "--solver", action="append", default=[], help="Only run solvers with this label or variant (repeatable)"
    )
    timing = run.add_mutually_exclusive_group()
    timing.add_argument(
        "--timing", dest="timing", action="store_const", const=True, help="Record wall times (overrides the config)"
    )
    timing.add_argument(
        "--no-timing",
        dest="timing",
        action="store_const",
        const=False,
        help="Write zero wall times (byte-identical outputs)",
    )
    run.add_argument("--workers", type=int, help="Worker threads (BILEVEL_GR_THREADS caps this)")

    commands.add_parser("selftest", parents=[common], help="Run every built-in gradient and metric check")
    commands.add_parser("list", parents=[common], help="List experiments, solvers, problems and bundled configs")

    plot = commands.add_parser("plotdata", parents=[common], help="Turn summary.json into long-format plot CSV")
    plot.add_argument("summary", help="Path to summary.json")
    plot.add_argument("--kind", required=True, choices=PLOT_KINDS)
    plot.add_argument("--output", help="Write here instead of stdout")
    return parser


def _configure_logging(quiet: bool, verbose: bool) -> None:
    level = logging.DEBUG if verbose else (logging.WARNING if quiet else logging.INFO)
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")


def _run(args) -> int:
    config = load_experiment_config(args.config).with_overrides(
        seed=args.seed,
        output_dir=args.out_dir,
        solver_labels=args.solver,
        record_timing=args.timing,
        workers=args.workers,
    )
    summary = ExperimentRunner(config).run()
    for label, block in summary["solvers"].items():
        statuses = ", ".join(f"{k}={v}" for k, v in block["status_counts"].items() if v)
        print(f"{label}: {statuses}; final {json.dumps(block['final_mean'], sort_keys=True)}")
    print(f"Wrote {config.output_dir}/summary.json")
    return EXIT_OK


def _selftest(args) -> int:
    report = run_selftest()
    print(report)
    report.validate()
    return EXIT_OK


def _list(args) -> int:
    print("experiments: " + ", ".join(EXPERIMENTS))
    print("solvers:     " + ", ".join(v.value for v in SolverVariant))
    print("mog families: " + ", ".join(MOG_FAMILIES))
    print("gan losses:  " + ", ".join(GAN_LOSSES))
    print("bundled configs: " + ", ".join(bundled_config_names()))
    return EXIT_OK


def _plotdata(args) -> int:
    text = emit_plotdata(load_summary(args.summary), args.kind, output=args.output)
    if args.output is None:
        sys.stdout.write(text)
    return EXIT_OK


_COMMANDS = {"run": _run, "selftest": _selftest, "list": _list, "plotdata": _plotdata}


def main(argv: Optional[List[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if args.command is None:
            raise ConfigurationError("a command is required: run, selftest, list or plotdata")
        _configure_logging(args.quiet, args.verbose)
        return _COMMANDS[args.command](args)
    except ConfigurationError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIGURATION
    except ExperimentDivergedError as e:
        print(f"error: {e}\n{json.dumps(e.record, sort_keys=True)}", file=sys.stderr)
        return EXIT_DIVERGED
    except SelfTestFailedError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_SELFTEST
    except BilevelError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIGURATION
