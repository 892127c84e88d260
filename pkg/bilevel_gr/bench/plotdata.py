# Copyright 2026, bilevel-gr authors. All rights reserved.

"""Long-format CSV (series,x,y,y_err) built from summary.json for external plotting tools."""

import csv
import io
import json
from typing import Any, Dict, Iterator, List, Optional

from ..errors import ConfigurationError, UnknownPlotKindError  # type:ignore
from ..internal_utils import format_float, write_text_atomically  # type:ignore

PLOT_KINDS = ("convergence", "scaling", "metric_bars")
PLOT_COLUMNS = ("series", "x", "y", "y_err")


def _number(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, int) and not isinstance(value, bool):
        return str(value)
    if isinstance(value, str):
        # non-finite floats are stored as strings in summary.json
        return value
    return format_float(value)


def _convergence_rows(summary: Dict[str, Any]) -> Iterator[List[str]]:
    for curve in summary.get("curves", []):
        for x, y, y_err in zip(curve["x"], curve["y"], curve["y_err"]):
            yield [curve["series"], _number(x), _number(y), _number(y_err)]


def _scaling_rows(summary: Dict[str, Any]) -> Iterator[List[str]]:
    for entry in summary.get("scaling", []):
        yield [entry["label"], _number(entry["dim"]), _number(entry["wall_s_mean"]), _number(entry["wall_s_std"])]


def _metric_bar_rows(summary: Dict[str, Any]) -> Iterator[List[str]]:
    for label, block in summary.get("solvers", {}).items():
        for metric in sorted(block.get("metrics_mean", {})):
            yield [metric, label, _number(block["metrics_mean"][metric]), _number(block["metrics_std"].get(metric))]


_ROW_BUILDERS = {
    "convergence": _convergence_rows,
    "scaling": _scaling_rows,
    "metric_bars": _metric_bar_rows,
}


def emit_plotdata(summary: Dict[str, Any], kind: str, output: Optional[str] = None) -> str:
    """Builds the CSV text and writes it to output when given.
    Args:
        summary: the parsed summary.json; an empty dict gives a header-only file
        kind: convergence (series = label, or label@n=dim; x = iteration),
            scaling (series = label, x = dim, y = wall seconds, y_err = std over repeats)
            or metric_bars (series = metric, x = label)
    Raises:
        UnknownPlotKindError: kind is not one of PLOT_KINDS.
    """
    if kind not in _ROW_BUILDERS:
        raise UnknownPlotKindError(f"Unknown plot kind {kind!r}; expected one of {PLOT_KINDS}")
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(PLOT_COLUMNS)
    writer.writerows(_ROW_BUILDERS[kind](summary))
    text = buffer.getvalue()
    if output is not None:
        write_text_atomically(output, text)
    return text


def load_summary(path: str) -> Dict[str, Any]:
    try:
        with open(path, "r", encoding="utf-8") as infile:
            return json.load(infile)
    except FileNotFoundError:
        raise ConfigurationError(f"No such summary file: {path}")
    except json.JSONDecodeError as e:
        raise ConfigurationError(f"{path} is not valid JSON: {e}")
