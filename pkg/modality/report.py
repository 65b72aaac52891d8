"""
This Source Code Form is subject to the terms of the Mozilla Public
License, v. 2.0. If a copy of the MPL was not distributed with this
file, You can obtain one at http://mozilla.org/MPL/2.0/.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Tuple

import numpy as np
import pandas as pd

from utils.formats import TabularData, estimate_cell, plural

from .estimation import FitResult, ThreeStepResult
from .selection import FitStatistics

log = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"
REPORT_NAME = "report.json"
ESTIMATES_NAME = "estimates.txt"
STATISTICS_NAME = "statistics.csv"

SEQUENTIAL_NOTE = (
    "Step-3 standard errors treat the household and mode parameters as known "
    "and understate the true sampling error."
)

_NAME = re.compile(r"^(?P<block>alpha|beta|gamma|lambda)(?P<index>(?:\[[^\]]+\])+)\.(?P<term>.+)$")


class ReportError(Exception):
    pass


def _plain(value: Any) -> Any:
    """JSON-ready copy: numpy scalars and arrays unwrapped, non-finite floats as null."""
    if isinstance(value, Mapping):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return _plain(value.tolist())
    if isinstance(value, np.generic):
        return _plain(value.item())
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value


def write_json(path: Path, payload: Mapping[str, Any]) -> None:
    text = json.dumps(_plain(payload), indent=2, sort_keys=True)
    Path(path).write_text(text + "\n", encoding="utf-8")


def read_json(path: Path) -> Dict[str, Any]:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ReportError(f"{path} does not exist.") from None
    except json.JSONDecodeError as e:
        raise ReportError(f"{path} is not valid JSON: {e}") from None


def write_frame(frame: pd.DataFrame, path: Path) -> None:
    frame.to_csv(path, index=False, lineterminator="\n", float_format="%.10g")


def fit_payload(fit: FitResult, statistics: Optional[FitStatistics] = None) -> Dict[str, Any]:
    errors = fit.standard_errors
    t_stats = fit.t_stats
    parameters = []
    for i, name in enumerate(fit.layout.names):
        parameters.append(
            {
                "name": name,
                "estimate": float(fit.theta[i]),
                "std_error": None if errors is None else float(errors[i]),
                "t_stat": None if t_stats is None else float(t_stats[i]),
            }
        )
    return {
        "sub_model": fit.sub_model.value,
        "loglik": fit.loglik,
        "n_parameters": fit.n_parameters,
        "n_observations": fit.n_observations,
        "converged": fit.converged,
        "iterations": fit.iterations,
        "trace": list(fit.trace),
        "seed": fit.seed,
        "start_logliks": list(fit.start_logliks),
        "class_order": [p + 1 for p in fit.permutation],
        "class_shares": fit.class_shares,
        "separated": list(fit.separated),
        "warnings": list(fit.warnings),
        "statistics": None if statistics is None else dataclasses.asdict(statistics),
        "parameters": parameters,
    }


def three_step_payload(
    result: ThreeStepResult,
    statistics: Mapping[str, FitStatistics],
    combined: FitStatistics,
) -> Dict[str, Any]:
    conditional = fit_payload(result.conditional, statistics.get("conditional"))
    conditional["note"] = SEQUENTIAL_NOTE
    return {
        "pipeline": "three_step",
        "converged": result.converged,
        "steps": {
            "mode": fit_payload(result.mode, statistics.get("mode")),
            "neighbourhood": fit_payload(result.neighbourhood, statistics.get("neighbourhood")),
            "conditional": conditional,
        },
        "combined": {
            "loglik": result.loglik,
            "statistics": dataclasses.asdict(combined),
            "parameters": [
                {"name": name, "estimate": float(value)}
                for name, value in zip(result.layout.names, result.theta)
            ],
        },
    }


def single_payload(fit: FitResult, statistics: FitStatistics) -> Dict[str, Any]:
    return {
        "pipeline": fit.sub_model.value,
        "converged": fit.converged,
        "steps": {fit.sub_model.value: fit_payload(fit, statistics)},
        "combined": None,
    }


def load_estimates(path: Path) -> Tuple[str, Dict[str, float]]:
    """Pipeline name and parameter values from an estimation report."""
    report = read_json(path)
    try:
        pipeline = report["pipeline"]
        if pipeline == "three_step":
            parameters = report["combined"]["parameters"]
        else:
            parameters = report["steps"][pipeline]["parameters"]
        return pipeline, {p["name"]: float(p["estimate"]) for p in parameters}
    except (KeyError, TypeError) as e:
        raise ReportError(f"{path} is not an estimation report (missing {e}).") from None


def _table_key(name: str) -> Tuple[str, str, str]:
    """(table, row, column) placement of a parameter in the printed estimates."""
    match = _NAME.match(name)
    if match is None:
        return "other", name, "value"
    block, term = match["block"], match["term"]
    index = re.findall(r"\[([^\]]+)\]", match["index"])
    if block == "lambda":
        return "Mode choice", f"{index[0]}: {term}", f"Class {index[1]}"
    if block == "beta":
        return "Neighbourhood choice", term, f"Class {index[0]}"
    if block == "alpha":
        return "Household class membership", term, f"Class {index[0]}"
    if len(index) == 2:
        return "Individual class membership", term, f"Class {index[1]} | {index[0]}"
    return "Individual class membership", term, f"Class {index[0]}"


def estimates_text(fit: FitResult, title: Optional[str] = None) -> str:
    """Estimates laid out one column per class, ``estimate (t)`` cells."""
    t_stats = fit.t_stats
    tables: Dict[str, Dict[str, Dict[str, str]]] = {}
    columns: Dict[str, List[str]] = {}
    for i, name in enumerate(fit.layout.names):
        table, row, column = _table_key(name)
        t = None if t_stats is None else float(t_stats[i])
        tables.setdefault(table, {}).setdefault(row, {})[column] = estimate_cell(
            float(fit.theta[i]), t
        )
        if column not in columns.setdefault(table, []):
            columns[table].append(column)

    lines = [
        title or f"{fit.sub_model.value} model",
        f"Log-likelihood: {fit.loglik:.3f}  ({plural(fit.n_parameters):parameter})",
        f"Converged: {'yes' if fit.converged else 'no'} after {plural(fit.iterations):iteration}",
    ]
    lines.extend(f"Warning: {w}" for w in fit.warnings)
    for table, rows in tables.items():
        rendered = TabularData()
        rendered.set_columns(["Parameter", *columns[table]])
        rendered.add_rows([row, *(cells.get(c, "") for c in columns[table])] for row, cells in rows.items())
        lines.extend(["", table, rendered.render()])
    return "\n".join(lines) + "\n"


def statistics_frame(statistics: Mapping[str, FitStatistics]) -> pd.DataFrame:
    return pd.DataFrame(
        [{"model": name, **dataclasses.asdict(s)} for name, s in statistics.items()],
        columns=[
            "model",
            "loglik",
            "n_parameters",
            "n_observations",
            "loglik_null",
            "rho_bar_sq",
            "aic",
            "bic",
        ],
    )


@dataclass(frozen=True)
class RunManifest:
    command: str
    output: str
    version: str
    config: Optional[str] = None
    data: Optional[str] = None
    seed: Optional[int] = None
    controls: Dict[str, Any] = field(default_factory=dict)
    options: Dict[str, Any] = field(default_factory=dict)

    def to_mapping(self) -> Dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_mapping(cls, raw: Mapping[str, Any]) -> RunManifest:
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(raw) - names
        if unknown:
            raise ReportError(f"Unknown manifest field(s): {', '.join(sorted(unknown))}.")
        try:
            return cls(**raw)
        except TypeError as e:
            raise ReportError(f"Incomplete manifest: {e}") from None

    def write(self, directory: Path) -> Path:
        path = Path(directory) / MANIFEST_NAME
        write_json(path, self.to_mapping())
        return path

    @classmethod
    def read(cls, path: Path) -> RunManifest:
        path = Path(path)
        if path.is_dir():
            path = path / MANIFEST_NAME
        return cls.from_mapping(read_json(path))
