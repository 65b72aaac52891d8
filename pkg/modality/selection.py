"""
This Source Code Form is subject to the terms of the Mozilla Public
License, v. 2.0. If a copy of the MPL was not distributed with this
file, You can obtain one at http://mozilla.org/MPL/2.0/.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Iterable, List, Optional

import numpy as np
import pandas as pd

from .data import IndexedDataset
from .estimation import EmControls, EstimationError, FitResult, ThreeStepResult, fit_sub_model, split_start
from .likelihood import HierarchicalModel, ZeroLikelihoodError
from .mnl import MnlError
from .spec import ModelSpec, SpecError, SubModel, sub_model_layout

log = logging.getLogger(__name__)

SWEEP_COLUMNS = ("Parameters", "Log-likelihood", "rho-bar-sq", "AIC", "BIC")


@dataclass(frozen=True)
class FitStatistics:
    loglik: float
    n_parameters: int
    n_observations: int
    loglik_null: float
    rho_bar_sq: float
    aic: float
    bic: float


def fit_statistics(loglik: float, K: int, N: int, loglik_null: float) -> FitStatistics:
    if N < 1 or K < 0:
        raise ValueError(f"need N >= 1 and K >= 0, got N={N}, K={K}")
    if not loglik_null < 0:
        raise ValueError(f"null log-likelihood must be negative, got {loglik_null}")
    return FitStatistics(
        loglik=loglik,
        n_parameters=K,
        n_observations=N,
        loglik_null=loglik_null,
        rho_bar_sq=1.0 - (loglik - K) / loglik_null,
        aic=2.0 * K - 2.0 * loglik,
        bic=K * math.log(N) - 2.0 * loglik,
    )


def null_loglik(data: IndexedDataset, sub_model: SubModel) -> float:
    """Equal-shares log-likelihood over the sub-model's choice observations."""
    mode = -float(np.sum(np.log(data.availability.sum(axis=1))))
    neighbourhood = -data.n_households * math.log(data.n_tracts)
    if sub_model is SubModel.mode_lccm:
        return mode
    if sub_model is SubModel.neighbourhood_lccm:
        return neighbourhood
    return mode + neighbourhood


def statistics_for(data: IndexedDataset, fit: FitResult) -> FitStatistics:
    return fit_statistics(
        fit.loglik, fit.n_parameters, fit.n_observations, null_loglik(data, fit.sub_model)
    )


def three_step_statistics(data: IndexedDataset, result: ThreeStepResult) -> FitStatistics:
    return fit_statistics(
        result.loglik,
        result.layout.size,
        data.n_households + data.n_tours,
        null_loglik(data, SubModel.conditional_membership),
    )


@dataclass(frozen=True)
class SweepRow:
    classes: int
    n_parameters: int
    statistics: Optional[FitStatistics] = None
    converged: bool = False
    seed: Optional[int] = None
    error: Optional[str] = None
    aic_min: bool = False
    bic_min: bool = False

    @property
    def failed(self) -> bool:
        return self.statistics is None


def _sized(spec: ModelSpec, level: SubModel, classes: int) -> ModelSpec:
    if level is SubModel.mode_lccm:
        return spec.with_classes(individual=classes)
    if level is SubModel.neighbourhood_lccm:
        return spec.with_classes(household=classes)
    raise SpecError("Class sweeps run over the mode or neighbourhood model.")


def class_sweep(
    data: IndexedDataset,
    template: ModelSpec,
    class_range: Iterable[int],
    controls: Optional[EmControls] = None,
    level: SubModel = SubModel.mode_lccm,
) -> List[SweepRow]:
    counts = sorted(set(class_range))
    if not counts:
        raise SpecError("Empty class range.")
    controls = controls or EmControls()

    rows = []
    previous: Optional[FitResult] = None
    previous_classes = 0
    for classes in counts:
        spec = _sized(template, level, classes)
        n_parameters = sub_model_layout(spec, level).size
        log.info("Sweep: %s %s class(es), %s parameters.", level.value, classes, n_parameters)
        try:
            # the smaller fit split in two keeps the log-likelihood non-decreasing in the class count
            nested = split_start(previous, spec) if previous is not None and previous_classes == classes - 1 else None
            model = HierarchicalModel(spec, data)
            fit = fit_sub_model(
                model, level, controls, with_standard_errors=False, extra_starts=() if nested is None else (nested,)
            )
        except (EstimationError, ZeroLikelihoodError, MnlError, SpecError) as e:
            log.warning("Sweep row with %s classes failed: %s", classes, e)
            rows.append(SweepRow(classes, n_parameters, error=str(e)))
            previous = None
            continue
        previous, previous_classes = fit, classes
        rows.append(
            SweepRow(
                classes,
                n_parameters,
                statistics=statistics_for(data, fit),
                converged=fit.converged,
                seed=fit.seed,
            )
        )

    fitted = [r for r in rows if not r.failed]
    if fitted:
        aic = min(fitted, key=lambda r: r.statistics.aic).classes
        bic = min(fitted, key=lambda r: r.statistics.bic).classes
        rows = [
            SweepRow(
                r.classes,
                r.n_parameters,
                r.statistics,
                r.converged,
                r.seed,
                r.error,
                aic_min=r.classes == aic and not r.failed,
                bic_min=r.classes == bic and not r.failed,
            )
            for r in rows
        ]
    return rows


def sweep_frame(rows: Iterable[SweepRow]) -> pd.DataFrame:
    """The sweep table; failed rows keep their parameter count and read ``failed``."""
    records = []
    for row in rows:
        s = row.statistics
        if s is None:
            records.append([row.n_parameters, "failed", "failed", "failed", "failed"])
        else:
            records.append(
                [
                    row.n_parameters,
                    f"{s.loglik:.3f}",
                    f"{s.rho_bar_sq:.4f}",
                    f"{s.aic:.3f}",
                    f"{s.bic:.3f}",
                ]
            )
    return pd.DataFrame(records, columns=list(SWEEP_COLUMNS))


def sweep_summary_frame(rows: Iterable[SweepRow]) -> pd.DataFrame:
    return pd.DataFrame(
        [
            {
                "classes": r.classes,
                "parameters": r.n_parameters,
                "converged": int(r.converged),
                "seed": "" if r.seed is None else r.seed,
                "aic_min": int(r.aic_min),
                "bic_min": int(r.bic_min),
                "error": r.error or "",
            }
            for r in rows
        ],
        columns=["classes", "parameters", "converged", "seed", "aic_min", "bic_min", "error"],
    )
