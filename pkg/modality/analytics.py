"""
This Source Code Form is subject to the terms of the Mozilla Public
License, v. 2.0. If a copy of the MPL was not distributed with this
file, You can obtain one at http://mozilla.org/MPL/2.0/.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional

import numpy as np
import pandas as pd

from .data import MODES, PURPOSES
from .likelihood import HierarchicalModel
from .spec import ModelSpec

log = logging.getLogger(__name__)

UNBOUNDED = "unbounded"
ATTRIBUTES = ("time", "cost")


class AnalyticsError(Exception):
    pass


class ElasticityMethod(enum.Enum):
    enumeration = "enumeration"
    probability_weighted = "probability_weighted"
    sample_means = "sample_means"


ELASTICITY_FORMULAS = {
    ElasticityMethod.enumeration: "sum_t w_t sum_a b*x_ta*(1-p_ta) / sum_t w_t n_t",
    ElasticityMethod.probability_weighted: "sum_t w_t sum_a p_ta*b*x_ta*(1-p_ta) / sum_t w_t sum_a p_ta",
    ElasticityMethod.sample_means: "mean_a b*xbar_a*(1-pbar_a), bars weighted by w_t",
}


@dataclass(frozen=True)
class ValueOfTime:
    dollars_per_hour: Optional[float]

    @property
    def unbounded(self) -> bool:
        return self.dollars_per_hour is None

    def __str__(self) -> str:
        return UNBOUNDED if self.unbounded else f"{self.dollars_per_hour:.3f}"


def value_of_time(time_coef: Optional[float], cost_coef: Optional[float]) -> ValueOfTime:
    """Dollars per hour from per-minute time and per-dollar cost coefficients."""
    if cost_coef is None or cost_coef == 0:
        return ValueOfTime(None)
    return ValueOfTime(60.0 * (time_coef or 0.0) / cost_coef)


def point_elasticity(prob_k: float, attribute_value: float, coefficient: float) -> float:
    if not 0.0 <= prob_k <= 1.0:
        raise AnalyticsError(f"probability {prob_k} outside [0, 1]")
    return coefficient * attribute_value * (1.0 - prob_k)


def _coefficient(params: Mapping[str, np.ndarray], spec: ModelSpec, purpose: str, s: int, term: str) -> float:
    columns = spec.individual_classes[s].utility(purpose).columns
    if term not in columns:
        return 0.0
    return float(params[f"lambda[{purpose}][{s + 1}]"][columns.index(term)])


def aggregate_elasticity(
    model: HierarchicalModel,
    params: Mapping[str, np.ndarray],
    person_posterior: np.ndarray,
    s: int,
    purpose: str,
    attribute: str,
    *,
    method: ElasticityMethod = ElasticityMethod.enumeration,
) -> float:
    """Direct elasticity of class ``s`` (0-based) averaged over its tours.

    Pairs are (tour, alternative) in the class's effective choice set with a
    nonzero attribute; tours are weighted by the person's posterior.
    """
    if attribute not in ATTRIBUTES:
        raise AnalyticsError(f"Unknown attribute {attribute!r}; choose time or cost.")
    design = model.mode_designs[purpose, s]
    values = getattr(model.data, attribute)[design.tours]
    eligible = design.availability & (values != 0)
    weights = person_posterior[design.person, s]
    if not eligible.any() or not np.any(weights[eligible.any(axis=1)] > 0):
        raise AnalyticsError(
            f"No {attribute} observations for class {s + 1} on {purpose} tours."
        )

    coefficient = _coefficient(params, model.spec, purpose, s, attribute)
    probs = np.exp(model.mode_log_probs(params, purpose, s))
    elasticity = np.where(eligible, coefficient * values * (1.0 - probs), 0.0)
    pair_weights = weights[:, None] * eligible

    if method is ElasticityMethod.enumeration:
        return float(np.sum(pair_weights * elasticity) / np.sum(pair_weights))
    if method is ElasticityMethod.probability_weighted:
        mass = pair_weights * probs
        if not np.sum(mass) > 0:
            raise AnalyticsError(f"Class {s + 1} puts no probability on eligible {purpose} pairs.")
        return float(np.sum(mass * elasticity) / np.sum(mass))

    column_mass = pair_weights.sum(axis=0)
    used = column_mass > 0
    mean_x = (pair_weights * values).sum(axis=0)[used] / column_mass[used]
    mean_p = (pair_weights * probs).sum(axis=0)[used] / column_mass[used]
    return float(np.mean(coefficient * mean_x * (1.0 - mean_p)))


def elasticity_frame(
    model: HierarchicalModel,
    params: Mapping[str, np.ndarray],
    person_posterior: np.ndarray,
    method: ElasticityMethod = ElasticityMethod.enumeration,
) -> pd.DataFrame:
    records = []
    for s in range(model.S):
        for purpose in PURPOSES:
            for attribute in ATTRIBUTES:
                try:
                    value = aggregate_elasticity(
                        model, params, person_posterior, s, purpose, attribute, method=method
                    )
                except AnalyticsError as e:
                    log.info("Skipping elasticity: %s", e)
                    continue
                records.append(
                    {
                        "class": s + 1,
                        "purpose": purpose,
                        "attribute": attribute,
                        "elasticity": value,
                        "method": method.value,
                        "formula": ELASTICITY_FORMULAS[method],
                    }
                )
    columns = ["class", "purpose", "attribute", "elasticity", "method", "formula"]
    return pd.DataFrame(records, columns=columns)


def value_of_time_frame(spec: ModelSpec, params: Mapping[str, np.ndarray]) -> pd.DataFrame:
    records = []
    for s, cls in enumerate(spec.individual_classes):
        for purpose in PURPOSES:
            columns = cls.utility(purpose).columns
            time = _coefficient(params, spec, purpose, s, "time") if "time" in columns else None
            cost = _coefficient(params, spec, purpose, s, "cost") if "cost" in columns else None
            records.append(
                {"class": s + 1, "purpose": purpose, "value_of_time": str(value_of_time(time, cost))}
            )
    return pd.DataFrame(records, columns=["class", "purpose", "value_of_time"])


@dataclass(frozen=True)
class ClassProfile:
    level: str
    label: int
    prior_share: float
    mode_shares: Dict[str, Dict[str, float]]
    covariate_means: Dict[str, float]


def _profiles(
    level: str,
    posterior: np.ndarray,
    tour_weights: np.ndarray,
    chosen_mode: np.ndarray,
    tour_purpose: np.ndarray,
    covariates: np.ndarray,
    names,
) -> List[ClassProfile]:
    out = []
    shares = posterior.mean(axis=0)
    for c in range(posterior.shape[1]):
        w = posterior[:, c]
        mode_shares = {}
        for d_index, purpose in enumerate(PURPOSES):
            tw = tour_weights[:, c] * (tour_purpose == d_index)
            total = tw.sum()
            if total > 0:
                counts = np.bincount(chosen_mode, weights=tw, minlength=len(MODES))
                mode_shares[purpose] = dict(zip(MODES, (counts / total).tolist()))
        if w.sum() > 0:
            means = (w @ covariates) / w.sum()
        else:
            means = np.full(len(names), np.nan)
        out.append(
            ClassProfile(level, c + 1, float(shares[c]), mode_shares, dict(zip(names, means.tolist())))
        )
    return out


def class_profiles(
    model: HierarchicalModel,
    household_posterior: Optional[np.ndarray] = None,
    person_posterior: Optional[np.ndarray] = None,
) -> List[ClassProfile]:
    """Posterior-weighted class descriptions for whichever levels are given."""
    data = model.data
    out = []
    if household_posterior is not None:
        tour_weights = household_posterior[data.person_household[data.tour_person]]
        out.extend(
            _profiles(
                "household",
                household_posterior,
                tour_weights,
                data.chosen_mode,
                data.tour_purpose,
                data.household_covariates,
                data.household_variables,
            )
        )
    if person_posterior is not None:
        out.extend(
            _profiles(
                "individual",
                person_posterior,
                person_posterior[data.tour_person],
                data.chosen_mode,
                data.tour_purpose,
                data.person_covariates,
                data.person_variables,
            )
        )
    return out


def profiles_frame(profiles: List[ClassProfile]) -> pd.DataFrame:
    records = []
    for p in profiles:
        base = {"level": p.level, "class": p.label}
        records.append({**base, "quantity": "prior_share", "value": p.prior_share})
        for purpose, shares in p.mode_shares.items():
            for mode, share in shares.items():
                records.append({**base, "quantity": f"share.{purpose}.{mode}", "value": share})
        for name, mean in p.covariate_means.items():
            records.append({**base, "quantity": f"mean.{name}", "value": mean})
    return pd.DataFrame(records, columns=["level", "class", "quantity", "value"])


def neighbourhood_surface(
    model: HierarchicalModel, params: Mapping[str, np.ndarray], r: int
) -> Dict[str, float]:
    """P(tract | household class r) for every tract, 0 outside J_r."""
    probs = np.exp(model.neighbourhood_log_probs(params)[r])
    return dict(zip(model.data.tract_ids, probs.tolist()))


def surface_frame(model: HierarchicalModel, params: Mapping[str, np.ndarray]) -> pd.DataFrame:
    records = [
        {"tract_id": tract, "class": r + 1, "probability": p}
        for r in range(model.R)
        for tract, p in neighbourhood_surface(model, params, r).items()
    ]
    return pd.DataFrame(records, columns=["tract_id", "class", "probability"])
