"""
This Source Code Form is subject to the terms of the Mozilla Public
License, v. 2.0. If a copy of the MPL was not distributed with this
file, You can obtain one at http://mozilla.org/MPL/2.0/.
"""

# Hierarchical likelihood: household classes drive tract choice and condition
# the individual classes that drive mode choice on every tour. All mixing is
# done in log space.

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Dict, List, Mapping, Sequence, Tuple

import numpy as np
from scipy.special import logsumexp

from .data import MODES, PURPOSES, IndexedDataset
from .mnl import masked_log_probs
from .spec import ModelSpec, ModeUtility, SpecError, SubModel, VariableCatalogue, layout_from_spec

log = logging.getLogger(__name__)

Params = Mapping[str, np.ndarray]


class ZeroLikelihoodError(Exception):
    def __init__(self, kind: str, ids: Sequence[str]) -> None:
        self.ids = tuple(ids)
        shown = ", ".join(self.ids[:10]) + (" ..." if len(self.ids) > 10 else "")
        super().__init__(
            f"{len(self.ids)} {kind} record(s) have zero likelihood under every class: {shown}"
        )


def _lse(values: np.ndarray, axis: int = -1) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        return logsumexp(values, axis=axis)


def membership_log_probs(covariates: np.ndarray, coefficients: np.ndarray) -> np.ndarray:
    """Logit class-membership log-probabilities; class 1 is the zero-utility base.

    ``covariates`` is (..., k) and ``coefficients`` is (classes - 1, k).
    """
    covariates = np.asarray(covariates, dtype=float)
    coefficients = np.asarray(coefficients, dtype=float)
    if coefficients.ndim != 2 or coefficients.shape[1] != covariates.shape[-1]:
        raise ValueError(
            f"coefficients {coefficients.shape} do not match {covariates.shape[-1]} covariates"
        )
    utilities = covariates @ coefficients.T
    base = np.zeros(utilities.shape[:-1] + (1,))
    utilities = np.concatenate([base, utilities], axis=-1)
    return utilities - logsumexp(utilities, axis=-1, keepdims=True)


def household_class_log_probs(z_h: np.ndarray, alpha: np.ndarray) -> np.ndarray:
    return membership_log_probs(z_h, alpha)


def individual_class_log_probs(w_hn: np.ndarray, gamma: np.ndarray, r: int) -> np.ndarray:
    """Individual class log-probabilities given household class ``r`` (0-based)."""
    return membership_log_probs(w_hn, gamma[r])


def neighbourhood_loglik_given_class(
    chosen: int, attributes: np.ndarray, beta_r: np.ndarray, consideration: np.ndarray
) -> float:
    consideration = np.asarray(consideration, dtype=bool)
    if not consideration.any():
        raise SpecError("Empty tract consideration set.")
    log_probs = masked_log_probs(np.asarray(attributes) @ np.asarray(beta_r), consideration)
    return float(log_probs[chosen])


@dataclass(frozen=True)
class ModeDesign:
    """Tours of one purpose laid out for one individual class's utility."""

    tours: np.ndarray  # indices into the tour arrays
    person: np.ndarray
    design: np.ndarray  # (tours, modes, terms)
    availability: np.ndarray  # data availability and the class's consideration set
    chosen: np.ndarray
    considered: np.ndarray  # chosen mode lies in the effective set


@dataclass(frozen=True)
class ClassConditionals:
    household_log_probs: np.ndarray  # (H, R)
    neighbourhood_loglik: np.ndarray  # (H, R)
    individual_log_probs: np.ndarray  # (R, P, S)
    mode_loglik: np.ndarray  # (P, S)


@dataclass(frozen=True)
class PosteriorMatrix:
    household: np.ndarray  # w_hr, (H, R)
    person_given_household: np.ndarray  # w_hn_s|r, (R, P, S)
    person: np.ndarray  # w_hns, (P, S)


def mode_design(
    data: IndexedDataset, tours: np.ndarray, utility: ModeUtility, *, purpose: str = "", s: int = 0
) -> ModeDesign:
    n = len(tours)
    design = np.zeros((n, len(MODES), len(utility.columns)))
    for j, column in enumerate(utility.columns):
        if column == "time":
            design[:, :, j] = data.time[tours]
        elif column == "cost":
            design[:, :, j] = data.cost[tours]
        else:
            design[:, MODES.index(column[len("asc_"):]), j] = 1.0
    availability = data.availability[tours] & utility.mask
    empty = np.flatnonzero(~availability.any(axis=1))
    if len(empty):
        shown = ", ".join(data.tour_ids[t] for t in tours[empty[:5]])
        raise SpecError(
            f"Individual class {s + 1} ({purpose} tours) leaves {len(empty)} tour(s) with no available mode "
            f"in its consideration set: {shown}{' ...' if len(empty) > 5 else ''}"
        )
    chosen = data.chosen_mode[tours]
    considered = availability[np.arange(n), chosen]
    return ModeDesign(tours, data.tour_person[tours], design, availability, chosen, considered)


class HierarchicalModel:
    """A model specification bound to an indexed dataset."""

    def __init__(self, spec: ModelSpec, data: IndexedDataset) -> None:
        spec.validate(VariableCatalogue.from_dataset(data))
        self.spec = spec
        self.data = data
        self.layout = layout_from_spec(spec)

        self.household_design = data.household_matrix(spec.household_membership_variables)
        self.person_design = data.person_matrix(spec.individual_membership_variables)
        self.tract_designs = [data.tract_matrix(c.variables) for c in spec.household_classes]
        self.tract_masks = [c.consideration.mask(data) for c in spec.household_classes]

        self.mode_designs: Dict[Tuple[str, int], ModeDesign] = {}
        for d_index, d in enumerate(PURPOSES):
            tours = np.flatnonzero(data.tour_purpose == d_index)
            for s, cls in enumerate(spec.individual_classes):
                self.mode_designs[d, s] = mode_design(data, tours, cls.utility(d), purpose=d, s=s)

    @property
    def R(self) -> int:
        return self.spec.R

    @property
    def S(self) -> int:
        return self.spec.S

    def unpack(self, theta: np.ndarray) -> Dict[str, np.ndarray]:
        return self.layout.unpack(theta)

    # -- components ---------------------------------------------------------

    def household_class_log_probs(self, params: Params) -> np.ndarray:
        return membership_log_probs(self.household_design, params["alpha"])

    def neighbourhood_log_probs(self, params: Params) -> List[np.ndarray]:
        """Per household class, log-probabilities over every tract."""
        return [
            masked_log_probs(self.tract_designs[r] @ params[f"beta[{r + 1}]"], self.tract_masks[r])
            for r in range(self.R)
        ]

    def neighbourhood_loglik(self, params: Params) -> np.ndarray:
        chosen = self.data.chosen_tract
        return np.stack([lp[chosen] for lp in self.neighbourhood_log_probs(params)], axis=1)

    def individual_class_log_probs(self, params: Params) -> np.ndarray:
        gamma = params["gamma"]
        return np.stack(
            [membership_log_probs(self.person_design, gamma[r]) for r in range(gamma.shape[0])]
        )

    def mode_log_probs(self, params: Params, purpose: str, s: int) -> np.ndarray:
        design = self.mode_designs[purpose, s]
        utilities = np.einsum("nak,k->na", design.design, params[f"lambda[{purpose}][{s + 1}]"])
        return masked_log_probs(utilities, design.availability)

    def mode_loglik(self, params: Params) -> np.ndarray:
        out = np.zeros((self.data.n_persons, self.S))
        for (d, s), design in self.mode_designs.items():
            if not len(design.tours):
                continue
            chosen = self.mode_log_probs(params, d, s)[np.arange(len(design.tours)), design.chosen]
            out[:, s] += np.bincount(design.person, weights=chosen, minlength=self.data.n_persons)
        return out

    def mode_loglik_given_class(self, params: Params, person: int, s: int) -> float:
        total = 0.0
        for d in PURPOSES:
            design = self.mode_designs[d, s]
            rows = np.flatnonzero(design.person == person)
            if not len(rows):
                continue
            log_probs = self.mode_log_probs(params, d, s)[rows]
            total += float(np.sum(log_probs[np.arange(len(rows)), design.chosen[rows]]))
        return total

    def conditionals(self, params: Params) -> ClassConditionals:
        return ClassConditionals(
            household_log_probs=self.household_class_log_probs(params),
            neighbourhood_loglik=self.neighbourhood_loglik(params),
            individual_log_probs=self.individual_class_log_probs(params),
            mode_loglik=self.mode_loglik(params),
        )

    # -- mixtures -----------------------------------------------------------

    def _per_household(self, values: np.ndarray) -> np.ndarray:
        """Sums a (..., P) array over each household's members."""
        flat = values.reshape(-1, values.shape[-1])
        out = np.stack(
            [
                np.bincount(
                    self.data.person_household, weights=row, minlength=self.data.n_households
                )
                for row in flat
            ]
        )
        return out.reshape(values.shape[:-1] + (self.data.n_households,))

    def household_terms(self, cond: ClassConditionals) -> np.ndarray:
        """log P(r) f_y(r) prod_n sum_s f_m(s) P(s|r), as (H, R)."""
        joint = cond.mode_loglik[None, :, :] + cond.individual_log_probs
        persons = self._per_household(_lse(joint, axis=2))
        return cond.household_log_probs + cond.neighbourhood_loglik + persons.T

    def full_loglik(self, theta: np.ndarray) -> float:
        terms = self.household_terms(self.conditionals(self.unpack(theta)))
        return float(np.sum(_lse(terms, axis=1)))

    def posteriors(self, theta: np.ndarray) -> PosteriorMatrix:
        return self.posteriors_from(self.conditionals(self.unpack(theta)))

    def posteriors_from(self, cond: ClassConditionals) -> PosteriorMatrix:
        terms = self.household_terms(cond)
        totals = _lse(terms, axis=1)
        bad = ~np.isfinite(totals)
        if bad.any():
            raise ZeroLikelihoodError(
                "household", [self.data.household_ids[i] for i in np.flatnonzero(bad)]
            )
        household = np.exp(terms - totals[:, None])

        joint = cond.mode_loglik[None, :, :] + cond.individual_log_probs
        norm = _lse(joint, axis=2)
        possible = np.isfinite(norm)
        with np.errstate(invalid="ignore"):
            given = np.where(
                possible[..., None],
                np.exp(joint - np.where(possible, norm, 0.0)[..., None]),
                np.exp(cond.individual_log_probs),
            )
        weights = household[self.data.person_household].T  # (R, P)
        person = np.einsum("rp,rps->ps", weights, given)
        return PosteriorMatrix(household, given, person)

    # -- single-level sub-models ---------------------------------------------

    def sub_model_terms(self, sub_model: SubModel, params: Params) -> np.ndarray:
        """Per-unit class terms of a single-level LCCM, (units, classes)."""
        if sub_model is SubModel.mode_lccm:
            return self.mode_loglik(params) + self.individual_class_log_probs(params)[0]
        if sub_model is SubModel.neighbourhood_lccm:
            return self.household_class_log_probs(params) + self.neighbourhood_loglik(params)
        raise ValueError(f"{sub_model} is not a single-level model")

    def unit_ids(self, sub_model: SubModel) -> Tuple[str, ...]:
        if sub_model is SubModel.mode_lccm:
            return self.data.person_ids
        return self.data.household_ids

    def sub_model_loglik(self, sub_model: SubModel, params: Params) -> float:
        return float(np.sum(_lse(self.sub_model_terms(sub_model, params), axis=1)))

    def sub_model_posterior(self, sub_model: SubModel, params: Params) -> np.ndarray:
        terms = self.sub_model_terms(sub_model, params)
        totals = _lse(terms, axis=1)
        bad = ~np.isfinite(totals)
        if bad.any():
            ids = self.unit_ids(sub_model)
            kind = "person" if sub_model is SubModel.mode_lccm else "household"
            raise ZeroLikelihoodError(kind, [ids[i] for i in np.flatnonzero(bad)])
        return np.exp(terms - totals[:, None])

    def n_observations(self, sub_model: SubModel) -> int:
        if sub_model is SubModel.mode_lccm:
            return self.data.n_tours
        if sub_model is SubModel.neighbourhood_lccm:
            return self.data.n_households
        return self.data.n_households + self.data.n_tours


def full_loglik(model: HierarchicalModel, theta: np.ndarray) -> float:
    return model.full_loglik(theta)


def posteriors(model: HierarchicalModel, theta: np.ndarray) -> PosteriorMatrix:
    return model.posteriors(theta)
