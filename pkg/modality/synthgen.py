"""
This Source Code Form is subject to the terms of the Mozilla Public
License, v. 2.0. If a copy of the MPL was not distributed with this
file, You can obtain one at http://mozilla.org/MPL/2.0/.
"""

# Forward simulation of households, members and tours from known parameters.
#
# Seeding: SeedSequence(seed).spawn(households + 1); child 0 draws the tract
# table, child h + 1 draws everything about household h. Households are
# therefore independent of each other's draws and of generation order.

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Tuple

import numpy as np
import pandas as pd

from .data import (
    HOUSEHOLD_DUMMIES,
    HOUSEHOLD_VARIABLES,
    MODES,
    NEIGHBOURHOOD_VARIABLES,
    PERSON_DUMMIES,
    PERSON_VARIABLES,
    PURPOSES,
    UNIT_INTERVAL_ATTRIBUTES,
    Dataset,
    HouseholdRecord,
    ModeAlternative,
    NeighbourhoodAlternative,
    PersonRecord,
    TourRecord,
    index_dataset,
)
from .estimation import ThreeStepResult, permute_hierarchy, share_order
from .likelihood import membership_log_probs
from .mnl import masked_log_probs
from .spec import (
    DEFAULT_CATALOGUE,
    ModelSpec,
    SpecError,
    layout_from_spec,
    model_spec_from_mapping,
)

log = logging.getLogger(__name__)


class SimulationError(Exception):
    pass


class RecoveryError(Exception):
    pass


@dataclass(frozen=True)
class Generator:
    """A simple documented distribution for one column."""

    kind: str = "uniform"  # uniform | bernoulli | integer | constant
    low: float = 0.0
    high: float = 1.0
    p: float = 0.5
    value: float = 0.0

    def draw(self, rng: np.random.Generator, size=None):
        if self.kind == "uniform":
            out = rng.uniform(self.low, self.high, size)
        elif self.kind == "bernoulli":
            out = rng.random(size) < self.p
        elif self.kind == "integer":
            out = rng.integers(int(self.low), int(self.high) + 1, size)
        elif self.kind == "constant":
            out = np.full(size if size is not None else (), self.value)
        else:
            raise SimulationError(f"Unknown generator kind {self.kind!r}.")
        out = np.asarray(out, dtype=float)
        return out if size is not None else float(out)

    @classmethod
    def from_mapping(cls, raw: Mapping[str, Any]) -> Generator:
        try:
            generator = cls(**raw)
        except TypeError as e:
            raise SimulationError(f"Bad generator {raw!r}: {e}") from None
        if generator.kind not in ("uniform", "bernoulli", "integer", "constant"):
            raise SimulationError(f"Unknown generator kind {generator.kind!r}.")
        return generator


def _default_tract_generators() -> Dict[str, Generator]:
    out = {}
    for name in NEIGHBOURHOOD_VARIABLES:
        if name in UNIT_INTERVAL_ATTRIBUTES:
            out[name] = Generator("uniform", 0.0, 1.0)
        else:
            out[name] = Generator("uniform", 0.0, 2.0)
    return out


def _default_household_generators() -> Dict[str, Generator]:
    out = {}
    for name in HOUSEHOLD_VARIABLES:
        if name in HOUSEHOLD_DUMMIES:
            out[name] = Generator("bernoulli", p=0.5)
        elif name == "income":
            out[name] = Generator("uniform", 0.0, 2.0)
        else:
            out[name] = Generator("integer", 0, 3)
    return out


def _default_person_generators() -> Dict[str, Generator]:
    out = {name: Generator("bernoulli", p=0.5) for name in PERSON_VARIABLES if name in PERSON_DUMMIES}
    # age in decades keeps the membership utilities on the scale of the dummies
    out["age"] = Generator("uniform", 1.8, 8.0)
    return out


def _default_times() -> Dict[str, Generator]:
    return {mode: Generator("uniform", 5.0, 60.0) for mode in MODES}


def _default_costs() -> Dict[str, Generator]:
    return {
        "private_vehicle": Generator("uniform", 1.0, 10.0),
        "private_transit": Generator("uniform", 2.0, 15.0),
        "public_transit": Generator("uniform", 1.0, 5.0),
        "bike": Generator("constant", value=0.0),
        "walk": Generator("constant", value=0.0),
    }


def _default_availability() -> Dict[str, float]:
    return {
        "private_vehicle": 1.0,
        "private_transit": 0.8,
        "public_transit": 0.8,
        "bike": 0.7,
        "walk": 0.6,
    }


_GENERATOR_DEFAULTS = {
    "tract_attributes": _default_tract_generators,
    "household_covariates": _default_household_generators,
    "person_covariates": _default_person_generators,
    "times": _default_times,
    "costs": _default_costs,
}


@dataclass(frozen=True)
class PopulationSpec:
    households: int = 100
    tracts: int = 20
    persons_per_household: Tuple[int, int] = (1, 3)
    tours_per_person: Dict[str, Tuple[int, int]] = field(
        default_factory=lambda: {"mandatory": (1, 2), "nonmandatory": (0, 2)}
    )
    tract_attributes: Dict[str, Generator] = field(default_factory=_default_tract_generators)
    household_covariates: Dict[str, Generator] = field(
        default_factory=_default_household_generators
    )
    person_covariates: Dict[str, Generator] = field(default_factory=_default_person_generators)
    times: Dict[str, Generator] = field(default_factory=_default_times)
    costs: Dict[str, Generator] = field(default_factory=_default_costs)
    # probability that each mode is available on a tour
    availability: Dict[str, float] = field(default_factory=_default_availability)

    def __post_init__(self) -> None:
        if self.households < 1 or self.tracts < 1:
            raise SimulationError("households and tracts must be at least 1.")
        lo, hi = self.persons_per_household
        if not 1 <= lo <= hi:
            raise SimulationError("persons_per_household must satisfy 1 <= low <= high.")
        for purpose, (lo, hi) in self.tours_per_person.items():
            if purpose not in PURPOSES or not 0 <= lo <= hi:
                raise SimulationError(f"Bad tours_per_person entry for {purpose!r}.")
        if self.availability.get(MODES[0], 0.0) != 1.0:
            raise SimulationError(f"{MODES[0]} must always be available.")


@dataclass(frozen=True)
class TruthSpec:
    spec: ModelSpec
    theta: np.ndarray
    population: PopulationSpec = field(default_factory=PopulationSpec)
    seed: int = 0

    def __post_init__(self) -> None:
        layout_from_spec(self.spec).check(self.theta)


@dataclass(frozen=True)
class TrueLabels:
    """Generating classes, 1-based; kept apart from the dataset."""

    household: Dict[str, int]
    person: Dict[str, int]


def truth_from_mapping(raw: Mapping[str, Any]) -> TruthSpec:
    """Reads ``{"seed", "model", "parameters", "population"}``; unnamed parameters are 0."""
    if not isinstance(raw, dict):
        raise SimulationError("Truth configuration must be a JSON object.")
    unknown = set(raw) - {"seed", "model", "parameters", "population"}
    if unknown:
        raise SimulationError(f"Unknown truth setting(s): {', '.join(sorted(unknown))}.")
    spec = model_spec_from_mapping(raw.get("model", {}), DEFAULT_CATALOGUE)
    layout = layout_from_spec(spec)
    theta = np.zeros(layout.size)
    for name, value in raw.get("parameters", {}).items():
        theta[layout.index(name)] = float(value)

    population = dict(raw.get("population", {}))
    for key, factory in _GENERATOR_DEFAULTS.items():
        if key in population:
            defaults = factory()
            defaults.update(
                {name: Generator.from_mapping(g) for name, g in population[key].items()}
            )
            population[key] = defaults
    if "availability" in population:
        population["availability"] = {**_default_availability(), **population["availability"]}
    if "persons_per_household" in population:
        population["persons_per_household"] = tuple(population["persons_per_household"])
    if "tours_per_person" in population:
        population["tours_per_person"] = {
            d: tuple(v) for d, v in population["tours_per_person"].items()
        }
    try:
        population_spec = PopulationSpec(**population)
    except TypeError as e:
        raise SimulationError(f"Bad population settings: {e}") from None
    seed = raw.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise SimulationError("seed must be an integer.")
    return TruthSpec(spec, theta, population_spec, seed)


def load_truth(path: Path) -> TruthSpec:
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise SimulationError(f"{path} is not valid JSON: {e}") from None
    return truth_from_mapping(raw)


def _draw_columns(generators: Mapping[str, Generator], names, rng) -> Dict[str, float]:
    return {name: float(generators[name].draw(rng)) for name in names}


def _row(covariates: Mapping[str, float], names) -> np.ndarray:
    return np.array([1.0 if n == "const" else covariates[n] for n in names])


def _choose(rng: np.random.Generator, log_probs: np.ndarray) -> int:
    probs = np.exp(log_probs)
    return int(rng.choice(len(probs), p=probs / probs.sum()))


def simulate_population(truth: TruthSpec) -> Tuple[Dataset, TrueLabels]:
    spec, population = truth.spec, truth.population
    params = layout_from_spec(spec).unpack(truth.theta)
    for name in NEIGHBOURHOOD_VARIABLES:
        if name not in population.tract_attributes:
            raise SimulationError(f"No generator for tract attribute {name!r}.")

    children = np.random.SeedSequence(truth.seed).spawn(population.households + 1)
    rng = np.random.default_rng(children[0])
    width = len(str(population.tracts))
    tracts = tuple(
        NeighbourhoodAlternative(
            f"t{j + 1:0{width}d}",
            _draw_columns(population.tract_attributes, NEIGHBOURHOOD_VARIABLES, rng),
        )
        for j in range(population.tracts)
    )
    universe = index_dataset(
        Dataset(tracts, (), (), (), NEIGHBOURHOOD_VARIABLES, HOUSEHOLD_VARIABLES, PERSON_VARIABLES)
    )

    tract_log_probs: List[Optional[np.ndarray]] = []
    for r, cls in enumerate(spec.household_classes):
        try:
            mask = cls.consideration.mask(universe)
        except SpecError:
            tract_log_probs.append(None)
            continue
        utilities = universe.tract_matrix(cls.variables) @ params[f"beta[{r + 1}]"]
        tract_log_probs.append(masked_log_probs(utilities, mask))

    households, persons, tours = [], [], []
    household_labels, person_labels = {}, {}
    hwidth = len(str(population.households))
    person_count = tour_count = 0
    for h in range(population.households):
        rng = np.random.default_rng(children[h + 1])
        household_id = f"h{h + 1:0{hwidth}d}"
        z = _draw_columns(population.household_covariates, HOUSEHOLD_VARIABLES, rng)
        r = _choose(
            rng,
            membership_log_probs(_row(z, spec.household_membership_variables), params["alpha"]),
        )
        if tract_log_probs[r] is None:
            raise SimulationError(f"Household class {r + 1} has an empty tract consideration set.")
        tract = tracts[_choose(rng, tract_log_probs[r])].tract_id
        household_labels[household_id] = r + 1

        members = []
        lo, hi = population.persons_per_household
        for _ in range(int(rng.integers(lo, hi + 1))):
            person_count += 1
            person_id = f"p{person_count}"
            members.append(person_id)
            w = _draw_columns(population.person_covariates, PERSON_VARIABLES, rng)
            s = _choose(
                rng,
                membership_log_probs(_row(w, spec.individual_membership_variables), params["gamma"][r]),
            )
            person_labels[person_id] = s + 1
            persons.append(PersonRecord(person_id, household_id, w))

            for purpose in PURPOSES:
                utility = spec.individual_classes[s].utility(purpose)
                coefficients = params[f"lambda[{purpose}][{s + 1}]"]
                t_lo, t_hi = population.tours_per_person.get(purpose, (0, 0))
                for _ in range(int(rng.integers(t_lo, t_hi + 1))):
                    tour_count += 1
                    available = np.array(
                        [rng.random() < population.availability.get(m, 0.0) for m in MODES]
                    )
                    time = np.array([float(population.times[m].draw(rng)) for m in MODES])
                    cost = np.array([float(population.costs[m].draw(rng)) for m in MODES])
                    effective = available & utility.mask
                    if not effective.any():
                        raise SimulationError(
                            f"Individual class {s + 1} has no available mode on a {purpose} tour."
                        )
                    design = np.zeros((len(MODES), len(utility.columns)))
                    for j, column in enumerate(utility.columns):
                        if column == "time":
                            design[:, j] = time
                        elif column == "cost":
                            design[:, j] = cost
                        else:
                            design[MODES.index(column[len("asc_"):]), j] = 1.0
                    chosen = _choose(rng, masked_log_probs(design @ coefficients, effective))
                    alternatives = tuple(
                        ModeAlternative(
                            m,
                            bool(available[k]),
                            float(time[k]) if available[k] else 0.0,
                            float(cost[k]) if available[k] else 0.0,
                        )
                        for k, m in enumerate(MODES)
                    )
                    tours.append(
                        TourRecord(f"k{tour_count}", person_id, purpose, alternatives, MODES[chosen])
                    )
        households.append(HouseholdRecord(household_id, z, tract, tuple(members)))

    dataset = Dataset(
        tracts,
        tuple(households),
        tuple(persons),
        tuple(tours),
        NEIGHBOURHOOD_VARIABLES,
        HOUSEHOLD_VARIABLES,
        PERSON_VARIABLES,
    )
    log.info(
        "Simulated %s households, %s persons, %s tours (seed %s).",
        len(households),
        len(persons),
        len(tours),
        truth.seed,
    )
    return dataset, TrueLabels(household_labels, person_labels)


def write_labels(labels: TrueLabels, path: Path) -> None:
    frame = pd.DataFrame(
        [("household", k, v) for k, v in labels.household.items()]
        + [("person", k, v) for k, v in labels.person.items()],
        columns=["level", "id", "class"],
    )
    frame.to_csv(path, index=False, lineterminator="\n")


def read_labels(path: Path) -> TrueLabels:
    frame = pd.read_csv(path, dtype={"level": str, "id": str, "class": int})
    grouped = {level: dict(zip(g["id"], g["class"].astype(int))) for level, g in frame.groupby("level")}
    return TrueLabels(grouped.get("household", {}), grouped.get("person", {}))


@dataclass(frozen=True)
class RecoveryReport:
    block_errors: Dict[str, float]
    household_share_error: float
    individual_share_error: float
    household_accuracy: float
    person_accuracy: float

    @property
    def max_error(self) -> float:
        return max(self.block_errors.values(), default=0.0)

    def utility_error(self) -> float:
        """Largest error over tract and mode utility coefficients."""
        return max(
            (v for k, v in self.block_errors.items() if k.startswith(("beta", "lambda"))),
            default=0.0,
        )


def _label_shares(labels: Mapping[str, int], classes: int) -> np.ndarray:
    counts = np.bincount(np.fromiter(labels.values(), dtype=int) - 1, minlength=classes)
    return counts / max(1, counts.sum())


def recovery_report(
    truth: TruthSpec,
    labels: TrueLabels,
    result: ThreeStepResult,
    household_ids,
    person_ids,
) -> RecoveryReport:
    """Compares a canonicalized three-step fit with the generating parameters.

    The truth is put in canonical order by the same rule as the fit, using
    the generated label shares.
    """
    spec = truth.spec
    R, S = result.posteriors.household.shape[1], result.posteriors.person.shape[1]
    if (R, S) != (spec.R, spec.S):
        raise RecoveryError(
            f"Fit has {R}x{S} classes, truth has {spec.R}x{spec.S}."
        )
    layout = layout_from_spec(spec)
    if layout != result.layout:
        raise RecoveryError("Fit and truth use different parameter layouts.")

    true_household = _label_shares(labels.household, R)
    true_person = _label_shares(labels.person, S)
    household_perm = share_order(spec.household_classes, true_household)
    individual_perm = share_order(spec.individual_classes, true_person)
    theta = permute_hierarchy(layout, truth.theta, household_perm, individual_perm)
    inverse_h = np.argsort(household_perm)
    inverse_s = np.argsort(individual_perm)

    truth_params = layout.unpack(theta)
    fit_params = result.params()
    block_errors = {
        key: float(np.max(np.abs(truth_params[key] - fit_params[key])))
        if truth_params[key].size
        else 0.0
        for key in layout.keys
    }

    def accuracy(posterior, ids, truth_labels, inverse):
        predicted = posterior.argmax(axis=1)
        expected = np.array([inverse[truth_labels[i] - 1] for i in ids])
        return float(np.mean(predicted == expected)) if len(ids) else 1.0

    return RecoveryReport(
        block_errors=block_errors,
        household_share_error=float(
            np.max(np.abs(result.posteriors.household.mean(axis=0) - true_household[household_perm]))
        ),
        individual_share_error=float(
            np.max(np.abs(result.posteriors.person.mean(axis=0) - true_person[individual_perm]))
        ),
        household_accuracy=accuracy(
            result.posteriors.household, household_ids, labels.household, inverse_h
        ),
        person_accuracy=accuracy(result.posteriors.person, person_ids, labels.person, inverse_s),
    )
