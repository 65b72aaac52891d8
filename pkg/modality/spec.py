"""
This Source Code Form is subject to the terms of the Mozilla Public
License, v. 2.0. If a copy of the MPL was not distributed with this
file, You can obtain one at http://mozilla.org/MPL/2.0/.
"""

# Model specification grammar (JSON):
#
#   {
#     "household_classes": R,                     (default 1)
#     "individual_classes": S,                    (default 1)
#     "household_membership_variables": [...],    (default: const + all; [] = const only)
#     "individual_membership_variables": [...],
#     "neighbourhood": {
#       "default": {"variables": [...], "consideration": "all"},
#       "classes": {"2": {"consideration": {"tracts": [...]}}}
#     },
#     "modes": {
#       "default": {"consideration": [...], "asc": [...], "time": true, "cost": true},
#       "classes": {
#         "1": {"consideration": ["private_vehicle"]},
#         "2": {"mandatory": {...}, "nonmandatory": {"cost": false}}
#       }
#     },
#     "estimation": {...}                         (read by modality.estimation)
#   }
#
# Tract consideration is "all", {"tracts": [ids]} or
# {"attribute": name, "min": lo, "max": hi}. Class keys are 1-based.

from __future__ import annotations

import enum
import json
import logging
import math
from dataclasses import dataclass, replace
from typing import Any, Dict, Iterable, Mapping, Optional, Sequence, Tuple

import numpy as np

from utils.formats import human_join
from utils.fuzzy import suggest

from .data import (
    BASE_MODE,
    HOUSEHOLD_VARIABLES,
    MODES,
    NEIGHBOURHOOD_VARIABLES,
    PERSON_VARIABLES,
    PURPOSES,
)

log = logging.getLogger(__name__)

CONSTANT = "const"


class SpecError(Exception):
    pass


class SubModel(enum.Enum):
    mode_lccm = "mode"
    neighbourhood_lccm = "neighbourhood"
    conditional_membership = "conditional"


def _unknown(kind: str, name: str, valid: Sequence[str]) -> SpecError:
    hints = suggest(name, valid)
    hint = f" Did you mean {human_join([repr(h) for h in hints])}?" if hints else ""
    return SpecError(
        f"Unknown {kind} {name!r}.{hint} Valid names: {', '.join(valid) or '(none)'}."
    )


@dataclass(frozen=True)
class VariableCatalogue:
    neighbourhood: Tuple[str, ...]
    household: Tuple[str, ...]
    person: Tuple[str, ...]

    @classmethod
    def from_dataset(cls, ds) -> VariableCatalogue:
        return cls(
            tuple(ds.attribute_names), tuple(ds.household_variables), tuple(ds.person_variables)
        )


DEFAULT_CATALOGUE = VariableCatalogue(NEIGHBOURHOOD_VARIABLES, HOUSEHOLD_VARIABLES, PERSON_VARIABLES)


@dataclass(frozen=True)
class TractFilter:
    """A household class's tract consideration set J_r."""

    tracts: Optional[Tuple[str, ...]] = None
    attribute: Optional[str] = None
    minimum: float = -math.inf
    maximum: float = math.inf

    @property
    def is_all(self) -> bool:
        return self.tracts is None and self.attribute is None

    def mask(self, data) -> np.ndarray:
        if self.tracts is not None:
            missing = [t for t in self.tracts if t not in data.tract_index]
            if missing:
                raise SpecError(f"Consideration set names unknown tracts: {', '.join(missing)}.")
            out = np.zeros(data.n_tracts, dtype=bool)
            out[[data.tract_index[t] for t in self.tracts]] = True
        elif self.attribute is not None:
            values = data.tract_attributes[:, data.attribute_names.index(self.attribute)]
            out = (values >= self.minimum) & (values <= self.maximum)
        else:
            out = np.ones(data.n_tracts, dtype=bool)
        if not out.any():
            raise SpecError(f"Empty tract consideration set ({self.describe()}).")
        return out

    def describe(self) -> str:
        if self.tracts is not None:
            return f"{len(self.tracts)} listed tracts"
        if self.attribute is not None:
            return f"{self.minimum} <= {self.attribute} <= {self.maximum}"
        return "all tracts"


@dataclass(frozen=True)
class HouseholdClassSpec:
    variables: Tuple[str, ...]
    consideration: TractFilter = TractFilter()


@dataclass(frozen=True)
class ModeUtility:
    """Class- and purpose-specific mode choice utility: K_ds and its terms."""

    consideration: Tuple[str, ...]
    asc: Tuple[str, ...]
    time: bool
    cost: bool

    @property
    def columns(self) -> Tuple[str, ...]:
        cols = [f"asc_{m}" for m in self.asc]
        if self.time:
            cols.append("time")
        if self.cost:
            cols.append("cost")
        return tuple(cols)

    @property
    def mask(self) -> np.ndarray:
        return np.array([m in self.consideration for m in MODES])


@dataclass(frozen=True)
class IndividualClassSpec:
    mandatory: ModeUtility
    nonmandatory: ModeUtility

    def utility(self, purpose: str) -> ModeUtility:
        return getattr(self, purpose)


@dataclass(frozen=True)
class ModelSpec:
    household_classes: Tuple[HouseholdClassSpec, ...]
    individual_classes: Tuple[IndividualClassSpec, ...]
    household_membership_variables: Tuple[str, ...]
    individual_membership_variables: Tuple[str, ...]
    household_default: HouseholdClassSpec
    individual_default: IndividualClassSpec
    base_household_class: int = 1
    base_individual_class: int = 1
    base_mode: str = BASE_MODE

    @property
    def R(self) -> int:
        return len(self.household_classes)

    @property
    def S(self) -> int:
        return len(self.individual_classes)

    def with_classes(
        self, *, household: Optional[int] = None, individual: Optional[int] = None
    ) -> ModelSpec:
        """Copies the spec with new class counts, padding with the default class."""

        def resize(classes, n, default):
            if n is None:
                return classes
            if n < 1:
                raise SpecError("Class counts must be at least 1.")
            return tuple(classes[:n]) + (default,) * max(0, n - len(classes))

        return replace(
            self,
            household_classes=resize(self.household_classes, household, self.household_default),
            individual_classes=resize(
                self.individual_classes, individual, self.individual_default
            ),
        )

    def validate(self, catalogue: VariableCatalogue) -> None:
        def check(names: Iterable[str], valid: Sequence[str], kind: str, constant: bool):
            for name in names:
                if constant and name == CONSTANT:
                    continue
                if name not in valid:
                    raise _unknown(kind, name, list(valid) + ([CONSTANT] if constant else []))

        check(self.household_membership_variables, catalogue.household, "household variable", True)
        check(self.individual_membership_variables, catalogue.person, "person variable", True)
        for cls in self.household_classes:
            check(cls.variables, catalogue.neighbourhood, "neighbourhood variable", False)
            if cls.consideration.attribute is not None:
                check(
                    [cls.consideration.attribute],
                    catalogue.neighbourhood,
                    "neighbourhood variable",
                    False,
                )


def _expect(value: Any, kind: type, where: str):
    if not isinstance(value, kind) or (kind is int and isinstance(value, bool)):
        raise SpecError(f"{where} must be of type {kind.__name__}.")
    return value


def _names(value: Any, where: str) -> Tuple[str, ...]:
    _expect(value, list, where)
    for item in value:
        _expect(item, str, where)
    if len(set(value)) != len(value):
        raise SpecError(f"{where} lists a name twice.")
    return tuple(value)


def _check_keys(raw: Mapping[str, Any], allowed: Iterable[str], where: str) -> None:
    allowed = list(allowed)
    for key in raw:
        if key not in allowed:
            raise _unknown(f"key in {where}", key, allowed)


def _tract_filter(raw: Any, catalogue: VariableCatalogue, where: str) -> TractFilter:
    if raw in (None, "all"):
        return TractFilter()
    if isinstance(raw, list):
        raw = {"tracts": raw}
    _expect(raw, dict, where)
    _check_keys(raw, ("tracts", "attribute", "min", "max"), where)
    if "tracts" in raw:
        tracts = _names(raw["tracts"], f"{where}.tracts")
        if not tracts:
            raise SpecError(f"{where}: empty consideration set.")
        return TractFilter(tracts=tracts)
    attribute = _expect(raw.get("attribute"), str, f"{where}.attribute")
    if attribute not in catalogue.neighbourhood:
        raise _unknown("neighbourhood variable", attribute, catalogue.neighbourhood)
    return TractFilter(
        attribute=attribute,
        minimum=float(raw.get("min", -math.inf)),
        maximum=float(raw.get("max", math.inf)),
    )


def _household_class(
    raw: Mapping[str, Any], base: Mapping[str, Any], catalogue: VariableCatalogue, where: str
) -> HouseholdClassSpec:
    _expect(raw, dict, where)
    _check_keys(raw, ("variables", "consideration"), where)
    merged = {**base, **raw}
    if "variables" in merged:
        variables = _names(merged["variables"], f"{where}.variables")
        for name in variables:
            if name not in catalogue.neighbourhood:
                raise _unknown("neighbourhood variable", name, catalogue.neighbourhood)
    else:
        variables = catalogue.neighbourhood
    return HouseholdClassSpec(
        variables, _tract_filter(merged.get("consideration"), catalogue, f"{where}.consideration")
    )


def _mode_utility(
    raw: Mapping[str, Any], base: Mapping[str, Any], where: str
) -> ModeUtility:
    _expect(raw, dict, where)
    _check_keys(raw, ("consideration", "asc", "time", "cost"), where)

    if "consideration" in raw or "consideration" in base:
        listed = _names(raw.get("consideration", base.get("consideration")), f"{where}.consideration")
    else:
        listed = MODES
    for mode in listed:
        if mode not in MODES:
            raise _unknown("mode", mode, MODES)
    if not listed:
        raise SpecError(f"{where}: empty consideration set.")
    if BASE_MODE not in listed:
        raise SpecError(f"{where}: the base mode {BASE_MODE!r} must be considered.")
    consideration = tuple(m for m in MODES if m in listed)
    others = [m for m in consideration if m != BASE_MODE]

    if "asc" in raw:
        asc_listed = _names(raw["asc"], f"{where}.asc")
        for mode in asc_listed:
            if mode not in others:
                raise SpecError(
                    f"{where}: no constant for {mode!r}; constants exist for "
                    f"considered non-base modes only ({', '.join(others) or 'none'})."
                )
    elif "asc" in base:
        asc_listed = [m for m in _names(base["asc"], f"{where}.asc") if m in others]
    else:
        asc_listed = others
    asc = tuple(m for m in others if m in asc_listed)

    singleton = len(consideration) == 1
    terms = {}
    for term in ("time", "cost"):
        if term in raw:
            wanted = _expect(raw[term], bool, f"{where}.{term}")
            if wanted and singleton:
                raise SpecError(f"{where}: a single-mode class has no estimable {term} term.")
        else:
            wanted = _expect(base.get(term, True), bool, f"{where}.{term}") and not singleton
        terms[term] = wanted
    return ModeUtility(consideration, asc, terms["time"], terms["cost"])


def _individual_class(
    raw: Mapping[str, Any], base: Mapping[str, Any], where: str
) -> IndividualClassSpec:
    _expect(raw, dict, where)
    if any(k in raw for k in PURPOSES):
        _check_keys(raw, PURPOSES, where)
        per_purpose = {d: raw.get(d, {}) for d in PURPOSES}
    else:
        per_purpose = {d: raw for d in PURPOSES}

    utilities = {}
    for d in PURPOSES:
        base_d = base.get(d, {}) if any(k in base for k in PURPOSES) else base
        utilities[d] = _mode_utility(per_purpose[d], base_d, f"{where}.{d}")
    return IndividualClassSpec(**utilities)


def _class_entries(raw: Any, count: int, where: str) -> Dict[int, Any]:
    if raw is None:
        return {}
    _expect(raw, dict, where)
    out = {}
    for key, value in raw.items():
        try:
            index = int(key)
        except ValueError:
            raise SpecError(f"{where}: class key {key!r} is not an integer.") from None
        if not 1 <= index <= count:
            raise SpecError(f"{where}: class {index} is outside 1..{count}.")
        out[index] = value
    return out


def _membership(raw: Any, valid: Sequence[str], kind: str, where: str) -> Tuple[str, ...]:
    if raw is None:
        return (CONSTANT, *valid)
    names = _names(raw, where)
    for name in names:
        if name != CONSTANT and name not in valid:
            raise _unknown(kind, name, [CONSTANT, *valid])
    return names or (CONSTANT,)


def model_spec_from_mapping(
    raw: Mapping[str, Any], catalogue: VariableCatalogue = DEFAULT_CATALOGUE
) -> ModelSpec:
    _expect(raw, dict, "model specification")
    _check_keys(
        raw,
        (
            "household_classes",
            "individual_classes",
            "household_membership_variables",
            "individual_membership_variables",
            "neighbourhood",
            "modes",
            "estimation",
        ),
        "model specification",
    )
    R = _expect(raw.get("household_classes", 1), int, "household_classes")
    S = _expect(raw.get("individual_classes", 1), int, "individual_classes")
    if R < 1 or S < 1:
        raise SpecError("household_classes and individual_classes must be at least 1.")

    neighbourhood = raw.get("neighbourhood", {})
    _expect(neighbourhood, dict, "neighbourhood")
    _check_keys(neighbourhood, ("default", "classes"), "neighbourhood")
    n_base = neighbourhood.get("default", {})
    household_default = _household_class(n_base, {}, catalogue, "neighbourhood.default")
    n_classes = _class_entries(neighbourhood.get("classes"), R, "neighbourhood.classes")
    household_classes = tuple(
        _household_class(n_classes[r], n_base, catalogue, f"neighbourhood.classes.{r}")
        if r in n_classes
        else household_default
        for r in range(1, R + 1)
    )

    modes = raw.get("modes", {})
    _expect(modes, dict, "modes")
    _check_keys(modes, ("default", "classes"), "modes")
    m_base = modes.get("default", {})
    individual_default = _individual_class(m_base, {}, "modes.default")
    m_classes = _class_entries(modes.get("classes"), S, "modes.classes")
    individual_classes = tuple(
        _individual_class(m_classes[s], m_base, f"modes.classes.{s}")
        if s in m_classes
        else individual_default
        for s in range(1, S + 1)
    )

    spec = ModelSpec(
        household_classes=household_classes,
        individual_classes=individual_classes,
        household_membership_variables=_membership(
            raw.get("household_membership_variables"),
            catalogue.household,
            "household variable",
            "household_membership_variables",
        ),
        individual_membership_variables=_membership(
            raw.get("individual_membership_variables"),
            catalogue.person,
            "person variable",
            "individual_membership_variables",
        ),
        household_default=household_default,
        individual_default=individual_default,
    )
    spec.validate(catalogue)
    return spec


def parse_model_spec(
    text: str, catalogue: VariableCatalogue = DEFAULT_CATALOGUE
) -> ModelSpec:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise SpecError(f"Model specification is not valid JSON: {e}") from None
    return model_spec_from_mapping(raw, catalogue)


@dataclass(frozen=True)
class Block:
    key: str
    shape: Tuple[int, ...]
    names: Tuple[str, ...]
    offset: int

    @property
    def size(self) -> int:
        return len(self.names)

    @property
    def slice(self) -> slice:
        return slice(self.offset, self.offset + self.size)


class ParameterLayout:
    """Flattening of named parameter blocks into one vector.

    Fixed-at-zero entries (base classes, base mode constant) have no index.
    """

    def __init__(self, blocks: Sequence[Tuple[str, Tuple[int, ...], Sequence[str]]]) -> None:
        built = []
        offset = 0
        for key, shape, names in blocks:
            if int(np.prod(shape)) != len(names):
                raise ValueError(f"block {key} has {len(names)} names for shape {shape}")
            built.append(Block(key, tuple(shape), tuple(names), offset))
            offset += len(names)
        self.blocks: Tuple[Block, ...] = tuple(built)
        self.names: Tuple[str, ...] = tuple(n for b in self.blocks for n in b.names)
        self._index = {name: i for i, name in enumerate(self.names)}
        self._blocks = {b.key: b for b in self.blocks}
        if len(self._index) != len(self.names):
            raise ValueError("duplicate parameter names in layout")

    def __len__(self) -> int:
        return len(self.names)

    @property
    def size(self) -> int:
        return len(self.names)

    def __eq__(self, other) -> bool:
        return isinstance(other, ParameterLayout) and self.blocks == other.blocks

    def __hash__(self) -> int:
        return hash(self.blocks)

    def __repr__(self) -> str:
        return f"<ParameterLayout blocks={len(self.blocks)} size={self.size}>"

    def __contains__(self, key: str) -> bool:
        return key in self._blocks

    @property
    def keys(self) -> Tuple[str, ...]:
        return tuple(self._blocks)

    def index(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise _unknown("parameter", name, self.names) from None

    def name(self, index: int) -> str:
        return self.names[index]

    def block(self, key: str) -> Block:
        return self._blocks[key]

    def check(self, theta: np.ndarray) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.size,):
            raise ValueError(f"parameter vector has shape {theta.shape}, layout needs ({self.size},)")
        if not np.all(np.isfinite(theta)):
            raise ValueError("parameter vector has non-finite entries")
        return theta

    def unpack(self, theta: np.ndarray) -> Dict[str, np.ndarray]:
        theta = self.check(theta)
        return {b.key: theta[b.slice].reshape(b.shape) for b in self.blocks}

    def pack(self, values: Mapping[str, np.ndarray]) -> np.ndarray:
        theta = np.zeros(self.size)
        for b in self.blocks:
            theta[b.slice] = np.asarray(values[b.key], dtype=float).reshape(-1)
        return theta

    def reconcile(self, expected: int, label: str = "model") -> int:
        """Compares against a tabulated parameter count; returns the difference."""
        difference = self.size - expected
        if difference:
            log.warning(
                "Parameter count for %s is %s, tabulated count is %s (difference %+d).",
                label,
                self.size,
                expected,
                difference,
            )
        return difference


def _alpha(spec: ModelSpec):
    names = [
        f"alpha[{r}].{v}"
        for r in range(2, spec.R + 1)
        for v in spec.household_membership_variables
    ]
    return ("alpha", (spec.R - 1, len(spec.household_membership_variables)), names)


def _betas(spec: ModelSpec):
    return [
        (f"beta[{r}]", (len(c.variables),), [f"beta[{r}].{v}" for v in c.variables])
        for r, c in enumerate(spec.household_classes, start=1)
    ]


def _gamma(spec: ModelSpec, conditional: bool):
    variables = spec.individual_membership_variables
    if conditional:
        names = [
            f"gamma[{r}][{s}].{v}"
            for r in range(1, spec.R + 1)
            for s in range(2, spec.S + 1)
            for v in variables
        ]
        return ("gamma", (spec.R, spec.S - 1, len(variables)), names)
    names = [f"gamma[{s}].{v}" for s in range(2, spec.S + 1) for v in variables]
    return ("gamma", (1, spec.S - 1, len(variables)), names)


def _lambdas(spec: ModelSpec):
    blocks = []
    for d in PURPOSES:
        for s, c in enumerate(spec.individual_classes, start=1):
            columns = c.utility(d).columns
            key = f"lambda[{d}][{s}]"
            blocks.append((key, (len(columns),), [f"{key}.{col}" for col in columns]))
    return blocks


def layout_from_spec(spec: ModelSpec) -> ParameterLayout:
    """Full layout: alpha, beta by class, gamma by household class, lambda by purpose then class."""
    return ParameterLayout([_alpha(spec), *_betas(spec), _gamma(spec, True), *_lambdas(spec)])


def sub_model_layout(spec: ModelSpec, sub_model: SubModel) -> ParameterLayout:
    if sub_model is SubModel.mode_lccm:
        return ParameterLayout([_gamma(spec, False), *_lambdas(spec)])
    if sub_model is SubModel.neighbourhood_lccm:
        return ParameterLayout([_alpha(spec), *_betas(spec)])
    return ParameterLayout([_gamma(spec, True)])


def build_parameter_layout(spec: ModelSpec, ds) -> ParameterLayout:
    spec.validate(VariableCatalogue.from_dataset(ds))
    layout = layout_from_spec(spec)
    log.info("Parameter layout: %s parameters in %s blocks.", layout.size, len(layout.blocks))
    return layout


def seed_parameters(
    layout: ParameterLayout,
    strategy: str = "zeros",
    *,
    scale: float = 0.5,
    seed: Optional[int] = None,
) -> np.ndarray:
    if strategy == "zeros":
        return np.zeros(layout.size)
    if strategy == "random":
        rng = np.random.default_rng(seed)
        return rng.uniform(-scale, scale, size=layout.size)
    raise SpecError(f"Unknown initialisation strategy {strategy!r}.")
