"""
This Source Code Form is subject to the terms of the Mozilla Public
License, v. 2.0. If a copy of the MPL was not distributed with this
file, You can obtain one at http://mozilla.org/MPL/2.0/.
"""

# Panel data for the modality-style model: tracts, households, persons and
# home-based tours, read from four delimiter-separated tables.
#
# Table schemas (header names):
#
#   neighbourhoods: tract_id, <attribute columns...>
#   households:     household_id, chosen_tract, <covariate columns...>
#   persons:        person_id, household_id, <covariate columns...>
#   tours:          tour_id, person_id, purpose, chosen_mode,
#                   avail_<mode>, time_<mode>, cost_<mode> for each mode
#
# Identifiers are opaque strings. Times are minutes, costs are dollars.

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

log = logging.getLogger(__name__)

MODES: Tuple[str, ...] = (
    "private_vehicle",
    "private_transit",
    "public_transit",
    "bike",
    "walk",
)
BASE_MODE = "private_vehicle"
PURPOSES: Tuple[str, ...] = ("mandatory", "nonmandatory")

NEIGHBOURHOOD_VARIABLES: Tuple[str, ...] = (
    "density",
    "diversity",
    "design",
    "whites",
    "blacks",
    "hispanics",
    "immigrants",
    "upper_class",
    "upper_middle_class",
    "lower_middle_class",
    "median_rent",
    "median_value",
)
HOUSEHOLD_VARIABLES: Tuple[str, ...] = (
    "vehicles",
    "bikes",
    "single_family",
    "home_owner",
    "income",
    "size",
    "tenure",
    "workers",
    "students",
    "licences",
    "unrelated",
    "preschool_kids",
    "school_kids",
    "hispanic",
    "white",
    "black",
    "native_american",
)
PERSON_VARIABLES: Tuple[str, ...] = (
    "male",
    "married",
    "parent",
    "employed",
    "student",
    "age",
)

# range classes used by validation; columns outside these sets are only
# required to be finite
UNIT_INTERVAL_ATTRIBUTES = frozenset(
    (
        "diversity",
        "whites",
        "blacks",
        "hispanics",
        "immigrants",
        "upper_class",
        "upper_middle_class",
        "lower_middle_class",
    )
)
NONNEGATIVE_ATTRIBUTES = frozenset(("density", "design", "median_rent", "median_value"))
HOUSEHOLD_DUMMIES = frozenset(
    (
        "single_family",
        "home_owner",
        "tenure",
        "unrelated",
        "hispanic",
        "white",
        "black",
        "native_american",
    )
)
PERSON_DUMMIES = frozenset(("male", "married", "parent", "employed", "student"))


class DataError(Exception):
    def __init__(
        self,
        message: str,
        *,
        path: Optional[Path] = None,
        row: Optional[int] = None,
        column: Optional[str] = None,
    ) -> None:
        self.path = path
        self.row = row
        self.column = column
        where = []
        if path is not None:
            where.append(str(path))
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column {column!r}")
        prefix = ", ".join(where)
        super().__init__(f"{prefix}: {message}" if prefix else message)


@dataclass(frozen=True)
class FormatOptions:
    delimiter: str = ","
    decimal: str = "."


@dataclass(frozen=True)
class NeighbourhoodAlternative:
    tract_id: str
    attributes: Dict[str, float]


@dataclass(frozen=True)
class HouseholdRecord:
    household_id: str
    covariates: Dict[str, float]
    chosen_tract: str
    member_ids: Tuple[str, ...]


@dataclass(frozen=True)
class PersonRecord:
    person_id: str
    household_id: str
    covariates: Dict[str, float]


@dataclass(frozen=True)
class ModeAlternative:
    mode: str
    available: bool
    time: float
    cost: float


@dataclass(frozen=True)
class TourRecord:
    tour_id: str
    person_id: str
    purpose: str
    alternatives: Tuple[ModeAlternative, ...]
    chosen_mode: str

    def alternative(self, mode: str) -> ModeAlternative:
        return self.alternatives[MODES.index(mode)]


@dataclass(frozen=True)
class Dataset:
    neighbourhoods: Tuple[NeighbourhoodAlternative, ...]
    households: Tuple[HouseholdRecord, ...]
    persons: Tuple[PersonRecord, ...]
    tours: Tuple[TourRecord, ...]
    attribute_names: Tuple[str, ...]
    household_variables: Tuple[str, ...]
    person_variables: Tuple[str, ...]

    @property
    def H(self) -> int:
        return len(self.households)

    def persons_per_household(self) -> Dict[str, int]:
        """N_h keyed by household id."""
        return {h.household_id: len(h.member_ids) for h in self.households}

    def tours_per_person(self) -> Dict[Tuple[str, str], int]:
        """T_hnd keyed by (person id, purpose)."""
        counts = {(p.person_id, d): 0 for p in self.persons for d in PURPOSES}
        for tour in self.tours:
            key = (tour.person_id, tour.purpose)
            counts[key] = counts.get(key, 0) + 1
        return counts


@dataclass(frozen=True)
class Violation:
    table: str
    identifier: str
    message: str

    def __str__(self) -> str:
        return f"[{self.table}] {self.identifier}: {self.message}"


@dataclass
class ValidationReport:
    violations: List[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def __len__(self) -> int:
        return len(self.violations)

    def __iter__(self):
        return iter(self.violations)

    def add(self, table: str, identifier: str, message: str) -> None:
        self.violations.append(Violation(table, identifier, message))


def _read_table(
    path: Path, required: Sequence[str], options: FormatOptions
) -> pd.DataFrame:
    path = Path(path)
    if not path.is_file():
        raise DataError("file not found", path=path)

    frame = pd.read_csv(
        path,
        sep=options.delimiter,
        dtype=str,
        keep_default_na=False,
        skipinitialspace=True,
    )
    frame.columns = [c.strip() for c in frame.columns]
    for column in required:
        if column not in frame.columns:
            raise DataError("missing required column", path=path, column=column)
    return frame


def _parse_numeric(
    frame: pd.DataFrame,
    column: str,
    path: Path,
    options: FormatOptions,
    *,
    blank_ok: Optional[np.ndarray] = None,
) -> np.ndarray:
    raw = frame[column].str.strip()
    if options.decimal != ".":
        raw = raw.str.replace(options.decimal, ".", regex=False)
    blank = (raw == "").to_numpy()
    values = pd.to_numeric(raw.where(~blank, None), errors="coerce").to_numpy(dtype=float)

    allowed = blank_ok if blank_ok is not None else np.zeros(len(raw), dtype=bool)
    # a literal "nan" is as unusable as garbage
    bad = np.isnan(values) & ~(allowed & blank)
    if bad.any():
        row = int(np.flatnonzero(bad)[0])
        text = frame[column].iloc[row]
        problem = "missing value" if blank[row] else f"unparseable number {text!r}"
        raise DataError(problem, path=path, row=row + 2, column=column)
    return np.where(blank, 0.0, values)


def _unique_ids(frame: pd.DataFrame, column: str, path: Path) -> List[str]:
    ids = frame[column].str.strip()
    if (ids == "").any():
        row = int(np.flatnonzero((ids == "").to_numpy())[0])
        raise DataError("empty identifier", path=path, row=row + 2, column=column)
    dupes = ids.duplicated()
    if dupes.any():
        row = int(np.flatnonzero(dupes.to_numpy())[0])
        raise DataError(
            f"duplicate identifier {ids.iloc[row]!r}", path=path, row=row + 2, column=column
        )
    return ids.tolist()


def _covariate_columns(frame: pd.DataFrame, reserved: Iterable[str]) -> List[str]:
    reserved = set(reserved)
    return [c for c in frame.columns if c not in reserved]


def tour_columns() -> List[str]:
    columns = ["tour_id", "person_id", "purpose", "chosen_mode"]
    for mode in MODES:
        columns.extend((f"avail_{mode}", f"time_{mode}", f"cost_{mode}"))
    return columns


def load_dataset(
    neighbourhood_path: Path,
    household_path: Path,
    person_path: Path,
    tour_path: Path,
    format_options: Optional[FormatOptions] = None,
) -> Dataset:
    options = format_options or FormatOptions()

    tracts = _read_table(neighbourhood_path, ["tract_id"], options)
    tract_ids = _unique_ids(tracts, "tract_id", neighbourhood_path)
    attribute_names = tuple(_covariate_columns(tracts, ["tract_id"]))
    attributes = {
        name: _parse_numeric(tracts, name, neighbourhood_path, options)
        for name in attribute_names
    }
    neighbourhoods = tuple(
        NeighbourhoodAlternative(
            tract_id, {name: float(attributes[name][i]) for name in attribute_names}
        )
        for i, tract_id in enumerate(tract_ids)
    )

    households = _read_table(household_path, ["household_id", "chosen_tract"], options)
    household_ids = _unique_ids(households, "household_id", household_path)
    household_variables = tuple(
        _covariate_columns(households, ["household_id", "chosen_tract"])
    )
    z = {
        name: _parse_numeric(households, name, household_path, options)
        for name in household_variables
    }

    persons = _read_table(person_path, ["person_id", "household_id"], options)
    person_ids = _unique_ids(persons, "person_id", person_path)
    person_variables = tuple(_covariate_columns(persons, ["person_id", "household_id"]))
    w = {
        name: _parse_numeric(persons, name, person_path, options)
        for name in person_variables
    }

    known_households = set(household_ids)
    members: Dict[str, List[str]] = {h: [] for h in household_ids}
    person_households = persons["household_id"].str.strip().tolist()
    for row, (person_id, household_id) in enumerate(zip(person_ids, person_households)):
        if household_id not in known_households:
            raise DataError(
                f"person {person_id!r} references unknown household {household_id!r}",
                path=person_path,
                row=row + 2,
                column="household_id",
            )
        members[household_id].append(person_id)

    chosen_tracts = households["chosen_tract"].str.strip().tolist()
    household_records = tuple(
        HouseholdRecord(
            household_id,
            {name: float(z[name][i]) for name in household_variables},
            chosen_tracts[i],
            tuple(members[household_id]),
        )
        for i, household_id in enumerate(household_ids)
    )
    person_records = tuple(
        PersonRecord(
            person_id,
            person_households[i],
            {name: float(w[name][i]) for name in person_variables},
        )
        for i, person_id in enumerate(person_ids)
    )

    tours = _read_table(tour_path, tour_columns(), options)
    tour_ids = _unique_ids(tours, "tour_id", tour_path)
    known_persons = set(person_ids)
    availability = {}
    for mode in MODES:
        flags = _parse_numeric(tours, f"avail_{mode}", tour_path, options)
        not_flag = ~np.isin(flags, (0.0, 1.0))
        if not_flag.any():
            row = int(np.flatnonzero(not_flag)[0])
            raise DataError(
                "availability must be 0 or 1", path=tour_path, row=row + 2, column=f"avail_{mode}"
            )
        availability[mode] = flags.astype(bool)
    times = {
        mode: _parse_numeric(
            tours, f"time_{mode}", tour_path, options, blank_ok=~availability[mode]
        )
        for mode in MODES
    }
    costs = {
        mode: _parse_numeric(
            tours, f"cost_{mode}", tour_path, options, blank_ok=~availability[mode]
        )
        for mode in MODES
    }

    tour_persons = tours["person_id"].str.strip().tolist()
    purposes = tours["purpose"].str.strip().tolist()
    chosen_modes = tours["chosen_mode"].str.strip().tolist()
    tour_records = []
    for row, tour_id in enumerate(tour_ids):
        if tour_persons[row] not in known_persons:
            raise DataError(
                f"tour {tour_id!r} references unknown person {tour_persons[row]!r}",
                path=tour_path,
                row=row + 2,
                column="person_id",
            )
        if purposes[row] not in PURPOSES:
            raise DataError(
                f"unknown purpose {purposes[row]!r}", path=tour_path, row=row + 2, column="purpose"
            )
        if chosen_modes[row] not in MODES:
            raise DataError(
                f"unknown mode {chosen_modes[row]!r}",
                path=tour_path,
                row=row + 2,
                column="chosen_mode",
            )
        alternatives = tuple(
            ModeAlternative(
                mode,
                bool(availability[mode][row]),
                float(times[mode][row]),
                float(costs[mode][row]),
            )
            for mode in MODES
        )
        tour_records.append(
            TourRecord(tour_id, tour_persons[row], purposes[row], alternatives, chosen_modes[row])
        )

    ds = Dataset(
        neighbourhoods=neighbourhoods,
        households=household_records,
        persons=person_records,
        tours=tuple(tour_records),
        attribute_names=attribute_names,
        household_variables=household_variables,
        person_variables=person_variables,
    )
    log.info(
        "Loaded %s tracts, %s households, %s persons, %s tours.",
        len(neighbourhoods),
        ds.H,
        len(person_records),
        len(tour_records),
    )
    return ds


def load_directory(directory: Path, format_options: Optional[FormatOptions] = None) -> Dataset:
    """Loads the four tables from their conventional file names."""
    directory = Path(directory)
    paths = dataset_paths(directory)
    return load_dataset(*paths, format_options)


def dataset_paths(directory: Path) -> Tuple[Path, Path, Path, Path]:
    directory = Path(directory)
    return (
        directory / "neighbourhoods.csv",
        directory / "households.csv",
        directory / "persons.csv",
        directory / "tours.csv",
    )


def write_dataset(
    ds: Dataset, directory: Path, format_options: Optional[FormatOptions] = None
) -> Tuple[Path, Path, Path, Path]:
    options = format_options or FormatOptions()
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = dataset_paths(directory)

    def write(frame: pd.DataFrame, path: Path) -> None:
        frame.to_csv(
            path, sep=options.delimiter, decimal=options.decimal, index=False, lineterminator="\n"
        )

    write(
        pd.DataFrame(
            [{"tract_id": n.tract_id, **n.attributes} for n in ds.neighbourhoods],
            columns=["tract_id", *ds.attribute_names],
        ),
        paths[0],
    )
    write(
        pd.DataFrame(
            [
                {"household_id": h.household_id, "chosen_tract": h.chosen_tract, **h.covariates}
                for h in ds.households
            ],
            columns=["household_id", "chosen_tract", *ds.household_variables],
        ),
        paths[1],
    )
    write(
        pd.DataFrame(
            [
                {"person_id": p.person_id, "household_id": p.household_id, **p.covariates}
                for p in ds.persons
            ],
            columns=["person_id", "household_id", *ds.person_variables],
        ),
        paths[2],
    )
    rows = []
    for tour in ds.tours:
        row = {
            "tour_id": tour.tour_id,
            "person_id": tour.person_id,
            "purpose": tour.purpose,
            "chosen_mode": tour.chosen_mode,
        }
        for alt in tour.alternatives:
            row[f"avail_{alt.mode}"] = int(alt.available)
            row[f"time_{alt.mode}"] = alt.time
            row[f"cost_{alt.mode}"] = alt.cost
        rows.append(row)
    write(pd.DataFrame(rows, columns=tour_columns()), paths[3])
    return paths


def _check_range(
    report: ValidationReport,
    table: str,
    identifier: str,
    name: str,
    value: float,
    *,
    unit: bool = False,
    nonnegative: bool = False,
    dummy: bool = False,
) -> None:
    if not math.isfinite(value):
        report.add(table, identifier, f"{name} is not finite ({value})")
    elif unit and not 0.0 <= value <= 1.0:
        report.add(table, identifier, f"{name} = {value} lies outside [0, 1]")
    elif nonnegative and value < 0.0:
        report.add(table, identifier, f"{name} = {value} is negative")
    elif dummy and value not in (0.0, 1.0):
        report.add(table, identifier, f"dummy {name} = {value} is not 0 or 1")


def validate_dataset(ds: Dataset) -> ValidationReport:
    report = ValidationReport()

    seen = set()
    for tract in ds.neighbourhoods:
        if tract.tract_id in seen:
            report.add("neighbourhoods", tract.tract_id, "duplicate tract_id")
        seen.add(tract.tract_id)
        if tuple(tract.attributes) != ds.attribute_names:
            report.add("neighbourhoods", tract.tract_id, "attribute names differ from the header")
        for name, value in tract.attributes.items():
            _check_range(
                report,
                "neighbourhoods",
                tract.tract_id,
                name,
                value,
                unit=name in UNIT_INTERVAL_ATTRIBUTES or name.endswith("_share"),
                nonnegative=name in NONNEGATIVE_ATTRIBUTES,
            )

    tract_ids = seen
    household_ids = set()
    for household in ds.households:
        household_ids.add(household.household_id)
        if household.chosen_tract not in tract_ids:
            report.add(
                "households",
                household.household_id,
                f"chosen tract {household.chosen_tract!r} is not in the neighbourhood table",
            )
        if not household.member_ids:
            report.add("households", household.household_id, "household has no members")
        elif len(set(household.member_ids)) != len(household.member_ids):
            report.add("households", household.household_id, "duplicate member ids")
        for name, value in household.covariates.items():
            _check_range(
                report,
                "households",
                household.household_id,
                name,
                value,
                dummy=name in HOUSEHOLD_DUMMIES,
            )

    membership: Dict[str, str] = {}
    for household in ds.households:
        for person_id in household.member_ids:
            if person_id in membership:
                report.add("persons", person_id, "person listed in more than one household")
            membership[person_id] = household.household_id

    person_ids = set()
    for person in ds.persons:
        person_ids.add(person.person_id)
        if person.household_id not in household_ids:
            report.add("persons", person.person_id, f"unknown household {person.household_id!r}")
        elif membership.get(person.person_id) != person.household_id:
            report.add("persons", person.person_id, "not listed among its household's members")
        for name, value in person.covariates.items():
            _check_range(
                report,
                "persons",
                person.person_id,
                name,
                value,
                nonnegative=name == "age",
                dummy=name in PERSON_DUMMIES,
            )

    for tour in ds.tours:
        if tour.person_id not in person_ids:
            report.add("tours", tour.tour_id, f"unknown person {tour.person_id!r}")
        if tour.purpose not in PURPOSES:
            report.add("tours", tour.tour_id, f"unknown purpose {tour.purpose!r}")
        if tuple(a.mode for a in tour.alternatives) != MODES:
            report.add("tours", tour.tour_id, "mode alternatives out of order")
            continue
        if not any(a.available for a in tour.alternatives):
            report.add("tours", tour.tour_id, "no available mode")
        if tour.chosen_mode not in MODES or not tour.alternative(tour.chosen_mode).available:
            report.add("tours", tour.tour_id, f"chosen mode {tour.chosen_mode!r} is unavailable")
        for alt in tour.alternatives:
            if not alt.available:
                continue
            for name, value in (("time", alt.time), ("cost", alt.cost)):
                if not math.isfinite(value) or value < 0.0:
                    report.add(
                        "tours", tour.tour_id, f"{name} of {alt.mode} must be finite and >= 0"
                    )

    for violation in report:
        log.debug("Validation: %s", violation)
    return report


def _frozen(array: np.ndarray) -> np.ndarray:
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class IndexedDataset:
    """Array view of a validated :class:`Dataset`.

    Rows keep the source order. Every array is read-only.
    """

    source: Dataset
    tract_ids: Tuple[str, ...]
    tract_index: Mapping[str, int]
    attribute_names: Tuple[str, ...]
    tract_attributes: np.ndarray  # (tracts, attributes)
    household_ids: Tuple[str, ...]
    household_index: Mapping[str, int]
    household_variables: Tuple[str, ...]
    household_covariates: np.ndarray  # (H, covariates)
    chosen_tract: np.ndarray  # (H,)
    household_members: Tuple[np.ndarray, ...]
    person_ids: Tuple[str, ...]
    person_index: Mapping[str, int]
    person_variables: Tuple[str, ...]
    person_covariates: np.ndarray  # (P, covariates)
    person_household: np.ndarray  # (P,)
    person_tours: Tuple[np.ndarray, ...]
    tour_ids: Tuple[str, ...]
    tour_person: np.ndarray  # (T,)
    tour_purpose: np.ndarray  # (T,) index into PURPOSES
    availability: np.ndarray  # (T, modes) bool
    time: np.ndarray  # (T, modes)
    cost: np.ndarray  # (T, modes)
    chosen_mode: np.ndarray  # (T,) index into MODES

    @property
    def n_tracts(self) -> int:
        return len(self.tract_ids)

    @property
    def n_households(self) -> int:
        return len(self.household_ids)

    @property
    def n_persons(self) -> int:
        return len(self.person_ids)

    @property
    def n_tours(self) -> int:
        return len(self.tour_ids)

    def tract_row(self, tract_id: str) -> Dict[str, float]:
        row = self.tract_attributes[self.tract_index[tract_id]]
        return dict(zip(self.attribute_names, row.tolist()))

    def persons_of(self, household_id: str) -> List[str]:
        members = self.household_members[self.household_index[household_id]]
        return [self.person_ids[i] for i in members]

    def tours_of(self, person_id: str) -> List[str]:
        tours = self.person_tours[self.person_index[person_id]]
        return [self.tour_ids[i] for i in tours]

    @staticmethod
    def _columns(matrix: np.ndarray, available: Sequence[str], names: Sequence[str]) -> np.ndarray:
        out = np.empty((matrix.shape[0], len(names)))
        for j, name in enumerate(names):
            out[:, j] = 1.0 if name == "const" else matrix[:, available.index(name)]
        return out

    def tract_matrix(self, names: Sequence[str]) -> np.ndarray:
        return self._columns(self.tract_attributes, self.attribute_names, names)

    def household_matrix(self, names: Sequence[str]) -> np.ndarray:
        return self._columns(self.household_covariates, self.household_variables, names)

    def person_matrix(self, names: Sequence[str]) -> np.ndarray:
        return self._columns(self.person_covariates, self.person_variables, names)


def index_dataset(ds: Dataset) -> IndexedDataset:
    tract_ids = tuple(n.tract_id for n in ds.neighbourhoods)
    tract_index = {t: i for i, t in enumerate(tract_ids)}
    tract_attributes = np.array(
        [[n.attributes[a] for a in ds.attribute_names] for n in ds.neighbourhoods], dtype=float
    ).reshape(len(tract_ids), len(ds.attribute_names))

    household_ids = tuple(h.household_id for h in ds.households)
    household_index = {h: i for i, h in enumerate(household_ids)}
    household_covariates = np.array(
        [[h.covariates[v] for v in ds.household_variables] for h in ds.households], dtype=float
    ).reshape(len(household_ids), len(ds.household_variables))
    chosen_tract = np.array([tract_index[h.chosen_tract] for h in ds.households], dtype=np.intp)

    person_ids = tuple(p.person_id for p in ds.persons)
    person_index = {p: i for i, p in enumerate(person_ids)}
    person_covariates = np.array(
        [[p.covariates[v] for v in ds.person_variables] for p in ds.persons], dtype=float
    ).reshape(len(person_ids), len(ds.person_variables))
    person_household = np.array(
        [household_index[p.household_id] for p in ds.persons], dtype=np.intp
    )
    household_members = tuple(
        _frozen(np.array([person_index[m] for m in h.member_ids], dtype=np.intp))
        for h in ds.households
    )

    n_tours = len(ds.tours)
    tour_ids = tuple(t.tour_id for t in ds.tours)
    tour_person = np.array([person_index[t.person_id] for t in ds.tours], dtype=np.intp)
    tour_purpose = np.array([PURPOSES.index(t.purpose) for t in ds.tours], dtype=np.intp)
    availability = np.zeros((n_tours, len(MODES)), dtype=bool)
    time = np.zeros((n_tours, len(MODES)))
    cost = np.zeros((n_tours, len(MODES)))
    for i, tour in enumerate(ds.tours):
        for k, alt in enumerate(tour.alternatives):
            availability[i, k] = alt.available
            time[i, k] = alt.time
            cost[i, k] = alt.cost
    chosen_mode = np.array([MODES.index(t.chosen_mode) for t in ds.tours], dtype=np.intp)

    by_person: List[List[int]] = [[] for _ in person_ids]
    for i, p in enumerate(tour_person):
        by_person[p].append(i)
    person_tours = tuple(_frozen(np.array(t, dtype=np.intp)) for t in by_person)

    return IndexedDataset(
        source=ds,
        tract_ids=tract_ids,
        tract_index=tract_index,
        attribute_names=ds.attribute_names,
        tract_attributes=_frozen(tract_attributes),
        household_ids=household_ids,
        household_index=household_index,
        household_variables=ds.household_variables,
        household_covariates=_frozen(household_covariates),
        chosen_tract=_frozen(chosen_tract),
        household_members=household_members,
        person_ids=person_ids,
        person_index=person_index,
        person_variables=ds.person_variables,
        person_covariates=_frozen(person_covariates),
        person_household=_frozen(person_household),
        person_tours=person_tours,
        tour_ids=tour_ids,
        tour_person=_frozen(tour_person),
        tour_purpose=_frozen(tour_purpose),
        availability=_frozen(availability),
        time=_frozen(time),
        cost=_frozen(cost),
        chosen_mode=_frozen(chosen_mode),
    )
