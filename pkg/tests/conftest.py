import copy

import pytest

from modality.data import index_dataset
from modality.estimation import EmControls
from modality.likelihood import HierarchicalModel
from modality.spec import VariableCatalogue, model_spec_from_mapping
from modality.synthgen import simulate_population, truth_from_mapping

# two purposes share one utility shape: constant for public transit, time, cost
SMALL_MODEL = {
    "household_classes": 1,
    "individual_classes": 1,
    "household_membership_variables": ["const", "income"],
    "individual_membership_variables": ["const", "age"],
    "neighbourhood": {"default": {"variables": ["density", "diversity"]}},
    "modes": {"default": {"asc": ["public_transit"]}},
}

MODE_TRUTH = {
    "gamma[1][2].const": -0.3,
    "lambda[mandatory][1].asc_public_transit": -1.0,
    "lambda[mandatory][1].time": -0.08,
    "lambda[mandatory][1].cost": -0.6,
    "lambda[mandatory][2].asc_public_transit": 1.5,
    "lambda[mandatory][2].time": -0.01,
    "lambda[mandatory][2].cost": -0.05,
    "lambda[nonmandatory][1].asc_public_transit": -1.0,
    "lambda[nonmandatory][1].time": -0.06,
    "lambda[nonmandatory][1].cost": -0.4,
    "lambda[nonmandatory][2].asc_public_transit": 1.0,
    "lambda[nonmandatory][2].time": -0.02,
    "lambda[nonmandatory][2].cost": -0.1,
}


def model_mapping(**overrides):
    out = copy.deepcopy(SMALL_MODEL)
    out.update(overrides)
    return out


def simulate(model, parameters=None, *, seed=0, households=60, tracts=8, **population):
    truth = truth_from_mapping(
        {
            "seed": seed,
            "model": model,
            "parameters": parameters or {},
            "population": {"households": households, "tracts": tracts, **population},
        }
    )
    ds, labels = simulate_population(truth)
    return truth, ds, labels


def bind(model, ds):
    spec = model_spec_from_mapping(model, VariableCatalogue.from_dataset(ds))
    return HierarchicalModel(spec, index_dataset(ds))


@pytest.fixture(scope="session")
def quick_controls():
    return EmControls(max_iterations=300, starts=2, seed=5)


@pytest.fixture(scope="session")
def one_class():
    model = model_mapping()
    truth, ds, labels = simulate(
        model,
        {
            "lambda[mandatory][1].time": -0.05,
            "lambda[mandatory][1].cost": -0.3,
            "lambda[nonmandatory][1].time": -0.04,
            "beta[1].density": 0.8,
        },
        seed=3,
    )
    return bind(model, ds)


@pytest.fixture(scope="session")
def two_class_mode():
    model = model_mapping(individual_classes=2, individual_membership_variables=["const"])
    truth, ds, labels = simulate(model, MODE_TRUTH, seed=11, households=120)
    return bind(model, ds)


HIERARCHICAL_MODEL = model_mapping(
    household_classes=2,
    individual_classes=2,
    household_membership_variables=["const"],
    individual_membership_variables=["const"],
)

HIERARCHICAL_TRUTH = {
    **MODE_TRUTH,
    "alpha[2].const": 0.2,
    "beta[1].density": 1.0,
    "beta[2].density": -1.0,
    "beta[2].diversity": 1.5,
    "gamma[1][2].const": -1.0,
    "gamma[2][2].const": 1.0,
}


@pytest.fixture(scope="session")
def hierarchical():
    truth, ds, labels = simulate(HIERARCHICAL_MODEL, HIERARCHICAL_TRUTH, seed=23, households=80)
    return bind(HIERARCHICAL_MODEL, ds)
