from types import SimpleNamespace

import numpy as np
import pytest

from modality.data import HOUSEHOLD_VARIABLES, MODES, NEIGHBOURHOOD_VARIABLES, PERSON_VARIABLES
from modality.spec import (
    SpecError,
    SubModel,
    TractFilter,
    VariableCatalogue,
    build_parameter_layout,
    layout_from_spec,
    model_spec_from_mapping,
    parse_model_spec,
    seed_parameters,
    sub_model_layout,
)

from conftest import bind, model_mapping, simulate

SMALL_CATALOGUE = VariableCatalogue(("density", "diversity"), ("income",), ("age", "male"))


def test_defaults():
    spec = model_spec_from_mapping({})
    assert (spec.R, spec.S) == (1, 1)
    assert spec.household_membership_variables == ("const", *HOUSEHOLD_VARIABLES)
    assert spec.individual_membership_variables == ("const", *PERSON_VARIABLES)
    assert spec.household_classes[0].variables == NEIGHBOURHOOD_VARIABLES
    assert spec.household_classes[0].consideration.is_all
    utility = spec.individual_classes[0].utility("mandatory")
    assert utility.consideration == MODES
    assert utility.columns == tuple(f"asc_{m}" for m in MODES[1:]) + ("time", "cost")
    # 12 tract attributes plus 4 constants, time and cost for each purpose
    assert layout_from_spec(spec).size == 12 + 2 * 6


def test_layout_sizes_and_names():
    spec = model_spec_from_mapping({"household_classes": 2, "individual_classes": 3})
    layout = layout_from_spec(spec)
    assert layout.block("alpha").shape == (1, 18)
    assert layout.block("gamma").shape == (2, 2, 7)
    assert layout.size == 18 + 2 * 12 + 28 + 2 * 3 * 6
    assert sub_model_layout(spec, SubModel.mode_lccm).size == 14 + 36
    assert sub_model_layout(spec, SubModel.neighbourhood_lccm).size == 18 + 24
    assert sub_model_layout(spec, SubModel.conditional_membership).size == 28
    assert layout.names[0] == "alpha[2].const"
    assert "gamma[2][3].age" in layout.names
    assert "gamma[3].age" in sub_model_layout(spec, SubModel.mode_lccm).names
    assert "lambda[nonmandatory][3].asc_walk" in layout.names
    assert layout.reconcile(layout.size) == 0
    assert layout.reconcile(layout.size - 2) == 2


def test_pack_and_check():
    layout = layout_from_spec(model_spec_from_mapping(model_mapping(household_classes=2)))
    theta = np.arange(layout.size, dtype=float)
    params = layout.unpack(theta)
    assert params["alpha"].shape == (1, 2)
    np.testing.assert_array_equal(layout.pack(params), theta)
    assert theta[layout.index("beta[2].diversity")] == params["beta[2]"][1]
    with pytest.raises(ValueError):
        layout.unpack(theta[:-1])
    with pytest.raises(ValueError):
        layout.unpack(np.full(layout.size, np.nan))
    with pytest.raises(SpecError, match="Did you mean"):
        layout.index("beta[2].diversty")


def test_empty_membership_list_is_constant_only():
    spec = model_spec_from_mapping({"household_membership_variables": []}, SMALL_CATALOGUE)
    assert spec.household_membership_variables == ("const",)
    assert spec.individual_membership_variables == ("const", "age", "male")


def test_mode_classes():
    spec = model_spec_from_mapping(
        {
            "individual_classes": 3,
            "modes": {
                "default": {"asc": ["public_transit", "walk"]},
                "classes": {
                    "1": {"consideration": ["private_vehicle"]},
                    "3": {"nonmandatory": {"cost": False}},
                },
            },
        }
    )
    first, second, third = spec.individual_classes
    assert first.utility("mandatory").columns == ()
    assert first.utility("mandatory").mask.tolist() == [True, False, False, False, False]
    assert second.utility("mandatory").columns == ("asc_public_transit", "asc_walk", "time", "cost")
    assert third.utility("mandatory").columns == ("asc_public_transit", "asc_walk", "time", "cost")
    assert third.utility("nonmandatory").columns == ("asc_public_transit", "asc_walk", "time")


@pytest.mark.parametrize(
    "raw, message",
    [
        ({"households": 2}, "Unknown key"),
        ({"household_classes": 0}, "at least 1"),
        ({"household_classes": True}, "type int"),
        ({"modes": {"classes": {"2": {}}}}, "outside 1..1"),
        ({"modes": {"classes": {"one": {}}}}, "not an integer"),
        ({"modes": {"default": {"consideration": ["walk"]}}}, "base mode"),
        ({"modes": {"default": {"consideration": ["private_vehicle", "tram"]}}}, "Unknown mode"),
        ({"modes": {"default": {"consideration": ["private_vehicle", "walk"], "asc": ["bike"]}}}, "no constant"),
        ({"modes": {"default": {"consideration": ["private_vehicle"], "time": True}}}, "single-mode"),
        ({"neighbourhood": {"default": {"variables": ["densty"]}}}, "Did you mean 'density'"),
        ({"neighbourhood": {"default": {"variables": ["density", "density"]}}}, "twice"),
        ({"neighbourhood": {"default": {"consideration": {"tracts": []}}}}, "empty consideration"),
        ({"neighbourhood": {"default": {"consideration": {"attribute": "rent"}}}}, "Unknown neighbourhood"),
        ({"individual_membership_variables": ["age", "height"]}, "Unknown person variable"),
    ],
)
def test_bad_specifications(raw, message):
    with pytest.raises(SpecError, match=message):
        model_spec_from_mapping(raw, SMALL_CATALOGUE)


def test_parse_model_spec():
    assert parse_model_spec('{"individual_classes": 2}').S == 2
    with pytest.raises(SpecError, match="not valid JSON"):
        parse_model_spec("{")


def test_with_classes_pads_with_defaults():
    spec = model_spec_from_mapping(
        {
            "individual_classes": 2,
            "modes": {"classes": {"1": {"consideration": ["private_vehicle"]}}},
        }
    )
    bigger = spec.with_classes(individual=4, household=2)
    assert (bigger.R, bigger.S) == (2, 4)
    assert bigger.individual_classes[0] == spec.individual_classes[0]
    assert bigger.individual_classes[3] == spec.individual_default
    smaller = spec.with_classes(individual=1)
    assert smaller.individual_classes == spec.individual_classes[:1]
    with pytest.raises(SpecError):
        spec.with_classes(household=0)


@pytest.fixture(scope="module")
def tracts():
    _, ds, _ = simulate(model_mapping(), seed=6, households=5, tracts=6)
    return bind(model_mapping(), ds).data


def test_tract_filters(tracts):
    assert TractFilter().mask(tracts).all()
    listed = TractFilter(tracts=(tracts.tract_ids[1], tracts.tract_ids[4])).mask(tracts)
    assert listed.tolist() == [False, True, False, False, True, False]
    density = tracts.tract_matrix(["density"])[:, 0]
    low, high = np.sort(density)[[1, 4]]
    bounded = TractFilter(attribute="density", minimum=low, maximum=high).mask(tracts)
    assert bounded.sum() == 4
    np.testing.assert_array_equal(bounded, (density >= low) & (density <= high))
    with pytest.raises(SpecError, match="unknown tracts"):
        TractFilter(tracts=("nowhere",)).mask(tracts)
    with pytest.raises(SpecError, match="Empty tract consideration"):
        TractFilter(attribute="density", minimum=10.0).mask(tracts)


def test_consideration_forms():
    spec = model_spec_from_mapping(
        {
            "household_classes": 3,
            "neighbourhood": {
                "default": {"variables": ["density"]},
                "classes": {
                    "2": {"consideration": ["t1", "t2"]},
                    "3": {"consideration": {"attribute": "diversity", "min": 0.5}},
                },
            },
        },
        SMALL_CATALOGUE,
    )
    first, second, third = spec.household_classes
    assert first.consideration.is_all
    assert second.consideration.tracts == ("t1", "t2")
    assert second.variables == ("density",)
    assert third.consideration.describe() == "0.5 <= diversity <= inf"


def test_build_parameter_layout_checks_the_data():
    spec = model_spec_from_mapping({}, SMALL_CATALOGUE)
    matching = SimpleNamespace(
        attribute_names=SMALL_CATALOGUE.neighbourhood,
        household_variables=SMALL_CATALOGUE.household,
        person_variables=SMALL_CATALOGUE.person,
    )
    assert build_parameter_layout(spec, matching) == layout_from_spec(spec)
    lacking = SimpleNamespace(
        attribute_names=("density",), household_variables=("income",), person_variables=("age", "male")
    )
    with pytest.raises(SpecError, match="diversity"):
        build_parameter_layout(spec, lacking)


def test_seed_parameters():
    layout = layout_from_spec(model_spec_from_mapping({}, SMALL_CATALOGUE))
    assert not seed_parameters(layout).any()
    random = seed_parameters(layout, "random", scale=0.1, seed=4)
    np.testing.assert_array_equal(random, seed_parameters(layout, "random", scale=0.1, seed=4))
    assert np.all(np.abs(random) <= 0.1)
    with pytest.raises(SpecError):
        seed_parameters(layout, "sobol")
