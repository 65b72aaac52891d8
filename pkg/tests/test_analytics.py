import numpy as np
import pytest

from modality.analytics import (
    UNBOUNDED,
    AnalyticsError,
    ElasticityMethod,
    aggregate_elasticity,
    class_profiles,
    elasticity_frame,
    neighbourhood_surface,
    point_elasticity,
    profiles_frame,
    surface_frame,
    value_of_time,
    value_of_time_frame,
)
from modality.data import MODES, PURPOSES

from conftest import bind, model_mapping, simulate


def test_value_of_time_from_tabulated_coefficients():
    assert value_of_time(-0.096, -1.005).dollars_per_hour == pytest.approx(5.731, abs=1e-3)
    assert value_of_time(-0.047, -0.146).dollars_per_hour == pytest.approx(19.315, abs=1e-3)
    unbounded = value_of_time(-0.0656, None)
    assert unbounded.unbounded
    assert str(unbounded) == UNBOUNDED
    assert value_of_time(-0.05, 0.0).unbounded
    assert value_of_time(None, -0.2).dollars_per_hour == 0.0


def test_value_of_time_is_scale_invariant():
    base = value_of_time(-0.03, -0.4).dollars_per_hour
    assert value_of_time(-0.03 * 2.5, -0.4 * 2.5).dollars_per_hour == pytest.approx(base)


def test_point_elasticity():
    assert point_elasticity(1.0, 12.0, -0.3) == 0.0
    assert point_elasticity(0.4, 12.0, 0.0) == 0.0
    assert point_elasticity(0.5, 10.0, -0.1) == pytest.approx(-0.5)
    with pytest.raises(AnalyticsError):
        point_elasticity(1.2, 1.0, 1.0)


@pytest.fixture(scope="module")
def deterministic():
    model = model_mapping(
        individual_classes=2,
        individual_membership_variables=["const"],
        modes={
            "default": {"asc": ["public_transit"]},
            "classes": {"1": {"consideration": ["private_vehicle"]}},
        },
    )
    parameters = {
        "gamma[1][2].const": 0.0,
        "lambda[mandatory][2].time": -0.03,
        "lambda[mandatory][2].cost": -0.2,
        "lambda[nonmandatory][2].time": -0.03,
    }
    _, ds, labels = simulate(model, parameters, seed=13, households=40)
    bound = bind(model, ds)
    theta = bound.layout.pack(
        {
            **bound.unpack(np.zeros(bound.layout.size)),
            "lambda[mandatory][2]": np.array([0.2, -0.03, -0.2]),
            "lambda[nonmandatory][2]": np.array([0.1, -0.03, -0.1]),
        }
    )
    return bound, theta, labels


def test_deterministic_class_has_zero_elasticities(deterministic):
    model, theta, _ = deterministic
    params = model.unpack(theta)
    person = model.posteriors(theta).person
    for method in ElasticityMethod:
        for attribute in ("time", "cost"):
            for purpose in PURPOSES:
                assert aggregate_elasticity(
                    model, params, person, 0, purpose, attribute, method=method
                ) == 0.0


def test_deterministic_class_always_drives(deterministic):
    model, theta, labels = deterministic
    assert 1 in labels.person.values()
    posteriors = model.posteriors(theta)
    profiles = class_profiles(model, None, posteriors.person)
    first = profiles[0]
    assert first.level == "individual"
    assert first.mode_shares
    for shares in first.mode_shares.values():
        assert shares[MODES[0]] == pytest.approx(1.0)


def test_enumeration_matches_brute_force(two_class_mode):
    model = two_class_mode
    theta = np.random.default_rng(4).normal(scale=0.05, size=model.layout.size)
    params = model.unpack(theta)
    person = model.posteriors(theta).person
    for s in range(2):
        for purpose in PURPOSES:
            design = model.mode_designs[purpose, s]
            columns = model.spec.individual_classes[s].utility(purpose).columns
            coefficient = params[f"lambda[{purpose}][{s + 1}]"][columns.index("time")]
            probs = np.exp(model.mode_log_probs(params, purpose, s))
            total = weight = 0.0
            for i, tour in enumerate(design.tours):
                for k in range(len(MODES)):
                    x = model.data.time[tour, k]
                    if design.availability[i, k] and x != 0:
                        w = person[design.person[i], s]
                        total += w * point_elasticity(probs[i, k], x, coefficient)
                        weight += w
            value = aggregate_elasticity(model, params, person, s, purpose, "time")
            assert value == pytest.approx(total / weight, rel=1e-10)


def test_elasticity_frame_methods(two_class_mode):
    theta = np.random.default_rng(5).normal(scale=0.05, size=two_class_mode.layout.size)
    params = two_class_mode.unpack(theta)
    person = two_class_mode.posteriors(theta).person
    for method in ElasticityMethod:
        frame = elasticity_frame(two_class_mode, params, person, method)
        assert len(frame) == 2 * len(PURPOSES) * 2
        assert set(frame["method"]) == {method.value}
        assert np.isfinite(frame["elasticity"]).all()


def test_negative_coefficients_give_negative_elasticities(two_class_mode):
    params = two_class_mode.unpack(np.zeros(two_class_mode.layout.size))
    for key in params:
        if key.startswith("lambda"):
            params[key][1:] = -0.05
    person = np.full((two_class_mode.data.n_persons, 2), 0.5)
    frame = elasticity_frame(two_class_mode, params, person)
    assert (frame["elasticity"] < 0).all()


def test_unknown_attribute(two_class_mode):
    params = two_class_mode.unpack(np.zeros(two_class_mode.layout.size))
    person = np.full((two_class_mode.data.n_persons, 2), 0.5)
    with pytest.raises(AnalyticsError):
        aggregate_elasticity(two_class_mode, params, person, 0, "mandatory", "comfort")


def test_value_of_time_frame_marks_classes_without_cost():
    model = model_mapping(
        individual_classes=2,
        modes={"default": {"asc": ["public_transit"]}, "classes": {"2": {"cost": False}}},
    )
    _, ds, _ = simulate(model, seed=1, households=10)
    bound = bind(model, ds)
    params = bound.unpack(np.full(bound.layout.size, -0.1))
    frame = value_of_time_frame(bound.spec, params)
    assert (frame.loc[frame["class"] == 2, "value_of_time"] == UNBOUNDED).all()
    assert (frame.loc[frame["class"] == 1, "value_of_time"] == "60.000").all()


def test_single_class_profiles_are_sample_means(one_class):
    data = one_class.data
    household = np.ones((data.n_households, 1))
    person = np.ones((data.n_persons, 1))
    profiles = class_profiles(one_class, household, person)
    assert [p.level for p in profiles] == ["household", "individual"]
    for profile, covariates, names in (
        (profiles[0], data.household_covariates, data.household_variables),
        (profiles[1], data.person_covariates, data.person_variables),
    ):
        assert profile.prior_share == 1.0
        means = covariates.mean(axis=0)
        for name, mean in zip(names, means):
            assert profile.covariate_means[name] == pytest.approx(mean)
        for shares in profile.mode_shares.values():
            assert sum(shares.values()) == pytest.approx(1.0, abs=1e-10)
    frame = profiles_frame(profiles)
    assert set(frame["level"]) == {"household", "individual"}


def test_class_shares_sum_to_one(hierarchical):
    theta = np.random.default_rng(0).normal(scale=0.2, size=hierarchical.layout.size)
    posteriors = hierarchical.posteriors(theta)
    profiles = class_profiles(hierarchical, posteriors.household, posteriors.person)
    for level in ("household", "individual"):
        shares = [p.prior_share for p in profiles if p.level == level]
        assert sum(shares) == pytest.approx(1.0, abs=1e-10)


def test_surface_is_a_distribution(hierarchical):
    theta = np.random.default_rng(2).normal(size=hierarchical.layout.size)
    params = hierarchical.unpack(theta)
    for r in range(hierarchical.R):
        surface = neighbourhood_surface(hierarchical, params, r)
        assert list(surface) == list(hierarchical.data.tract_ids)
        assert sum(surface.values()) == pytest.approx(1.0, abs=1e-10)
        assert min(surface.values()) >= 0.0
    frame = surface_frame(hierarchical, params)
    assert len(frame) == hierarchical.R * hierarchical.data.n_tracts


def test_surface_respects_consideration():
    model = model_mapping(
        household_classes=2,
        neighbourhood={
            "default": {"variables": ["density"]},
            "classes": {"2": {"consideration": {"attribute": "density", "max": 1.5}}},
        },
    )
    _, ds, _ = simulate(model, seed=3, households=20, tracts=10)
    bound = bind(model, ds)
    params = bound.unpack(np.zeros(bound.layout.size))
    uniform = neighbourhood_surface(bound, params, 0)
    assert all(p == pytest.approx(1 / 10) for p in uniform.values())
    restricted = neighbourhood_surface(bound, params, 1)
    considered = [t.tract_id for t in ds.neighbourhoods if t.attributes["density"] <= 1.5]
    for tract, p in restricted.items():
        if tract in considered:
            assert p == pytest.approx(1 / len(considered))
        else:
            assert p == 0.0


def test_surface_follows_an_attractive_attribute(hierarchical):
    params = hierarchical.unpack(np.zeros(hierarchical.layout.size))
    params["beta[1]"][:] = [1.0, 0.0]
    surface = neighbourhood_surface(hierarchical, params, 0)
    density = hierarchical.tract_designs[0][:, 0]
    probs = np.array([surface[t] for t in hierarchical.data.tract_ids])
    order = np.argsort(density)
    assert np.all(np.diff(probs[order]) >= -1e-15)
