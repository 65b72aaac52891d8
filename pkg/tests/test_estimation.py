from dataclasses import replace
from itertools import product

import numpy as np
import pytest
from scipy.optimize import minimize_scalar

from modality.estimation import (
    EmControls,
    EstimationError,
    _degenerate,
    canonical_permutation,
    canonicalize_classes,
    fit_conditional_membership,
    fit_sub_model,
    hessian_standard_errors,
    multi_start,
    permute_classes,
    permute_hierarchy,
    problem_for,
    run_em,
    share_order,
    split_start,
    start_seeds,
    starting_values,
    three_step_fit,
)
from modality.likelihood import HierarchicalModel, ZeroLikelihoodError
from modality.spec import SubModel

from conftest import HIERARCHICAL_MODEL, HIERARCHICAL_TRUTH, MODE_TRUTH, bind, model_mapping, simulate


def assert_monotone(trace):
    assert np.all(np.diff(trace) >= -1e-9), np.diff(trace).min()


@pytest.fixture(scope="module")
def mode_fit(two_class_mode, quick_controls):
    return fit_sub_model(two_class_mode, SubModel.mode_lccm, quick_controls)


@pytest.fixture(scope="module")
def single_household_class_fit(two_class_mode, quick_controls):
    return three_step_fit(two_class_mode, quick_controls)


def test_controls_mapping():
    controls = EmControls.from_mapping({"starts": 3, "gtol": 1e-7, "max_inner_iterations": 50})
    assert controls.starts == 3
    assert controls.solver.gtol == 1e-7
    assert controls.solver.max_iterations == 50
    assert EmControls.from_mapping(controls.to_mapping()) == controls
    assert EmControls.from_mapping(None) == EmControls()


@pytest.mark.parametrize(
    "raw", [{"starts": 0}, {"loglik_rel_tol": 0.0}, {"threads": 0}, {"stars": 3}]
)
def test_bad_controls(raw):
    with pytest.raises(EstimationError):
        EmControls.from_mapping(raw)


def test_single_class_converges_in_one_iteration(one_class, quick_controls):
    for sub_model in (SubModel.mode_lccm, SubModel.neighbourhood_lccm):
        fit = fit_sub_model(one_class, sub_model, quick_controls)
        assert fit.iterations == 1
        assert fit.converged
        assert len(fit.trace) == 2
        assert_monotone(fit.trace)
        # a single class is a concave problem: every start lands on the same optimum
        assert max(fit.start_logliks) - min(fit.start_logliks) < 1e-6
        np.testing.assert_allclose(fit.class_shares, [1.0])


@pytest.mark.parametrize("seed", range(3))
def test_em_is_monotone(two_class_mode, hierarchical, seed):
    controls = EmControls(max_iterations=60)
    for model, sub_model in (
        (two_class_mode, SubModel.mode_lccm),
        (hierarchical, SubModel.neighbourhood_lccm),
    ):
        problem = problem_for(model, sub_model)
        fit = run_em(problem, starting_values(problem, seed, 0.5), controls, seed=seed)
        assert_monotone(fit.trace)
        assert fit.trace[-1] == pytest.approx(problem.loglik(fit.theta))
        np.testing.assert_allclose(fit.posterior.sum(axis=1), 1.0, atol=1e-10)


def test_conditional_membership_changes_only_gamma(hierarchical):
    layout = hierarchical.layout
    fixed = np.random.default_rng(0).normal(scale=0.3, size=layout.size)
    init = np.zeros(layout.block("gamma").size)
    fit = fit_conditional_membership(hierarchical, fixed, init, EmControls(max_iterations=50))
    assert_monotone(fit.trace)
    gamma = layout.block("gamma").slice
    untouched = np.ones(layout.size, dtype=bool)
    untouched[gamma] = False
    np.testing.assert_array_equal(fit.full_theta[untouched], fixed[untouched])
    np.testing.assert_array_equal(fit.full_theta[gamma], fit.theta)
    assert fit.loglik == pytest.approx(hierarchical.full_loglik(fit.full_theta))
    assert fit.household_posterior.shape == (hierarchical.data.n_households, 2)


def test_zero_gamma_gives_uniform_priors_in_every_household_class(hierarchical):
    problem = problem_for(
        hierarchical, SubModel.conditional_membership, np.zeros(hierarchical.layout.size)
    )
    full = problem.full_theta(np.zeros(problem.layout.size))
    priors = np.exp(hierarchical.individual_class_log_probs(hierarchical.unpack(full)))
    assert priors.shape == (2, hierarchical.data.n_persons, 2)
    np.testing.assert_allclose(priors, 0.5)


def test_multi_start_with_one_start_is_a_single_fit(two_class_mode):
    controls = EmControls(starts=1, seed=3, max_iterations=40)
    problem = problem_for(two_class_mode, SubModel.mode_lccm)

    def fit(seed):
        return run_em(problem, starting_values(problem, seed, controls.scale), controls, seed=seed)

    best = multi_start(fit, controls)
    (seed,) = start_seeds(controls)
    single = fit(seed)
    np.testing.assert_array_equal(best.theta, single.theta)
    assert best.start_logliks == (single.loglik,)


def test_multi_start_fails_when_every_start_fails():
    def fit(seed):
        raise EstimationError("boom")

    with pytest.raises(EstimationError):
        multi_start(fit, EmControls(starts=2))


def test_start_seeds_are_reproducible():
    controls = EmControls(starts=4, seed=9)
    assert start_seeds(controls) == start_seeds(controls)
    assert len(set(start_seeds(controls))) == 4


def test_mode_fit_is_canonical_and_monotone(mode_fit):
    assert_monotone(mode_fit.trace)
    assert canonical_permutation(mode_fit) == [0, 1]
    assert mode_fit.class_shares[0] >= mode_fit.class_shares[1]
    assert mode_fit.n_parameters == mode_fit.layout.size
    assert len(mode_fit.start_logliks) == 2
    assert mode_fit.loglik == max(mode_fit.start_logliks)


def test_canonicalize_undoes_a_swap(two_class_mode, mode_fit):
    problem = problem_for(two_class_mode, SubModel.mode_lccm)
    swapped_theta = permute_classes(mode_fit.layout, mode_fit.theta, SubModel.mode_lccm, [1, 0])
    assert problem.loglik(swapped_theta) == pytest.approx(mode_fit.loglik, abs=1e-9)

    swapped = replace(mode_fit, theta=swapped_theta, posterior=mode_fit.posterior[:, [1, 0]])
    restored = canonicalize_classes(swapped)
    np.testing.assert_allclose(restored.theta, mode_fit.theta, rtol=0, atol=1e-12)
    np.testing.assert_array_equal(restored.posterior, mode_fit.posterior)
    assert restored.standard_errors is None
    assert canonicalize_classes(mode_fit) is mode_fit


def test_permute_hierarchy_preserves_full_loglik(hierarchical):
    theta = np.random.default_rng(1).normal(scale=0.3, size=hierarchical.layout.size)
    swapped = permute_hierarchy(hierarchical.layout, theta, [1, 0], [1, 0])
    assert hierarchical.full_loglik(swapped) == pytest.approx(hierarchical.full_loglik(theta), abs=1e-9)
    back = permute_hierarchy(hierarchical.layout, swapped, [1, 0], [1, 0])
    np.testing.assert_allclose(back, theta, atol=1e-12)


def test_share_order_within_identical_specs():
    assert share_order(["a", "a", "b", "a"], [0.1, 0.5, 0.2, 0.2]) == [1, 3, 2, 0]
    assert share_order(["a", "a"], [0.5, 0.5], [0.1, 0.7]) == [1, 0]
    assert share_order(["a", "b"], [0.1, 0.9]) == [0, 1]


def test_invalid_permutation_is_refused(one_class):
    layout = problem_for(one_class, SubModel.mode_lccm).layout
    with pytest.raises(EstimationError):
        permute_classes(layout, np.zeros(layout.size), SubModel.mode_lccm, [0, 0])


def test_degenerate_classes_are_named():
    posterior = np.array([[1.0, 0.0, 0.0], [0.5, 0.0, 0.5]])
    assert _degenerate(posterior) == [2]


def test_hessian_standard_errors_on_a_quadratic():
    information = np.array([[4.0, 1.0, 0.0], [1.0, 3.0, 0.0], [0.0, 0.0, 2.0]])
    centre = np.array([0.5, -1.0, 2.0])

    def gradient(theta):
        return -information @ (theta - centre)

    errors, absent = hessian_standard_errors(gradient, centre)
    expected = np.sqrt(np.diag(np.linalg.inv(information)))
    np.testing.assert_allclose(errors, expected, rtol=1e-6)
    assert absent == []

    errors, absent = hessian_standard_errors(gradient, centre, flagged=[1])
    assert np.isnan(errors[1]) and absent == [1]


def test_singular_information_leaves_errors_absent():
    information = np.array([[1.0, 1.0, 0.0], [1.0, 1.0, 0.0], [0.0, 0.0, 4.0]])

    def gradient(theta):
        return -information @ theta

    errors, absent = hessian_standard_errors(gradient, np.zeros(3))
    assert absent == [0, 1]
    assert np.isnan(errors[:2]).all()
    assert errors[2] == pytest.approx(0.5)


def test_standard_errors_and_t_stats(mode_fit):
    assert mode_fit.standard_errors is not None
    finite = np.isfinite(mode_fit.standard_errors)
    assert finite.any()
    assert np.all(mode_fit.standard_errors[finite] > 0)
    np.testing.assert_allclose(
        mode_fit.t_stats[finite], mode_fit.theta[finite] / mode_fit.standard_errors[finite]
    )


def test_gradient_vanishes_at_the_fit(mode_fit, two_class_mode):
    if not mode_fit.converged:
        pytest.skip("EM stopped at the iteration cap")
    problem = problem_for(two_class_mode, SubModel.mode_lccm)
    scale = max(1.0, abs(mode_fit.loglik))
    assert np.max(np.abs(problem.gradient(mode_fit.theta))) < 1e-2 * scale


def test_single_household_class_reproduces_the_mode_model(single_household_class_fit):
    result = single_household_class_fit
    mode_gamma = result.mode.params()["gamma"]
    np.testing.assert_allclose(result.conditional.theta, mode_gamma.reshape(-1), atol=1e-2)
    # step 3 starts from the mode model's membership and can only climb
    separate = result.mode.loglik + result.neighbourhood.loglik
    assert separate - 1e-6 <= result.loglik <= separate + 0.05
    np.testing.assert_allclose(result.posteriors.household, 1.0)


def test_three_step_combines_the_steps(single_household_class_fit, two_class_mode):
    result = single_household_class_fit
    params = result.params()
    for key, value in result.mode.params().items():
        if key.startswith("lambda"):
            np.testing.assert_array_equal(params[key], value)
    for key, value in result.neighbourhood.params().items():
        np.testing.assert_array_equal(params[key], value)
    assert result.loglik == pytest.approx(two_class_mode.full_loglik(result.theta))
    assert result.conditional.standard_errors is not None


def test_fits_are_deterministic(hierarchical):
    controls = EmControls(max_iterations=100, starts=2, seed=1)
    first = fit_sub_model(hierarchical, SubModel.neighbourhood_lccm, controls)
    second = fit_sub_model(hierarchical, SubModel.neighbourhood_lccm, controls)
    np.testing.assert_array_equal(first.theta, second.theta)
    np.testing.assert_array_equal(first.standard_errors, second.standard_errors)
    assert first.trace == second.trace


def test_impossible_start_is_an_estimation_error():
    _, ds, _ = simulate(model_mapping(), seed=6, households=5, tracts=4)
    chosen = ds.households[0].chosen_tract
    other = next(t.tract_id for t in ds.neighbourhoods if t.tract_id != chosen)
    neighbourhood = {"default": {"variables": ["density"], "consideration": {"tracts": [other]}}}
    model = bind(model_mapping(neighbourhood=neighbourhood), ds)
    problem = problem_for(model, SubModel.neighbourhood_lccm)
    with pytest.raises(EstimationError, match="Non-finite"):
        run_em(problem, np.zeros(problem.layout.size))


def test_multi_start_survives_a_zero_likelihood_start(two_class_mode):
    controls = EmControls(starts=3, seed=4, max_iterations=40)
    problem = problem_for(two_class_mode, SubModel.mode_lccm)
    failing = start_seeds(controls)[0]

    def fit(seed):
        if seed == failing:
            raise ZeroLikelihoodError("person", ["p1"])
        return run_em(problem, starting_values(problem, seed, controls.scale), controls, seed=seed)

    best = multi_start(fit, controls)
    assert len(best.start_logliks) == 2
    assert best.seed != failing


def test_split_start_keeps_the_smaller_likelihood(two_class_mode, mode_fit, one_class, quick_controls):
    spec = two_class_mode.spec.with_classes(individual=3)
    problem = problem_for(HierarchicalModel(spec, two_class_mode.data), SubModel.mode_lccm)
    init = split_start(mode_fit, spec)
    assert problem.loglik(init) == pytest.approx(mode_fit.loglik, abs=1e-8)
    assert run_em(problem, init, EmControls(max_iterations=20)).loglik >= mode_fit.loglik - 1e-6

    small = fit_sub_model(one_class, SubModel.neighbourhood_lccm, quick_controls, with_standard_errors=False)
    spec = one_class.spec.with_classes(household=2)
    problem = problem_for(HierarchicalModel(spec, one_class.data), SubModel.neighbourhood_lccm)
    assert problem.loglik(split_start(small, spec)) == pytest.approx(small.loglik, abs=1e-8)

    with pytest.raises(EstimationError):
        split_start(mode_fit, two_class_mode.spec)


@pytest.fixture(scope="module")
def hierarchical_fit(hierarchical, quick_controls):
    return three_step_fit(hierarchical, quick_controls)


def test_three_step_beats_the_true_membership(hierarchical, hierarchical_fit):
    truth, _, _ = simulate(HIERARCHICAL_MODEL, HIERARCHICAL_TRUTH, seed=23, households=80)
    layout = hierarchical.layout
    gamma = layout.block("gamma").slice
    candidate = hierarchical_fit.theta.copy()
    # the fitted classes may be any relabelling of the generating ones
    logliks = []
    for household_perm, individual_perm in product(([0, 1], [1, 0]), repeat=2):
        relabelled = permute_hierarchy(layout, truth.theta, household_perm, individual_perm)
        candidate[gamma] = relabelled[gamma]
        logliks.append(hierarchical.full_loglik(candidate))
    assert hierarchical_fit.loglik >= max(logliks) - 1e-6


@pytest.fixture(scope="module")
def separated_hierarchy():
    parameters = {
        **HIERARCHICAL_TRUTH,
        "beta[1].density": 1.5,
        "beta[2].density": -1.5,
        "gamma[1][2].const": -2.0,
        "gamma[2][2].const": 2.0,
    }
    _, ds, _ = simulate(HIERARCHICAL_MODEL, parameters, seed=23, households=400)
    model = bind(HIERARCHICAL_MODEL, ds)
    return model, three_step_fit(model, EmControls(starts=4, seed=3))


@pytest.mark.slow
def test_membership_depends_on_the_household_class(separated_hierarchy):
    model, result = separated_hierarchy
    params = result.params()
    gamma = params["gamma"][:, 0, 0]
    assert abs(gamma[0] - gamma[1]) > 1.0

    def common(value):
        shared = {**params, "gamma": np.full_like(params["gamma"], value)}
        return -model.full_loglik(model.layout.pack(shared))

    best_common = minimize_scalar(common, bounds=(-10.0, 10.0), method="bounded")
    assert result.loglik > -best_common.fun + 1.0


@pytest.mark.slow
def test_starts_agree_on_the_best_optimum(two_class_mode):
    controls = EmControls(starts=10, seed=7, loglik_rel_tol=1e-10, param_abs_tol=1e-8)
    fit = fit_sub_model(two_class_mode, SubModel.mode_lccm, controls, with_standard_errors=False)
    best, second = sorted(fit.start_logliks, reverse=True)[:2]
    assert best - second <= 1e-4


@pytest.mark.slow
def test_em_recovers_two_mode_classes():
    model = model_mapping(individual_classes=2, individual_membership_variables=["const"])
    tours = {"mandatory": [3, 4], "nonmandatory": [3, 4]}
    _, ds, _ = simulate(model, MODE_TRUTH, seed=11, households=1500, tours_per_person=tours)
    bound = bind(model, ds)
    assert 2700 <= bound.data.n_persons <= 3300
    fit = fit_sub_model(bound, SubModel.mode_lccm, EmControls(starts=5, seed=11), with_standard_errors=False)
    for name, value in fit.estimates().items():
        expected = MODE_TRUTH.get(name.replace("gamma[", "gamma[1]["), 0.0)
        assert value == pytest.approx(expected, abs=0.1), name


@pytest.mark.slow
def test_standard_errors_match_the_sampling_spread():
    model = model_mapping()
    truth = {
        "lambda[mandatory][1].asc_public_transit": 0.5,
        "lambda[mandatory][1].time": -0.05,
        "lambda[mandatory][1].cost": -0.3,
        "lambda[nonmandatory][1].time": -0.04,
    }
    estimates, errors = [], []
    for replication in range(60):
        _, ds, _ = simulate(model, truth, seed=900 + replication, households=100)
        fit = fit_sub_model(bind(model, ds), SubModel.mode_lccm, EmControls(starts=1, seed=replication))
        estimates.append(fit.theta)
        errors.append(fit.standard_errors)
    ratio = np.std(estimates, axis=0, ddof=1) / np.mean(errors, axis=0)
    assert np.all((ratio > 0.7) & (ratio < 1.4)), ratio
