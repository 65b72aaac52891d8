import math

import numpy as np
import pytest

from modality.estimation import EmControls
from modality.selection import (
    SWEEP_COLUMNS,
    SweepRow,
    class_sweep,
    fit_statistics,
    null_loglik,
    sweep_frame,
    sweep_summary_frame,
)
from modality.spec import SubModel

from conftest import MODE_TRUTH, bind, model_mapping, simulate


def solved_null(rho_bar_sq, loglik, K):
    return (loglik - K) / (1.0 - rho_bar_sq)


def test_mode_table_rows():
    two = fit_statistics(-9784, 37, 10_000, -34_826)
    assert abs(two.aic - 19_641) <= 2
    assert two.aic == 19_642

    loglik_null = solved_null(0.718, -9784, 37)
    assert loglik_null == pytest.approx(-34_826, abs=1)
    six = fit_statistics(-9477, 127, 10_000, loglik_null)
    assert six.rho_bar_sq == pytest.approx(0.724, abs=0.001)


def test_neighbourhood_table_rows():
    six = fit_statistics(-34_794, 162, 5_000, -37_921)
    assert six.aic == 69_912
    assert abs(six.aic - 69_911) <= 2

    loglik_null = solved_null(0.043, -36_248, 42)
    assert loglik_null == pytest.approx(-37_921, abs=1)
    assert fit_statistics(-34_794, 162, 5_000, loglik_null).rho_bar_sq == pytest.approx(
        0.078, abs=0.001
    )


def test_statistic_formulas():
    s = fit_statistics(-120.5, 7, 300, -200.0)
    assert s.aic == 2 * 7 + 241.0
    assert s.bic == 7 * math.log(300) + 241.0
    assert s.rho_bar_sq == 1 - (-120.5 - 7) / -200.0
    assert fit_statistics(-200.0, 0, 10, -200.0).rho_bar_sq == 0.0
    assert fit_statistics(-150.0, 5, 10, -200.0).rho_bar_sq > fit_statistics(-150.0, 6, 10, -200.0).rho_bar_sq


@pytest.mark.parametrize("args", [(-1.0, 1, 0, -2.0), (-1.0, -1, 5, -2.0), (-1.0, 1, 5, 0.0)])
def test_statistics_reject_bad_inputs(args):
    with pytest.raises(ValueError):
        fit_statistics(*args)


def test_null_loglik(one_class):
    data = one_class.data
    expected_mode = -np.sum(np.log(data.availability.sum(axis=1)))
    assert null_loglik(data, SubModel.mode_lccm) == pytest.approx(expected_mode)
    assert null_loglik(data, SubModel.neighbourhood_lccm) == pytest.approx(
        -data.n_households * math.log(data.n_tracts)
    )
    assert null_loglik(data, SubModel.conditional_membership) == pytest.approx(
        expected_mode - data.n_households * math.log(data.n_tracts)
    )


def test_null_loglik_all_modes_available():
    model = model_mapping()
    availability = {m: 1.0 for m in ("private_transit", "public_transit", "bike", "walk")}
    _, ds, _ = simulate(model, seed=2, households=10, availability=availability)
    data = bind(model, ds).data
    assert null_loglik(data, SubModel.mode_lccm) == pytest.approx(-data.n_tours * math.log(5))


@pytest.fixture(scope="module")
def sweep_rows():
    model = model_mapping(individual_classes=2, individual_membership_variables=["const"])
    _, ds, _ = simulate(model, MODE_TRUTH, seed=31, households=80)
    bound = bind(model, ds)
    return class_sweep(
        bound.data,
        bound.spec,
        [3, 1, 2],
        EmControls(max_iterations=200, starts=2),
        SubModel.mode_lccm,
    )


def test_sweep_rows(sweep_rows):
    assert [r.classes for r in sweep_rows] == [1, 2, 3]
    assert all(not r.failed for r in sweep_rows)
    logliks = [r.statistics.loglik for r in sweep_rows]
    assert all(b >= a - 1e-6 for a, b in zip(logliks, logliks[1:]))
    assert sum(r.aic_min for r in sweep_rows) == 1
    assert sum(r.bic_min for r in sweep_rows) == 1
    sizes = [r.n_parameters for r in sweep_rows]
    assert sizes == sorted(sizes)


def test_sweep_frame_columns(sweep_rows):
    frame = sweep_frame(sweep_rows)
    assert tuple(frame.columns) == SWEEP_COLUMNS
    assert len(frame) == 3
    summary = sweep_summary_frame(sweep_rows)
    assert summary["classes"].tolist() == [1, 2, 3]


def test_failed_rows_are_marked():
    rows = [SweepRow(2, 13, error="All 2 starts failed")]
    frame = sweep_frame(rows)
    assert frame.iloc[0]["Log-likelihood"] == "failed"
    assert frame.iloc[0]["Parameters"] == 13
    assert sweep_summary_frame(rows).iloc[0]["error"] == "All 2 starts failed"


def three_class_truth():
    tastes = {
        1: {"asc_public_transit": 0.0, "time": -0.12, "cost": -0.1},
        2: {"asc_public_transit": 0.0, "time": -0.02, "cost": -0.8},
        3: {"asc_public_transit": 2.5, "time": -0.02, "cost": -0.05},
    }
    return {
        f"lambda[{d}][{s}].{name}": value
        for d in ("mandatory", "nonmandatory")
        for s, values in tastes.items()
        for name, value in values.items()
    }


@pytest.mark.slow
def test_sweep_finds_three_generating_classes():
    model = model_mapping(individual_classes=3, individual_membership_variables=["const"])
    bic_hits = 0
    for replication in range(10):
        _, ds, _ = simulate(model, three_class_truth(), seed=500 + replication, households=400)
        bound = bind(model, ds)
        rows = class_sweep(
            bound.data,
            bound.spec,
            range(1, 6),
            EmControls(max_iterations=300, starts=3, seed=replication),
            SubModel.mode_lccm,
        )
        assert all(not r.failed for r in rows)
        logliks = [r.statistics.loglik for r in rows]
        assert all(b >= a - 1e-6 for a, b in zip(logliks, logliks[1:])), logliks
        bic_hits += next(r.classes for r in rows if r.bic_min) == 3
    assert bic_hits >= 8
