import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from driftlab.errors import DimensionMismatch, InsufficientRuns
from driftlab.evalreport import (
    ByFraction,
    ByRun,
    evaluate,
    integrate_trapezoid,
    parse_split,
    report_from_predictions,
    rmse,
    skill,
    split_runs,
    train_test_split,
)
from driftlab.svr import KernelSpec, train
from driftlab.telemetry import RegressionDataset


def run(n, tag, dim=2):
    return RegressionDataset(np.full((n, dim), float(tag)), np.full(n, float(tag)), np.zeros(n),
                             np.arange(n) * 0.1)


def test_perfect_predictor():
    y = np.random.default_rng(0).normal(size=(20, 2))
    rep = report_from_predictions(np.arange(20.0), y, y)
    assert rep.rmse_x == 0 and rep.skill_x == 1 and rep.skill_y == 1


def test_null_predictor_has_zero_skill():
    y = np.random.default_rng(1).normal(size=(20, 2))
    rep = report_from_predictions(np.arange(20.0), np.zeros_like(y), y)
    assert rep.skill_x == 0.0 and rep.skill_y == 0.0
    assert rep.rmse_x == rep.null_rmse_x


def test_zero_on_zero_is_zero_by_convention():
    z = np.zeros((5, 2))
    rep = report_from_predictions(np.arange(5.0), z, z)
    assert rep.rmse_x == 0 and rep.null_rmse_x == 0 and rep.skill_x == 0
    assert skill(0.0, 0.0) == 0.0


def test_integrated_endpoints():
    t = np.linspace(0, 2, 21)
    rep = report_from_predictions(t, np.full((21, 2), 8.0), np.full((21, 2), 10.0))
    np.testing.assert_allclose(rep.integrated_actual[-1], [20.0, 20.0])
    np.testing.assert_allclose(rep.integrated_predicted[-1], [16.0, 16.0])


def test_trapezoid_exact_for_linear_velocity():
    t = np.array([0.0, 0.3, 1.0, 1.1])
    np.testing.assert_allclose(integrate_trapezoid(t, 2 * t), t ** 2)


@given(arrays(np.float64, (12, 2), elements=st.floats(-100, 100)),
       arrays(np.float64, (12, 2), elements=st.floats(-100, 100)),
       st.permutations(list(range(12))))
def test_rmse_order_free_and_actual_curve_independent_of_prediction(pred, actual, perm):
    t = np.arange(12.0)
    a = report_from_predictions(t, pred, actual)
    b = report_from_predictions(t, pred[perm], actual[perm])
    assert a.rmse_x == pytest.approx(b.rmse_x, rel=1e-12, abs=1e-12)
    assert a.rmse_x >= 0 and a.skill_x <= 1
    c = report_from_predictions(t, np.zeros_like(pred), actual)
    np.testing.assert_array_equal(a.integrated_actual, c.integrated_actual)


def test_rmse_helper():
    assert rmse(np.array([1.0, -1.0]), np.zeros(2)) == 1.0


def test_summary_and_polylines():
    t = np.linspace(0, 1, 5)
    rep = report_from_predictions(t, np.ones((5, 2)), np.full((5, 2), 2.0))
    s = json.loads(rep.to_json())
    assert s["n"] == 5 and s["skill_x"] == pytest.approx(0.5)
    act = rep.polyline_csv("actual").splitlines()
    pre = rep.polyline_csv("predicted").splitlines()
    assert act[0] == "time,px,py" and len(act) == 6
    assert [r.split(",")[0] for r in act] == [r.split(",")[0] for r in pre]


def test_evaluate_checks_dimension():
    x = np.random.default_rng(2).normal(size=(10, 3))
    pair = train(RegressionDataset(x, x[:, 0], x[:, 1], np.arange(10.0)), KernelSpec("linear"), epsilon=0.01)
    with pytest.raises(DimensionMismatch):
        evaluate(pair, run(5, 0, dim=2))
    rep = evaluate(pair, RegressionDataset(x, x[:, 0], x[:, 1], np.arange(10.0)))
    assert rep.skill_x > 0.5


# --------------------------------------------------------------- splits

def test_by_run_holds_out_whole_runs():
    runs = [run(4, k) for k in range(5)]
    tr, te = split_runs(runs, ByRun((2,)))
    assert [r.target_x[0] for r in tr] == [0, 1, 3, 4]
    assert [r.target_x[0] for r in te] == [2]
    a, b = train_test_split(runs, ByRun((2,)))
    assert len(a) == 16 and len(b) == 4


def test_by_run_default_is_last():
    _, te = split_runs([run(3, k) for k in range(3)], ByRun())
    assert te[0].target_x[0] == 2


def test_by_run_needs_training_runs():
    with pytest.raises(InsufficientRuns):
        split_runs([run(3, 0)], ByRun())
    with pytest.raises(InsufficientRuns):
        split_runs([run(3, 0), run(3, 1)], ByRun((0, 1)))


def test_by_fraction_tail():
    r = RegressionDataset(np.arange(200.0).reshape(100, 2), np.arange(100.0), np.zeros(100), np.arange(100.0))
    tr, te = train_test_split([r], ByFraction(0.2))
    assert len(te) == 20 and len(tr) == 80
    np.testing.assert_array_equal(te.target_x, np.arange(80.0, 100.0))


def test_parse_split():
    assert parse_split("by-run") == ByRun()
    assert parse_split("by-run=1,3") == ByRun((1, 3))
    assert parse_split("fraction=0.25") == ByFraction(0.25)
    with pytest.raises(ValueError):
        parse_split("random")
    with pytest.raises(ValueError):
        parse_split("fraction=1.5")
