import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from qconvex.bandit import (EPS_CEIL, EPS_FLOOR, Calibration, SnappedOracle, affordable_eps,
                            calibrate, classical_epoch_bandit, default_instance, qmin_repeats,
                            evaluation_cost, intervals, qbandits, qmin_stoc_conv, snap,
                            snapped_eval)
from qconvex.core import QueryLedger, make_rng
from qconvex.meanest import query_cost


def test_snap_ties_go_down():
    assert np.array_equal(snap(np.array([0.25, -0.25, 0.3]), 0.5), [0.0, -0.5, 0.5])


def test_snapped_eval_noiseless_lipschitz():
    inst = default_instance(sigma=0.0)
    oracle = SnappedOracle(inst, 1e-4, make_rng(0))
    pts = make_rng(1).uniform(-1, 1, (500, 2))
    vals = oracle.evaluate(pts)
    assert np.max(np.abs(vals - inst.f(pts))) <= oracle.alpha * inst.L * math.sqrt(2)
    assert oracle.ledger["evaluation"] == 500


def test_snapped_eval_parameters():
    inst = default_instance(sigma=0.1)
    eps = 0.05
    o = SnappedOracle(inst, eps, make_rng(0))
    n = inst.n
    assert o.alpha == pytest.approx(eps / (2 * n * inst.L))
    assert o.t2 == pytest.approx(n * math.log(inst.R / o.alpha) + math.log(10))
    assert o.tau == pytest.approx(2 * n * inst.sigma * o.t2 / eps)
    assert o.cost == query_cost(o.tau)


@pytest.mark.parametrize("estimator", ["quantum", "classical"])
def test_snapped_error_within_contract(estimator):
    inst = default_instance(sigma=0.1)
    eps = 0.05
    good = 0
    for seed in range(20):
        o = SnappedOracle(inst, eps, make_rng(seed), estimator=estimator)
        pts = snap(make_rng(100 + seed).uniform(-1, 1, (2000, 2)), o.alpha)
        err = o.evaluate(pts) - inst.f(pts)
        good += np.max(np.abs(err)) <= eps / (2 * inst.n)
    assert good >= 18


def test_same_cell_independent_estimates():
    inst = default_instance(sigma=0.1)
    o = SnappedOracle(inst, 0.1, make_rng(0))
    x = np.array([0.1, 0.1])
    assert snapped_eval(o, x) != snapped_eval(o, x + o.alpha / 10)


def test_classical_cost_exceeds_quantum_at_fine_accuracy():
    inst = default_instance(sigma=0.1)
    assert evaluation_cost(inst, 1e-3, "classical") > evaluation_cost(inst, 1e-3, "quantum")
    assert evaluation_cost(default_instance(sigma=0.0), 1e-3, "classical") == 1


@pytest.mark.parametrize("sigma, need", [(0.0, 18), (0.1, 16)])
def test_qmin_success_rate(sigma, need):
    inst = default_instance(sigma=sigma)
    eps = 0.1
    hits = sum(inst.regret(qmin_stoc_conv(inst, eps, None, make_rng(s)).point) <= eps
               for s in range(20))
    assert hits >= need


def test_qmin_budget_truncates():
    res = qmin_stoc_conv(default_instance(), 0.1, 1, make_rng(0))
    assert res.truncated and res.queries <= 1
    with pytest.raises(ValueError):
        qmin_stoc_conv(default_instance(), 0.1, 0, make_rng(0))


def test_batched_repeats_match_single_runs():
    inst = default_instance(sigma=0.1)
    led = QueryLedger()
    runs = qmin_repeats(inst, 0.1, None, 20, make_rng(0), ledger=led)
    assert sum(inst.regret(r.point) <= 0.1 for r in runs) >= 16
    assert led["evaluation"] == sum(r.queries for r in runs)
    assert not any(r.truncated for r in runs)


def test_batched_repeats_respect_budgets():
    inst = default_instance(sigma=0.1)
    cost = evaluation_cost(inst, 0.05)
    budget = 30 * cost
    runs = qmin_repeats(inst, 0.05, budget, 5, make_rng(1))
    assert all(r.truncated and r.queries <= budget for r in runs)
    assert all(math.isfinite(r.value) for r in runs)
    # not even the initial draws fit
    tiny = qmin_repeats(inst, 0.05, cost, 3, make_rng(1))
    assert all(r.truncated and r.queries == 0 and r.value == math.inf for r in tiny)


@given(st.integers(1, 2 ** 20))
def test_interval_partition_exact(T):
    parts = intervals(T)
    assert sum(length for _, length in parts) == T
    assert parts[0] == (1, 1)
    for (s0, l0), (s1, _) in zip(parts, parts[1:]):
        assert s1 == s0 + l0


def test_affordable_eps_bounds():
    inst = default_instance(sigma=0.1)
    calib = Calibration(10, 20.0)
    assert affordable_eps(inst, calib, 1e30, "quantum") == EPS_FLOOR
    assert affordable_eps(inst, calib, 1.0, "quantum") == EPS_CEIL
    mid = affordable_eps(inst, calib, 1e6, "classical")
    assert calib.repeat_need(inst, mid, "classical") <= 1e6


def test_horizon_one():
    inst = default_instance(T=1)
    q = qbandits(inst, make_rng(0))
    c = classical_epoch_bandit(inst, make_rng(0))
    assert q.T == c.T == 1
    assert q.regret == c.regret == pytest.approx(inst.regret(np.zeros(2)))


def test_noiseless_traces_coincide():
    inst = default_instance(sigma=0.0, T=64)
    q = qbandits(inst, make_rng(5))
    c = classical_epoch_bandit(inst, make_rng(5))
    assert np.array_equal(q.points, c.points)
    assert np.array_equal(q.instant, c.instant)
    assert np.array_equal(q.queries, c.queries)


def test_trace_invariants_and_csv():
    inst = default_instance(sigma=0.1, T=100)
    calib = calibrate(inst, 3e-5, make_rng(1))
    trace = qbandits(inst, make_rng(2), calibration=calib)
    assert trace.T == 100
    cum = trace.cumulative
    assert np.all(np.diff(cum) >= 0)
    for start, length in intervals(100):
        block = trace.points[start - 1:start - 1 + length]
        assert np.all(block == block[0])
        assert np.allclose(trace.instant[start - 1:start - 1 + length], inst.regret(block[0]))
        before = trace.queries[start - 2] if start > 1 else 0
        assert trace.queries[start + length - 2] - before <= length * calib.queries_per_round
    lines = trace.to_csv().splitlines()
    assert lines[0] == "t,x0,x1,instant_regret,cum_regret,queries"
    assert len(lines) == 101
