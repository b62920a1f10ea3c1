import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from qconvex.core import QueryLedger, Quadratic, StochasticOracle, make_rng
from qconvex.meanest import (GaussianSource, PointSource, amp_error_bound, amp_estimate,
                             classical_mean_estimate, classical_samples_for,
                             fejer_distribution, q_mean_estimate, quantum_tau_for, query_cost)


def test_amp_zero():
    rng = make_rng(0)
    assert all(amp_estimate(0.0, 16, rng) == 0.0 for _ in range(100))


def test_amp_grid_point_exact():
    a = math.sin(math.pi * 3 / 16) ** 2
    p = fejer_distribution(a, 16)
    assert p[3] + p[13] == pytest.approx(1.0)
    assert amp_estimate(a, 16, make_rng(1)) == pytest.approx(a)


def test_amp_half_frequency():
    rng = make_rng(2)
    bound = amp_error_bound(0.5, 16)
    assert bound == pytest.approx(2 * math.pi / 64 + math.pi ** 2 / 256)
    errs = np.array([abs(amp_estimate(0.5, 16, rng) - 0.5) for _ in range(10_000)])
    assert np.mean(errs <= bound) >= 0.95


def test_amp_median_and_ledger():
    led = QueryLedger()
    amp_estimate(0.3, 8, make_rng(3), repetitions=5, ledger=led)
    assert led["reflector"] == 5 * 2 * 7
    with pytest.raises(ValueError):
        amp_estimate(0.3, 12, make_rng(3))


@given(st.floats(0, 1), st.sampled_from([2, 4, 8, 32]))
def test_fejer_is_distribution(a, M):
    p = fejer_distribution(a, M)
    assert np.all(p >= 0) and p.sum() == pytest.approx(1.0)


def test_q_mean_sigma_zero_exact():
    est = q_mean_estimate(GaussianSource(0.7, 0.0), 10.0, 0.01, make_rng(0))
    assert est.estimate == 0.7 and est.model == "MODEL-LEVEL"


def test_q_mean_tail_bound():
    rng = make_rng(1)
    src = GaussianSource(1.0, 1.0)
    acc = math.log(100) / 100
    assert acc == pytest.approx(0.0461, abs=1e-4)
    misses = sum(abs(q_mean_estimate(src, 100.0, 0.01, rng).estimate - 1.0) > acc
                 for _ in range(100_000))
    # excursions occur with probability exactly delta; allow three standard errors
    assert misses / 100_000 <= 0.01 + 3 * math.sqrt(0.01 * 0.99 / 100_000)


def test_q_mean_rejects_small_tau():
    with pytest.raises(ValueError):
        q_mean_estimate(GaussianSource(0.0, 1.0), 1.0, 0.01, make_rng(0))


def test_query_cost_monotone_and_floor():
    taus = np.linspace(1.0, 5000.0, 2000)
    costs = [query_cost(t) for t in taus]
    assert all(a <= b for a, b in zip(costs, costs[1:]))
    assert all(c >= t for c, t in zip(costs, taus))
    led = QueryLedger()
    est = q_mean_estimate(GaussianSource(0.0, 1.0), 50.0, 0.05, make_rng(0), ledger=led)
    assert est.queries == led["evaluation"] == query_cost(50.0) >= 50


def test_classical_examples():
    assert classical_mean_estimate(GaussianSource(0.4, 0.0), 1, make_rng(0)) == 0.4
    rng = make_rng(1)
    src = GaussianSource(0.0, 1.0)
    errs = np.array([abs(classical_mean_estimate(src, 10_000, rng)) for _ in range(2000)])
    assert np.mean(errs <= 0.04) >= 0.99
    led = QueryLedger()
    classical_mean_estimate(src, 17, rng, ledger=led)
    assert led["evaluation"] == 17


def test_classical_sample_scaling():
    rng = make_rng(2)
    src = GaussianSource(0.0, 1.0)
    ks = np.array([100, 400, 1600, 6400])
    # 95th percentile of the error at each k, then invert the fit to get k(eps)
    q = np.array([np.quantile(np.abs(src.average(int(k), rng, size=20_000)), 0.95) for k in ks])
    slope = np.polyfit(np.log(q), np.log(ks), 1)[0]
    assert abs(slope - (-2.0)) <= 0.2


def test_point_source_clt_matches_exact():
    oracle = StochasticOracle(Quadratic(np.zeros(1)), 1, 1.0, "bounded")
    src = PointSource(oracle, np.zeros(1))
    rng = make_rng(3)
    small = src.average(50, rng, size=20_000)
    assert np.std(small) == pytest.approx(math.sqrt(1 / 3 / 50), rel=0.05)


def test_tau_and_samples_meet_accuracy():
    tau = quantum_tau_for(0.01, 1.0, 0.01)
    assert 1.0 * math.log(100) / tau <= 0.01
    k = classical_samples_for(0.01, 1.0, 0.01)
    rng = make_rng(4)
    errs = np.abs(GaussianSource(0.0, 1.0).average(k, rng, size=50_000))
    assert np.mean(errs > 0.01) <= 0.012
    # tiny failure probabilities stay finite
    assert classical_samples_for(0.1, 1.0, 1e-300) < 10 ** 6
