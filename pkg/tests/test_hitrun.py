import math

import numpy as np
import pytest
from scipy import integrate, stats

from qconvex import hitrun
from qconvex.core import Ball, Box, LinearMap, QueryLedger, make_rng
from qconvex.hitrun import (ChordDensity, LinearImage, SamplerError, WalkState, bin_search,
                            default_chord_accuracy, hit_and_run, init_e, init_p, uni_sampler,
                            write_trajectory_csv)


def density(g, s, t, beta=0.0, eps=1e-3, **kw):
    return ChordDensity.from_function(g, s, t, beta, eps, **kw)


def test_rejects_bad_parameters():
    with pytest.raises(ValueError):
        density(np.ones_like, 1.0, 0.0)
    with pytest.raises(ValueError):
        density(np.ones_like, 0.0, 1.0, beta=0.5, eps=0.5)


def test_init_p_constant_returns_first_probe():
    assert init_p(density(np.ones_like, 0.0, 1.0)) == 0.25


def test_init_p_gaussian():
    d = density(lambda x: np.exp(-x * x), -1.0, 1.0, beta=0.1)
    p = init_p(d)
    assert abs(p) <= 0.5


def test_init_p_monotone_contracts_to_right_end():
    d = density(lambda x: 10 * x, 0.0, 1.0, beta=0.1, log=True)
    p = init_p(d)
    # log g(1) - log g(p) stays within beta
    assert 10 * (1 - p) <= 0.1


def test_init_p_cap_raises_for_non_logconcave(monkeypatch):
    monkeypatch.setattr(hitrun, "COLLAPSE_RTOL", 0.0)
    rng = make_rng(0)
    # fresh noise on every call is far from beta-logconcave
    d = ChordDensity(lambda idx, lam: 50 * rng.standard_normal(lam.shape), [0.0], [1.0], 0.0, 1e-3)
    with pytest.raises(SamplerError):
        init_p(d)


def test_bin_search_linear_midpoint_one_iteration():
    d = density(lambda x: 1 + x, 0.0, 1.0)
    x = bin_search(d, 0.0, 1.0, 1.4, 1.6)
    assert x == 0.5 and d.evaluations == 1


def test_bin_search_exponential():
    d = density(lambda x: np.exp(-x), 0.0, 10.0)
    x = bin_search(d, 10.0, 0.0, math.exp(-5) * 0.9, math.exp(-5) * 1.1)
    assert abs(x - 5) <= 0.1
    assert math.exp(-5) * 0.9 <= math.exp(-x) <= math.exp(-5) * 1.1


def test_bin_search_iteration_count():
    beta = 0.1
    d = density(lambda x: -x, 0.0, 100.0, log=True)
    target = 37.3
    x = bin_search(d, 100.0, 0.0, -target - beta / 2, -target + beta / 2, log_window=True)
    assert abs(x - target) <= beta / 2
    assert d.evaluations <= math.log2(100.0 / beta) + 2


def test_init_e_constant_returns_endpoints():
    d = density(np.ones_like, -2.0, 3.0)
    assert init_e(d, init_p(d)) == (-2.0, 3.0)


def test_init_e_laplace_level_set():
    d = density(lambda x: -np.abs(x), -20.0, 20.0, beta=0.0, eps=1e-3, log=True)
    e0, e1 = init_e(d, 0.0)
    assert -7.6 <= e0 <= -6.9
    assert 6.9 <= e1 <= 7.6


def test_init_e_at_upper_eps():
    beta = 0.2
    eps = math.exp(-2 * beta) / 2 * (1 - 1e-9)
    d = density(lambda x: -np.abs(x), -20.0, 20.0, beta=beta, eps=eps, log=True)
    e0, e1 = init_e(d, init_p(d))
    assert e0 < e1


def test_uni_sampler_constant_is_uniform():
    d = ChordDensity(lambda idx, lam: np.zeros_like(lam), np.full(100_000, -1.0),
                     np.full(100_000, 2.0), 0.0, 1e-3)
    out = uni_sampler(d, make_rng(0))
    assert stats.kstest(out, stats.uniform(-1, 3).cdf).pvalue > 0.01


def _tv_against_quadrature(logg, s, t, draws, bins=200):
    edges = np.linspace(s, t, bins + 1)
    z = integrate.quad(lambda x: math.exp(logg(x)), s, t, limit=200)[0]
    mass = np.array([integrate.quad(lambda x: math.exp(logg(x)), a, b)[0]
                     for a, b in zip(edges[:-1], edges[1:])]) / z
    hist = np.histogram(draws, edges)[0] / draws.size
    return 0.5 * np.abs(hist - mass).sum(), mass


def test_uni_sampler_truncated_exponential():
    k = 100_000
    eps = 1e-4
    led = QueryLedger()
    d = ChordDensity(lambda idx, lam: -10 * lam, np.zeros(k), np.ones(k), 0.0, eps, led)
    out, info = uni_sampler(d, make_rng(1), return_stats=True)
    assert np.all((out >= info["e0"]) & (out <= info["e1"]))
    tv, mass = _tv_against_quadrature(lambda x: -10 * x, 0.0, 1.0, out)
    noise = 0.5 * np.sum(np.sqrt(mass * (1 - mass) / k))
    assert tv <= 3 * eps + 3 * noise
    assert led["evaluation"] == d.evaluations
    # expected rounds are O(1) for a logconcave density
    assert info["rounds"].mean() <= 10


def test_hit_and_run_zero_steps_is_identity():
    start = WalkState(np.array([[0.1, 0.2], [0.0, -0.3]]))
    end = hit_and_run(start, lambda x: np.zeros(x.shape[:-1]), Ball.centered(2), 0, make_rng(0))
    assert np.array_equal(end.points, start.points) and end.step == 0


def test_hit_and_run_one_step_mean():
    start = WalkState(np.zeros((100_000, 2)))
    end = hit_and_run(start, lambda x: np.zeros(x.shape[:-1]), Ball.centered(2), 1, make_rng(2))
    assert np.linalg.norm(end.points.mean(axis=0)) <= 0.02
    assert np.all(Ball.centered(2).contains(end.points))


@pytest.mark.slow
def test_hit_and_run_box_marginals_uniform():
    rng = make_rng(3)
    start = WalkState(np.full((10_000, 2), 0.9))
    end = hit_and_run(start, lambda x: np.zeros(x.shape[:-1]), Box.cube(2), 500, rng)
    for c in range(2):
        counts = np.histogram(end.points[:, c], np.linspace(-1, 1, 11))[0]
        assert stats.chisquare(counts).pvalue > 0.01


def test_affine_equivariance():
    body = Ball.centered(2)
    sigma = LinearMap(np.array([[1.5, 0.3], [0.0, 0.7]]))
    log_target = lambda x: -2.0 * np.sum(x * x, axis=-1)
    x0 = np.array([[0.1, -0.2], [0.3, 0.4], [0.0, 0.0]])
    _, traj = hit_and_run(WalkState(x0, 0, sigma), log_target, body, 20, make_rng(9),
                          eps=1e-3, record=True)
    image = LinearImage(body, sigma)
    y0 = sigma.apply_inverse(x0)
    _, traj_y = hit_and_run(WalkState(y0), lambda y: log_target(sigma.apply(y)), image, 20,
                            make_rng(9), eps=1e-3, record=True)
    assert np.allclose(traj, sigma.apply(traj_y), atol=1e-8)


def test_stationarity_smoke():
    # start from the target itself; one step should keep the marginal law
    rng = make_rng(4)
    rate = 3.0
    first = stats.truncexpon(b=2 * rate, loc=-1, scale=1 / rate).rvs(10_000, random_state=rng)
    pts = np.column_stack([first, rng.uniform(-1, 1, first.size)])
    log_target = lambda p: -rate * p[..., 0]
    end = hit_and_run(WalkState(pts), log_target, Box.cube(2), 1, rng)
    edges = np.linspace(-1, 1, 11)
    before = np.histogram(pts[:, 0], edges)[0] / len(pts)
    after = np.histogram(end.points[:, 0], edges)[0] / len(pts)
    assert 0.5 * np.abs(before - after).sum() <= 0.05


def test_default_accuracy_and_csv(tmp_path):
    assert default_chord_accuracy(0.0, 10) == pytest.approx(0.1 / 120)
    start = WalkState(np.zeros((2, 3)))
    _, traj = hit_and_run(start, lambda x: np.zeros(x.shape[:-1]), Ball.centered(3), 3,
                          make_rng(0), record=True)
    path = tmp_path / "t.csv"
    write_trajectory_csv(path, traj)
    lines = path.read_text().splitlines()
    assert lines[0] == "strand,step,x1,x2,x3"
    assert len(lines) == 1 + 2 * 4
