import io
import math
import threading

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qconvex.core import (ApproxConvexOracle, Ball, Box, LinearMap, Polytope, QueryLedger,
                          Quadratic, StochasticOracle, body_from_config, dump_config,
                          eval_approx, eval_stochastic, load_config, make_rng,
                          objective_from_config, oracle_from_config, parse_config,
                          sample_direction, simplex_max_affine, spawn_rngs)


def test_contains_examples():
    ball = Ball.centered(2)
    assert ball.contains(np.zeros(2))
    assert not ball.contains(np.array([2.0, 0.0]))
    assert Box.cube(2).contains(np.array([1.0, 1.0]))


def test_contains_charges_membership():
    led = QueryLedger()
    ball = Ball.centered(3, ledger=led)
    ball.contains(np.zeros((5, 3)))
    assert led["membership"] == 5


def test_contains_dimension_mismatch():
    with pytest.raises(ValueError):
        Ball.centered(2).contains(np.zeros(3))


def test_chord_examples():
    ball = Ball.centered(2)
    assert np.allclose(ball.chord(np.zeros(2), np.array([1.0, 0.0])), (-1, 1))
    assert np.allclose(ball.chord(np.array([0.5, 0.0]), np.array([1.0, 0.0])), (-1.5, 0.5))
    box = Box(np.zeros(2), np.ones(2))
    u = np.ones(2) / math.sqrt(2)
    assert np.allclose(box.chord(np.full(2, 0.5), u), (-math.sqrt(2) / 2, math.sqrt(2) / 2))


def test_chord_rejects_exterior_point():
    with pytest.raises(ValueError):
        Ball.centered(2).chord(np.array([2.0, 0.0]), np.array([1.0, 0.0]))


def _bodies():
    A = np.vstack([np.eye(3), -np.eye(3), np.ones((1, 3))])
    b = np.array([1, 1, 1, 1, 1, 1, 1.5])
    return [Ball.centered(3, 1.3), Box(np.array([-1, -2, -0.5]), np.array([2, 1, 0.5])),
            Polytope(A, b)]


def test_chord_endpoints_random():
    rng = make_rng(0)
    for body in _bodies():
        for _ in range(300):
            x = body.sample_uniform(1, rng)[0] * 0.999
            u = rng.standard_normal(3)
            u /= np.linalg.norm(u)
            s, t = body.chord(x, u)
            assert s < 0 < t
            for lam in (s, t):
                assert body.contains(x + lam * u + 0 * u)
            assert not body.contains(x + (s - 1e-6) * u)
            assert not body.contains(x + (t + 1e-6) * u)


def test_sample_direction_properties():
    rng = make_rng(1)
    out = sample_direction(LinearMap.identity(3), rng, size=100_000)
    assert np.linalg.norm(out.mean(axis=0)) <= 0.02
    assert np.allclose(np.cov(out.T), np.eye(3) / 3, atol=0.05 / 3)
    m = LinearMap(np.diag([2.0, 1.0]))
    pts = sample_direction(m, rng, size=1000)
    assert np.allclose(np.linalg.norm(m.apply_inverse(pts), axis=1), 1.0, atol=1e-12)


def test_sample_direction_deterministic():
    a = sample_direction(LinearMap.identity(4), make_rng(7), size=10)
    b = sample_direction(LinearMap.identity(4), make_rng(7), size=10)
    assert np.array_equal(a, b)


def test_singular_map_rejected():
    with pytest.raises(np.linalg.LinAlgError):
        LinearMap(np.zeros((2, 2)))


@given(st.lists(st.floats(-3, 3), min_size=4, max_size=4))
@settings(max_examples=50, deadline=None)
def test_linear_map_inverse(entries):
    mat = np.array(entries).reshape(2, 2) + 4 * np.eye(2)
    m = LinearMap(mat)
    assert np.linalg.norm(m.matrix @ m.inverse - np.eye(2), 2) <= 1e-10


def test_eval_approx_examples():
    f = Quadratic(np.zeros(3))
    plain = ApproxConvexOracle(f, 3)
    x = np.array([0.1, 0.2, 0.3])
    assert eval_approx(plain, x) == f(x)
    wavy = ApproxConvexOracle(f, 3, "sinusoidal", 0.1 / 3, seed=4)
    pts = make_rng(2).uniform(-1, 1, (10_000, 3))
    assert np.max(np.abs(wavy.evaluate(pts) - f(pts))) <= 0.1 / 3
    hashed = ApproxConvexOracle(f, 3, "seeded-hash", 0.05, seed=4)
    assert np.max(np.abs(hashed.evaluate(pts) - f(pts))) <= 0.05
    assert eval_approx(hashed, x) == eval_approx(hashed, x)


def test_eval_approx_charges_ledger():
    led = QueryLedger()
    o = ApproxConvexOracle(Quadratic(np.zeros(2)), 2, ledger=led)
    o.evaluate(np.zeros((7, 2)))
    eval_approx(o, np.zeros(2))
    assert led["evaluation"] == 8


def test_eval_stochastic_examples():
    f = Quadratic(np.zeros(2))
    x = np.array([0.3, 0.4])
    assert eval_stochastic(StochasticOracle(f, 2, 0.0), x, make_rng(0)) == f(x)
    o = StochasticOracle(f, 2, 1.0)
    draws = o.sample(x, 100_000, make_rng(1))
    assert abs(draws.mean() - f(x)) <= 3 / math.sqrt(100_000)
    tail = np.mean(np.abs(draws - f(x)) >= 2.0)
    assert tail <= 2 * math.exp(-2) + 0.005


@pytest.mark.parametrize("family", ["gaussian", "bounded", "two-point"])
def test_noise_tails(family):
    o = StochasticOracle(Quadratic(np.zeros(1)), 1, 0.5, family)
    e = o.draw_noise(50_000, make_rng(3))
    for t in (1.0, 2.0, 3.0):
        assert np.mean(np.abs(e) >= 0.5 * t) <= 2 * math.exp(-t * t / 2) + 0.01


def test_ledger_threads():
    led = QueryLedger()

    def work():
        for _ in range(1000):
            led.charge("evaluation")
            led.charge("membership", 2)

    threads = [threading.Thread(target=work) for _ in range(4)]
    for th in threads:
        th.start()
    for th in threads:
        th.join()
    assert led["evaluation"] == 4000 and led["membership"] == 8000
    assert led.total == 12000
    with pytest.raises(ValueError):
        led.charge("evaluation", -1)


def test_rng_reproducible_and_independent():
    a, b = spawn_rngs(5, 2)
    c, _ = spawn_rngs(5, 2)
    assert np.array_equal(a.random(5), c.random(5))
    assert not np.array_equal(make_rng(5).random(5), b.random(5))


def test_objectives_known_minima():
    q = Quadratic(np.array([0.2, -0.1]), 2.0, 0.5)
    assert q(q.minimizer) == q.minimum == 0.5
    m = simplex_max_affine(3, np.array([0.1, 0.2, -0.1]))
    pts = make_rng(0).uniform(-1, 1, (20_000, 3))
    assert np.all(m(pts) >= m.minimum - 1e-12)
    assert m(m.minimizer) == pytest.approx(m.minimum)


def test_config_roundtrip():
    cfg = {"n": 3, "shape": "box", "radius": 2.0, "objective": "norm",
           "minimizer": [0.1, 0.0, 0.0], "perturbation": "sinusoidal", "amplitude": 0.01,
           "seed": 9}
    text = dump_config(cfg)
    assert parse_config(text) == cfg
    assert load_config(io.StringIO(text)) == cfg
    body = body_from_config(cfg)
    assert isinstance(body, Box) and body.n == 3
    f = objective_from_config(cfg)
    assert f.minimum == 0.0
    o = oracle_from_config(cfg)
    assert o.perturbation == "sinusoidal"
    noisy = oracle_from_config(dict(cfg, sigma=0.1))
    assert isinstance(noisy, StochasticOracle)
