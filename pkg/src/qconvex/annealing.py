"""Simulated annealing over hit-and-run with rounding between epochs."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .core import (ApproxConvexOracle, Ball, BudgetExhausted, ConvexBody, LinearMap,
                   make_rng)
from .hitrun import SamplerError, WalkState, hit_and_run

__all__ = [
    "Schedule", "make_schedule", "DegenerateRounding", "Rounding",
    "estimate_rounding", "AnnealReport", "sim_annealing",
    "PowerFluctuation", "LogFluctuation", "FluctuatingObjective",
    "FluctuationReport", "decreasing_fluctuations", "LemmaCheck",
    "annealing_pair_check", "validate_annealing_lemmas",
]


# --------------------------------------------------------------------------
# schedule

@dataclass(frozen=True)
class Schedule:
    n: int
    eps: float
    epochs: int
    strands: int
    steps: int
    temperatures: tuple

    @property
    def final_temperature(self) -> float:
        return self.temperatures[-1]

    def asymptotic(self) -> dict:
        """The formulas the desk-scale defaults stand in for."""
        n = self.n
        return {
            "epochs": "ceil(sqrt(n) ln(n/eps))",
            "strands": "Theta(n ln n)",
            "steps": "O~(n^3) hit-and-run steps per epoch",
            "n^3": n ** 3,
        }

    def to_dict(self) -> dict:
        return {"n": self.n, "eps": self.eps, "epochs": self.epochs,
                "strands": self.strands, "steps": self.steps,
                "temperatures": list(self.temperatures)}


def make_schedule(n: int, eps: float, epochs: Optional[int] = None,
                  strands: Optional[int] = None, steps: int = 500,
                  c_strands: float = 4.0) -> Schedule:
    """``K = ceil(sqrt(n) ln(n/eps))``, ``T_i = (1 - 1/sqrt(n))^i``, ``N = ceil(c n ln n)``."""
    if n < 2:
        # the cooling factor 1 - 1/sqrt(n) vanishes at n = 1
        raise ValueError("the temperature schedule needs n >= 2")
    if not 0 < eps < 1:
        raise ValueError("eps must lie in (0, 1)")
    if epochs is None:
        epochs = math.ceil(math.sqrt(n) * math.log(n / eps))
    if strands is None:
        strands = math.ceil(c_strands * n * math.log(n))
    if epochs < 0 or strands < 1 or steps < 0:
        raise ValueError("schedule overrides must be nonnegative (strands >= 1)")
    q = 1.0 - 1.0 / math.sqrt(n)
    temps = tuple(q ** i for i in range(epochs + 1))
    return Schedule(n, eps, int(epochs), int(strands), int(steps), temps)


# --------------------------------------------------------------------------
# rounding

class DegenerateRounding(RuntimeError):
    """The moment matrix is singular: the samples lie in a proper subspace."""


@dataclass
class Rounding:
    moment: np.ndarray
    eigenvalues: np.ndarray
    whitening: LinearMap

    @property
    def sigma_min(self) -> float:
        return float(self.eigenvalues[0])

    @property
    def sigma_max(self) -> float:
        return float(self.eigenvalues[-1])

    def to_dict(self) -> dict:
        return {"sigma_min": self.sigma_min, "sigma_max": self.sigma_max}


def estimate_rounding(samples, center: bool = False, rtol: float = 1e-10) -> Rounding:
    """Whitening map ``M^{-1/2}`` from the empirical second-moment matrix ``M``.

    With ``center=True`` the sample mean is removed first.
    """
    x = np.atleast_2d(np.asarray(samples, dtype=float))
    count, n = x.shape
    if count < n + 1:
        raise ValueError(f"rounding needs at least n+1 = {n + 1} samples")
    if center:
        x = x - x.mean(axis=0)
    moment = x.T @ x / count
    vals, vecs = np.linalg.eigh(moment)
    if vals[0] <= rtol * max(vals[-1], 1e-300):
        raise DegenerateRounding(
            f"singular moment matrix (eigenvalues {vals[0]:.3g} .. {vals[-1]:.3g})")
    white = (vecs / np.sqrt(vals)) @ vecs.T
    return Rounding(moment, vals, LinearMap(white))


# --------------------------------------------------------------------------
# annealing

@dataclass
class AnnealReport:
    best_point: np.ndarray
    best_value: float
    epoch_best: list
    roundings: list
    ledger: dict
    schedule: Schedule
    truncated: bool = False
    epochs_completed: int = 0
    stop_reason: str = ""

    def to_dict(self) -> dict:
        return {
            "best_point": [float(v) for v in self.best_point],
            "best_value": float(self.best_value),
            "epoch_best": [float(v) for v in self.epoch_best],
            "roundings": self.roundings,
            "ledger": dict(self.ledger),
            "schedule": self.schedule.to_dict(),
            "asymptotic": self.schedule.asymptotic(),
            "truncated": self.truncated,
            "stop_reason": self.stop_reason,
            "epochs_completed": self.epochs_completed,
        }


def _amplitude(oracle) -> float:
    return float(getattr(oracle, "amplitude", 0.0) or 0.0)


def sim_annealing(oracle, body: ConvexBody, eps: float, schedule: Schedule, rng,
                  *, chord_eps: Optional[float] = None, center_rounding: bool = True,
                  beta_cap: float = 2.0, ledger=None) -> AnnealReport:
    """Anneal ``N`` hit-and-run strands through ``exp(-F/T_i)``; return the best point seen.

    ``oracle.evaluate`` must accept batches of points; its ``amplitude``
    attribute (the bound on ``|F - f|``) sets the logconcavity defect
    ``2 amplitude / T_i`` handed to the chord sampler, capped at ``beta_cap``
    (its value at ``T = eps/n``): below that temperature an ``e^{3 beta}``
    rejection envelope never accepts.  ``BudgetExhausted`` raised by the oracle stops the
    run and the best point found so far is reported with ``truncated=True``;
    a :class:`~qconvex.hitrun.SamplerError` (possible when evaluations carry
    fresh noise) does the same with its own ``stop_reason``.
    """
    rng = make_rng(rng)
    if ledger is None:
        ledger = getattr(oracle, "ledger", None)
    amp = _amplitude(oracle)
    best_x = np.zeros(body.n)
    best_v = math.inf
    epoch_best = []
    roundings = []
    truncated = False
    done = 0

    def absorb(points, values):
        nonlocal best_x, best_v
        k = int(np.argmin(values))
        if values[k] < best_v:
            best_v, best_x = float(values[k]), points[k].copy()

    try:
        x = body.sample_uniform(schedule.strands, rng)
        absorb(x, np.atleast_1d(oracle.evaluate(x)))
        epoch_best.append(best_v)
        whitening = LinearMap.identity(body.n)
        for i in range(1, schedule.epochs + 1):
            pulled = whitening.apply(x)
            rnd = estimate_rounding(pulled, center=center_rounding)
            whitening = rnd.whitening.compose(whitening)
            roundings.append(rnd.to_dict())
            directions = LinearMap(whitening.inverse)
            temp = schedule.temperatures[i]
            beta = min(2.0 * amp / temp, beta_cap)

            def log_target(pts, scale=-1.0 / temp):
                return np.multiply(oracle.evaluate(pts), scale)

            state = hit_and_run(WalkState(x, 0, directions), log_target, body,
                                schedule.steps, rng, beta=beta, eps=chord_eps)
            x = state.points
            absorb(x, np.atleast_1d(oracle.evaluate(x)))
            epoch_best.append(best_v)
            done = i
    except BudgetExhausted:
        truncated, reason = True, "budget"
    except SamplerError as exc:
        truncated, reason = True, f"sampler: {exc}"
    else:
        reason = ""
    snap = ledger.snapshot() if ledger is not None else {}
    return AnnealReport(best_x, best_v, epoch_best, roundings, snap, schedule,
                        truncated, done, reason)


# --------------------------------------------------------------------------
# decreasing fluctuations

@dataclass(frozen=True)
class PowerFluctuation:
    """``Delta(r) = c r^p`` with ``0 < p < 2``."""

    c: float
    p: float

    def __call__(self, r):
        return self.c * np.power(np.maximum(r, 0.0), self.p)

    def fixed_point(self, alpha: float, n: int, C: float = 1.0) -> float:
        return (2 * 3 ** self.p * self.c * C * n / alpha) ** (1 / (2 - self.p))


@dataclass(frozen=True)
class LogFluctuation:
    """``Delta(r) = c log(1 + d r)``."""

    c: float
    d: float

    def __call__(self, r):
        return self.c * np.log1p(self.d * np.maximum(r, 0.0))

    def fixed_point(self, alpha: float, n: int, C: float = 1.0) -> float:
        from scipy.optimize import brentq
        k = 2 * self.c * C * n / alpha
        h = lambda r: k * math.log1p(3 * self.d * r) - r * r
        hi = 1.0
        while h(hi) > 0:
            hi *= 2
        return brentq(h, 1e-12, hi)


@dataclass
class FluctuatingObjective:
    """``F(x) = f(x) + Delta(|x - x_min|) s(x)`` with a fixed sinusoid ``|s| <= 1``.

    The evaluation point is ``x + shift``, so the same object serves balls
    around any center.
    """

    base: Callable
    minimizer: np.ndarray
    delta: Callable
    seed: int = 0
    shift: Optional[np.ndarray] = None
    amplitude: float = 0.0
    ledger: object = field(default=None, repr=False)

    def __post_init__(self):
        self.minimizer = np.asarray(self.minimizer, dtype=float)
        n = self.minimizer.size
        if self.shift is None:
            self.shift = np.zeros(n)
        rng = make_rng(self.seed)
        self._omega = rng.normal(0.0, 8.0, (3, n))
        self._phase = rng.uniform(0, 2 * np.pi, 3)

    def true_value(self, x):
        x = np.asarray(x, dtype=float) + self.shift
        return self.base(x)

    def evaluate(self, x):
        x = np.asarray(x, dtype=float) + self.shift
        pts = x.reshape(-1, x.shape[-1])
        if self.ledger is not None:
            self.ledger.charge("evaluation", len(pts))
        wave = np.sin(x @ self._omega.T + self._phase).mean(axis=-1)
        dist = np.linalg.norm(x - self.minimizer, axis=-1)
        vals = self.base(x) + self.delta(dist) * wave
        return float(vals) if np.ndim(vals) == 0 else vals

    def recentred(self, center, amplitude: float) -> "FluctuatingObjective":
        return FluctuatingObjective(self.base, self.minimizer, self.delta,
                                    self.seed, np.asarray(center, dtype=float),
                                    amplitude, self.ledger)


@dataclass
class FluctuationReport:
    point: np.ndarray
    radii: list
    distances: list
    fixed_point: Optional[float]
    iterations: int

    @property
    def final_radius(self) -> float:
        return self.radii[-1]

    def to_dict(self) -> dict:
        return {"point": [float(v) for v in self.point],
                "radii": [float(r) for r in self.radii],
                "distances": [float(d) for d in self.distances],
                "fixed_point": self.fixed_point, "iterations": self.iterations}


def decreasing_fluctuations(objective: FluctuatingObjective, alpha: float,
                            eps: float, rng, *, x0=None, r0: float = 1.0,
                            C: float = 1.0, steps: int = 100,
                            max_iter: int = 100, contraction: float = 0.99,
                            epochs: Optional[int] = None,
                            strands: Optional[int] = None) -> FluctuationReport:
    """Repeat annealing on ``B(x_{t-1}, 2 r_{t-1})`` while the radius bound shrinks.

    The radius follows ``r_t^2 = 2 C n Delta(3 r_{t-1}) / alpha``; the loop
    stops once ``r_t >= contraction * r_{t-1}`` or ``r_t = 0``.
    """
    rng = make_rng(rng)
    n = objective.minimizer.size
    x = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float)
    delta = objective.delta
    radii = [float(r0)]
    distances = [float(np.linalg.norm(x - objective.minimizer))]
    r = float(r0)
    it = 0
    for it in range(1, max_iter + 1):
        amp = float(delta(3 * r))
        eps_t = min(max(eps, n * amp), 0.5)
        local = objective.recentred(x, amp)
        sched = make_schedule(n, eps_t, epochs=epochs, strands=strands, steps=steps)
        rep = sim_annealing(local, Ball.centered(n, 2 * r), eps_t, sched, rng)
        x = x + rep.best_point
        r_new = math.sqrt(2 * C * n * amp / alpha)
        distances.append(float(np.linalg.norm(x - objective.minimizer)))
        radii.append(r_new)
        if r_new == 0:
            break
        if r_new >= contraction * r:
            if it == 1:
                raise ValueError("radius does not contract on the first step; "
                                 "the fluctuation model is too large")
            break
        r = r_new
    fp = delta.fixed_point(alpha, n, C) if hasattr(delta, "fixed_point") else None
    return FluctuationReport(x, radii, distances, fp, it)


# --------------------------------------------------------------------------
# warmness and overlap of consecutive annealing densities

@dataclass
class LemmaCheck:
    objective: str
    perturbation: str
    n: int
    epoch: int
    t_i: float
    t_next: float
    beta: float
    warm_forward: float
    warm_forward_bound: float
    warm_backward: float
    warm_backward_bound: float
    overlap: float
    overlap_bound: float

    @property
    def ok(self) -> bool:
        return (self.warm_forward <= self.warm_forward_bound
                and self.warm_backward <= self.warm_backward_bound
                and self.overlap >= self.overlap_bound)

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["ok"] = self.ok
        return d


def _grid_density(values, temperature):
    w = np.exp(-(values - values.min()) / temperature)
    return w / w.sum()


def annealing_pair_check(values, t_i: float, t_next: float, beta: float) -> dict:
    """Warmness both ways and overlap of ``exp(-F/T_i)`` and ``exp(-F/T_{i+1})`` on a grid.

    The densities are the normalised grid weights, so every integral is a
    finite sum.  Bounds: ``||pi_i/pi_{i+1}|| <= 5 exp(2 beta / T_i)``,
    ``||pi_{i+1}/pi_i|| <= 8 exp(2 beta / T_{i+1})`` and overlap
    ``>= exp(-(beta / T_{i+1} + 1) / 2)``.
    """
    v = np.asarray(values, dtype=float)
    a, b = _grid_density(v, t_i), _grid_density(v, t_next)
    return {
        "warm_forward": float(np.sum(a * a / b)),
        "warm_forward_bound": 5.0 * math.exp(2.0 * beta / t_i),
        "warm_backward": float(np.sum(b * b / a)),
        "warm_backward_bound": 8.0 * math.exp(2.0 * beta / t_next),
        "overlap": float(np.sum(np.sqrt(a * b))),
        "overlap_bound": math.exp(-(beta / t_next + 1.0) / 2.0),
    }


_BASES = {"abs": np.abs, "square": np.square}


def validate_annealing_lemmas(ns=(4, 9, 16), eps: float = 0.1,
                              objectives=("abs", "square"),
                              perturbations=("none", "sinusoidal", "seeded-hash"),
                              grid: int = 20001, seed: int = 0) -> list:
    """Check every consecutive temperature pair of ``make_schedule(n, eps)``.

    ``F = f + p`` on ``[-1, 1]`` with ``f`` in ``objectives`` and ``|p| <=
    beta = eps / n``.  Returns one :class:`LemmaCheck` per pair.
    """
    xs = np.linspace(-1.0, 1.0, grid)[:, None]
    out = []
    for n in ns:
        beta = eps / n
        temps = make_schedule(n, eps, strands=1).temperatures
        for name in objectives:
            base = _BASES[name]
            for kind in perturbations:
                oracle = ApproxConvexOracle(lambda x, base=base: base(x[..., 0]), 1, kind,
                                            beta if kind != "none" else 0.0, seed)
                vals = oracle.evaluate(xs)
                for i in range(len(temps) - 1):
                    res = annealing_pair_check(vals, temps[i], temps[i + 1], beta)
                    out.append(LemmaCheck(name, kind, n, i, temps[i], temps[i + 1], beta, **res))
    return out
