"""Quantum simulated annealing on a grid, and the classical grid annealer it is compared with.

Both anneal through ``pi_i ~ exp(-F / T_i)`` on a fixed set of grid points
(``pi_0`` uniform).  The quantum version carries ``N`` encoded states
``|pi_i>|0>``, estimates the rounding map from them non-destructively, and
moves them between temperatures with :func:`prepare_next_state`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import linalg

from ..core import QueryLedger, make_rng
from .chain import DiscreteChain, hit_and_run_grid_chain, metropolis_grid_chain, mixing_time
from .evolve import encode_stationary, prepare_next_state
from .rounding import moment_observables, moments_from_estimates, nondestructive_estimate

__all__ = [
    "GridProblem", "QAnnealReport", "GridAnnealReport", "gibbs_density",
    "simulate_q_annealing", "classical_grid_annealing", "born_distribution",
]

GRID_CAP = 64


@dataclass
class GridProblem:
    """Grid points in a body with objective values; ``shape`` enables the Metropolis walk."""

    points: np.ndarray
    values: np.ndarray
    body: object = None
    shape: Optional[tuple] = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        self.points = pts
        self.values = np.asarray(self.values, dtype=float).ravel()
        if self.values.size != pts.shape[0]:
            raise ValueError("one objective value per grid point")
        if pts.shape[0] > GRID_CAP:
            raise ValueError(f"grid has {pts.shape[0]} points; the cap is {GRID_CAP}")
        if pts.shape[1] > 2:
            raise ValueError("grid annealing supports 1-D and 2-D grids")

    @classmethod
    def from_objective(cls, points, objective, body=None, shape=None) -> "GridProblem":
        pts = np.asarray(points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        fn = getattr(objective, "evaluate", objective)
        return cls(pts, np.asarray(fn(pts), dtype=float), body, shape)

    @property
    def size(self) -> int:
        return self.points.shape[0]

    @property
    def n(self) -> int:
        return self.points.shape[1]

    def chain(self, temperature: float, walk: str, linear_map=None) -> DiscreteChain:
        logp = np.zeros(self.size) if math.isinf(temperature) else -self.values / temperature
        if walk == "metropolis":
            shape = self.shape or (self.size,)
            return metropolis_grid_chain(logp, shape, self.points)
        if walk == "hit_and_run":
            if self.body is None:
                raise ValueError("hit-and-run grid chains need a body")
            log_density = _interpolator(self.points, logp, self.shape)
            return hit_and_run_grid_chain(self.points, log_density, self.body,
                                          linear_map=linear_map)
        raise ValueError(f"unknown walk {walk!r}")


def _interpolator(points, logp, shape):
    """Piecewise-linear interpolation of grid log-densities along chords."""
    if points.shape[1] == 1:
        order = np.argsort(points[:, 0])
        xs, ys = points[order, 0], logp[order]
        return lambda x: np.interp(np.asarray(x)[..., 0], xs, ys)
    from scipy.interpolate import RegularGridInterpolator
    if shape is None:
        raise ValueError("2-D hit-and-run grids need their shape")
    axes = [np.unique(points[:, k]) for k in range(2)]
    grid = logp.reshape(shape)
    interp = RegularGridInterpolator(axes, grid, bounds_error=False, fill_value=None)
    return lambda x: interp(np.asarray(x).reshape(-1, 2)).reshape(np.asarray(x).shape[:-1])


def gibbs_density(values, temperature: float) -> np.ndarray:
    v = np.asarray(values, dtype=float)
    if math.isinf(temperature):
        return np.full(v.size, 1.0 / v.size)
    w = np.exp(-(v - v.min()) / temperature)
    return w / w.sum()


def born_distribution(state, size: int) -> np.ndarray:
    """Measurement distribution of the first register of a doubled-space state."""
    amp = np.asarray(state).reshape(size, -1)
    p = np.sum(np.abs(amp) ** 2, axis=1)
    return p / p.sum()


@dataclass
class QAnnealReport:
    samples: np.ndarray
    best_point: np.ndarray
    best_value: float
    born: np.ndarray
    target: np.ndarray
    stage_calls: list
    stage_fidelity: list
    roundings: list
    ledger: dict
    strands: int
    stages: int

    @property
    def cost_formula(self) -> str:
        mean = float(np.mean(self.stage_calls)) if self.stage_calls else 0.0
        return f"K*N*C = {self.stages}*{self.strands}*{mean:.1f}"

    def to_dict(self) -> dict:
        return {"samples": self.samples.tolist(), "best_point": self.best_point.tolist(),
                "best_value": self.best_value, "stage_calls": self.stage_calls,
                "stage_fidelity": self.stage_fidelity, "roundings": self.roundings,
                "ledger": self.ledger, "cost_formula": self.cost_formula}


def _temperatures(schedule) -> list:
    temps = list(getattr(schedule, "temperatures", schedule))
    if not temps:
        raise ValueError("need at least one temperature")
    return temps


def simulate_q_annealing(problem: GridProblem, schedule, strands: int, rng, *,
                         eps: float = 0.05, walk: str = "hit_and_run",
                         rounding: bool = True, M: int = 16, eta: float = 0.05,
                         ledger: Optional[QueryLedger] = None) -> QAnnealReport:
    """Anneal ``strands`` encoded states through the temperatures of ``schedule``.

    ``schedule`` is a :class:`~qconvex.annealing.Schedule` or a sequence
    ``T_0, ..., T_K``; stage 0 is the uniform density regardless of
    ``T_0``.  Between stages the covariance of the current states is
    estimated non-destructively (one estimation per copy and moment, each
    reflection charged as one unit, with ``eta`` split evenly over all
    estimations of the run) and its square root becomes the
    hit-and-run direction map of the next chain.  Each copy is then evolved
    with accuracy ``eps / K``.  Final states are measured once each.
    """
    rng = make_rng(rng)
    temps = _temperatures(schedule)
    K = len(temps) - 1
    if strands < 1:
        raise ValueError("need at least one strand")
    stage_eps = eps / max(K, 1)
    n = problem.n
    direction = np.eye(n)
    chain_prev = problem.chain(math.inf, walk)
    states = [encode_stationary(chain_prev.pi) for _ in range(strands)]
    stage_calls, stage_fid, roundings = [], [], []
    obs, labels = moment_observables(problem.points)
    # union bound: the whole run restores every copy with probability >= 1 - eta
    eta_each = eta / max(1, K * strands * len(obs))
    for i in range(1, K + 1):
        if rounding:
            vals = np.zeros(len(obs))
            for j in range(strands):
                for k, row in enumerate(obs):
                    lo, hi = row.min(), row.max()
                    span = hi - lo if hi > lo else 1.0
                    h = np.repeat((row - lo) / span, problem.size)
                    est, states[j], _ = nondestructive_estimate(states[j], h, M, eta_each, rng,
                                                                ledger=ledger)
                    vals[k] += (lo + span * est) / strands
            _, cov = moments_from_estimates(vals, labels, n)
            evals = np.linalg.eigvalsh(cov)
            if evals[0] > 1e-12:
                direction = np.real(linalg.sqrtm(cov))
            roundings.append({"eigenvalues": evals.tolist()})
        chain = problem.chain(temps[i], walk, direction if walk == "hit_and_run" else None)
        target = encode_stationary(chain.pi)
        calls, fid = 0, []
        for j in range(strands):
            states[j], rep = prepare_next_state(states[j], chain_prev, chain, stage_eps,
                                                ledger=ledger, target=target)
            calls = rep.calls
            fid.append(rep.fidelity)
        stage_calls.append(calls)
        stage_fid.append(float(np.mean(fid)))
        chain_prev = chain
    born = np.mean([born_distribution(s, problem.size) for s in states], axis=0)
    idx = np.array([rng.choice(problem.size, p=born_distribution(s, problem.size))
                    for s in states])
    samples = problem.points[idx]
    vals = problem.values[idx]
    k = int(np.argmin(vals))
    snap = ledger.snapshot() if ledger is not None else {}
    return QAnnealReport(samples, samples[k].copy(), float(vals[k]), born,
                         gibbs_density(problem.values, temps[-1] if K else math.inf),
                         stage_calls, stage_fid, roundings, snap, strands, K)


@dataclass
class GridAnnealReport:
    samples: np.ndarray
    best_point: np.ndarray
    best_value: float
    histogram: np.ndarray
    target: np.ndarray
    steps: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"best_point": self.best_point.tolist(), "best_value": self.best_value,
                "histogram": self.histogram.tolist(), "steps": self.steps}


def classical_grid_annealing(problem: GridProblem, schedule, strands: int, rng, *,
                             walk: str = "hit_and_run", steps: Optional[Sequence[int]] = None,
                             eps: float = 0.05,
                             ledger: Optional[QueryLedger] = None) -> GridAnnealReport:
    """Run ``strands`` independent grid chains through the same temperatures.

    Stage ``i`` takes ``steps[i-1]`` transitions, by default the measured
    horizon ``t`` with ``TV(pi_{i-1} P_i^t, pi_i) <= eps / K``.  Each
    transition is charged as one ``walk_step``.
    """
    rng = make_rng(rng)
    temps = _temperatures(schedule)
    K = len(temps) - 1
    idx = rng.integers(problem.size, size=strands)
    prev = gibbs_density(problem.values, math.inf)
    used = []
    for i in range(1, K + 1):
        chain = problem.chain(temps[i], walk)
        t = (mixing_time(chain, prev, eps / max(K, 1)) if steps is None
             else int(steps[i - 1]))
        cdf = np.cumsum(chain.P, axis=1)
        cdf[:, -1] = 1.0
        for _ in range(t):
            u = rng.random(strands)
            idx = np.minimum((cdf[idx] < u[:, None]).sum(axis=1), problem.size - 1)
        if ledger is not None:
            ledger.charge("walk_step", t * strands)
        used.append(t)
        prev = chain.pi
    hist = np.bincount(idx, minlength=problem.size) / strands
    vals = problem.values[idx]
    k = int(np.argmin(vals))
    samples = problem.points[idx]
    return GridAnnealReport(samples, samples[k].copy(), float(vals[k]), hist,
                            gibbs_density(problem.values, temps[-1] if K else math.inf),
                            used)
