"""Zeroth-order stochastic convex bandits: snapped oracle, QMinStocConv, QBandits, classical baseline.

Queries are counted in the ledger's ``evaluation`` kind.  A bandit round is
one unit of the round budget; ``queries_per_round`` converts it into oracle
queries for the inner optimiser (desk-scale calibration, see
:func:`calibrate`).
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .annealing import estimate_rounding, make_schedule, sim_annealing
from .core import (BudgetExhausted, Box, ConvexBody, LinearMap, Quadratic, QueryLedger,
                   StochasticOracle, make_rng)
from .hitrun import SamplerError, WalkState, hit_and_run
from .meanest import PointSource, classical_samples_for, query_cost

__all__ = [
    "BanditInstance", "SnappedOracle", "snapped_eval", "snap", "QMinResult",
    "qmin_stoc_conv", "qmin_repeats", "final_epoch", "RegretTrace", "intervals", "qbandits", "classical_epoch_bandit",
    "default_instance", "evaluation_cost", "Calibration", "calibrate", "affordable_eps", "DEFAULT_C_EPS", "EPS_FLOOR", "EPS_CEIL",
]

ESTIMATORS = ("quantum", "classical")
EPS_FLOOR = 1e-6
EPS_CEIL = 0.5
DEFAULT_C_EPS = 3e-5


@dataclass
class BanditInstance:
    """Body ``K`` with ``B(0, r) in K in B(0, R)``, ``f: K -> [0, 1]`` with known minimum."""

    body: ConvexBody
    f: object
    sigma: float
    T: int
    L: float
    R: float = 2.0
    noise: str = "gaussian"

    def __post_init__(self):
        if self.T < 1:
            raise ValueError("horizon must be at least 1")

    @property
    def n(self) -> int:
        return self.body.n

    @property
    def f_star(self) -> float:
        return float(self.f.minimum)

    def regret(self, x) -> float:
        return float(self.f(np.asarray(x, dtype=float))) - self.f_star

    def oracle(self, ledger=None) -> StochasticOracle:
        return StochasticOracle(self.f, self.n, self.sigma, self.noise, ledger)


def default_instance(n: int = 2, sigma: float = 0.1, T: int = 2 ** 10,
                     center=None, R: float = 2.0) -> BanditInstance:
    """Quadratic on the cube ``[-1, 1]^n`` scaled so that ``f`` maps into ``[0, 1]``."""
    body = Box.cube(n, 1.0)
    c = np.array([0.3, -0.2] + [0.1] * (n - 2))[:n] if center is None else np.asarray(center, float)
    far = np.sum((1.0 + np.abs(c)) ** 2)
    scale = 1.0 / far
    f = Quadratic(c, scale)
    L = 2.0 * scale * math.sqrt(far)
    return BanditInstance(body, f, sigma, T, L, R)


# --------------------------------------------------------------------------
# snapped oracle

def snap(x, alpha: float) -> np.ndarray:
    """Nearest point of the grid ``alpha Z^n`` coordinate-wise; ties go toward ``-inf``."""
    x = np.asarray(x, dtype=float)
    return np.ceil(x / alpha - 0.5) * alpha


class SnappedOracle:
    """``O_f^{tau, alpha}``: snap to the ``alpha``-grid, then estimate ``f`` there.

    ``alpha = eps / (2 n L)``, ``t^2 = n ln(R / alpha) + ln 10``,
    ``Delta = exp(-t^2)`` and ``tau = 2 n sigma t^2 / eps``, floored at
    ``t^2`` (the mean estimator needs ``tau >= ln(1/Delta)``).  The
    classical estimator averages enough samples to meet the same contract,
    error at most ``eps / (2n)`` except with probability ``Delta``.  With
    ``sigma = 0`` every evaluation is exact and costs one query for either
    estimator.  A fresh, independent estimate is drawn on every call.
    ``amplitude = eps / n`` is the bound on ``|F - f|`` the guarantee rests on.
    """

    def __init__(self, instance: BanditInstance, eps: float, rng, *,
                 estimator: str = "quantum", ledger: Optional[QueryLedger] = None,
                 budget: Optional[int] = None, c: float = 1.0):
        if estimator not in ESTIMATORS:
            raise ValueError(f"unknown estimator {estimator!r}")
        self.instance = instance
        self.n = instance.n
        self.eps = float(eps)
        n, L, R = instance.n, instance.L, instance.R
        self.alpha = eps / (2 * n * L)
        self.t2 = n * math.log(R / self.alpha) + math.log(10.0)
        self.delta = math.exp(-self.t2)
        self.tau = max(2 * n * instance.sigma * self.t2 / eps, self.t2)
        self.cost = evaluation_cost(instance, eps, estimator, c)
        self.c = c
        self.estimator = estimator
        self.amplitude = eps / n
        self.ledger = ledger if ledger is not None else QueryLedger()
        self.budget = budget
        self.rng = make_rng(rng)
        self._acc = instance.sigma * self.t2 / self.tau
        self._stoch = instance.oracle()
        self.calls = 0

    @property
    def used(self) -> int:
        return self.ledger["evaluation"]

    def _reserve(self, count: int):
        if self.budget is not None and self.used + count * self.cost > self.budget:
            raise BudgetExhausted(f"budget {self.budget} exhausted after {self.used} queries")

    def evaluate(self, x):
        x = np.asarray(x, dtype=float)
        alpha = self.alpha
        pts = np.ceil(x.reshape(-1, self.n) / alpha - 0.5) * alpha
        if self.budget is not None:
            self._reserve(len(pts))
        if self.instance.sigma == 0:
            self.ledger.charge("evaluation", self.cost * len(pts))
            self.calls += len(pts)
            vals = np.asarray(self.instance.f(pts), dtype=float)
        elif self.estimator == "quantum":
            vals = self._quantum_batch(pts)
        else:
            vals = self._classical_batch(pts)
        return float(vals[0]) if x.ndim == 1 else vals.reshape(x.shape[:-1])

    def _quantum_batch(self, pts):
        """Vectorised form of :func:`q_mean_estimate` with identical law and charge."""
        k = len(pts)
        self.calls += k
        self.ledger.charge("evaluation", self.cost * k)
        acc = self._acc
        err = self.rng.uniform(-acc, acc, k)
        # excursion flags are iid Bernoulli(delta): draw their count, then where they fall
        m = self.rng.binomial(k, self.delta)
        if m:
            where = self.rng.choice(k, m, replace=False)
            err[where] = self.rng.uniform(1.0, 3.0, m) * acc * self.rng.choice([-1.0, 1.0], m)
        mu = self.instance.f(pts)
        return mu + err

    def _classical_batch(self, pts):
        k = len(pts)
        self.calls += k
        self.ledger.charge("evaluation", self.cost * k)
        if self.instance.noise == "gaussian":
            mu = np.asarray(self.instance.f(pts), dtype=float)
            return mu + self.instance.sigma / math.sqrt(self.cost) * self.rng.standard_normal(k)
        return np.array([PointSource(self._stoch, p).average(self.cost, self.rng)
                         for p in pts])

    def __call__(self, x):
        return self.evaluate(x)


def evaluation_cost(instance: BanditInstance, eps: float, estimator: str = "quantum",
                    c: float = 1.0) -> int:
    """Queries one snapped evaluation at accuracy ``eps`` costs."""
    if instance.sigma == 0:
        return 1
    n, L, R = instance.n, instance.L, instance.R
    alpha = eps / (2 * n * L)
    t2 = n * math.log(R / alpha) + math.log(10.0)
    if estimator == "quantum":
        return query_cost(max(2 * n * instance.sigma * t2 / eps, t2), c)
    if estimator == "classical":
        return classical_samples_for(eps / (2 * n), instance.sigma, math.exp(-t2))
    raise ValueError(f"unknown estimator {estimator!r}")


def snapped_eval(oracle: SnappedOracle, x) -> float:
    return oracle.evaluate(x)


# --------------------------------------------------------------------------
# QMinStocConv

def final_epoch(n: int, eps: float) -> int:
    """Smallest ``K`` with ``(1 - 1/sqrt(n))^K <= eps / n``.

    The default ``ceil(sqrt(n) ln(n/eps))`` cools far below ``eps / n`` in
    low dimension, where fresh evaluation noise divided by the temperature
    swamps the density.
    """
    q = 1.0 - 1.0 / math.sqrt(n)
    return max(1, math.ceil(math.log(eps / n) / math.log(q) - 1e-12))

@dataclass
class QMinResult:
    point: np.ndarray
    value: float
    queries: int
    truncated: bool
    epochs_completed: int


def qmin_stoc_conv(instance: BanditInstance, eps: float, budget: Optional[int], rng, *,
                   estimator: str = "quantum", strands: int = 4, steps: int = 4,
                   epochs: Optional[int] = None, ledger: Optional[QueryLedger] = None,
                   c: float = 1.0) -> QMinResult:
    """Anneal against the snapped oracle built for accuracy ``eps`` until ``budget`` queries are spent.

    The oracle is ``eps / n``-close to ``f``, which is what the annealer
    needs to reach accuracy ``eps``.  If the
    budget does not cover the initial uniform draws, the origin is returned
    with ``truncated=True``.
    """
    if budget is not None and budget <= 0:
        raise ValueError("budget must be positive")
    rng = make_rng(rng)
    eps = min(max(eps, EPS_FLOOR), EPS_CEIL)
    led = ledger if ledger is not None else QueryLedger()
    start = led["evaluation"]
    cap = None if budget is None else start + int(budget)
    oracle = SnappedOracle(instance, eps, rng, estimator=estimator, ledger=led,
                           budget=cap, c=c)
    n = instance.n
    if epochs is None:
        epochs = final_epoch(max(n, 2), eps)
    sched = make_schedule(max(n, 2), eps, epochs=epochs, strands=strands, steps=steps)
    rep = sim_annealing(oracle, instance.body, eps, sched, rng)
    used = led["evaluation"] - start
    if not math.isfinite(rep.best_value):
        return QMinResult(np.zeros(n), math.inf, used, True, 0)
    return QMinResult(np.asarray(rep.best_point), rep.best_value, used, rep.truncated,
                      rep.epochs_completed)


class _GroupOracle:
    """Shares one snapped oracle between ``groups`` repeats with separate budgets.

    A repeat whose next batch would overrun its budget is frozen, as the
    sequential oracle would refuse that batch; frozen rows evaluate to 0
    without cost.
    """

    def __init__(self, oracle: SnappedOracle, groups: int, budget: Optional[int]):
        self.oracle = oracle
        self.budget = budget
        self.spent = np.zeros(groups, dtype=np.int64)
        self.live = np.ones(groups, dtype=bool)

    def evaluate(self, pts, group):
        rows = int(np.prod(pts.shape[1:-1], dtype=np.int64))
        need = np.bincount(group, minlength=self.live.size) * rows * self.oracle.cost
        if self.budget is not None:
            self.live &= self.spent + need <= self.budget
        self.spent += np.where(self.live, need, 0)
        keep = self.live[group]
        out = np.zeros(pts.shape[:-1])
        if keep.all():
            return self.oracle.evaluate(pts)
        if keep.any():
            out[keep] = self.oracle.evaluate(pts[keep])
        return out


class _StackedMap:
    """Per-strand direction maps for :func:`hit_and_run`."""

    def __init__(self, matrices):
        self.matrices = matrices

    def apply(self, z):
        return np.einsum("kij,kj->ki", self.matrices, z)


def qmin_repeats(instance: BanditInstance, eps: float, budget: Optional[int], repeats: int,
                 rng, *, estimator: str = "quantum", strands: int = 4, steps: int = 4,
                 ledger: Optional[QueryLedger] = None, c: float = 1.0) -> list:
    """``repeats`` independent :func:`qmin_stoc_conv` runs, each with ``budget`` queries, walked as one batch.

    Each repeat keeps its own rounding, best point and budget.  A sampler
    failure ends the current epoch for every repeat still running.
    """
    if budget is not None and budget <= 0:
        raise ValueError("budget must be positive")
    rng = make_rng(rng)
    eps = min(max(eps, EPS_FLOOR), EPS_CEIL)
    led = ledger if ledger is not None else QueryLedger()
    oracle = SnappedOracle(instance, eps, rng, estimator=estimator, ledger=led, c=c)
    group = _GroupOracle(oracle, repeats, budget)
    n = instance.n
    sched = make_schedule(max(n, 2), eps, epochs=final_epoch(max(n, 2), eps),
                          strands=strands, steps=steps)
    owner = np.repeat(np.arange(repeats), strands)
    best_x = np.zeros((repeats, n))
    best_v = np.full(repeats, math.inf)
    done = np.zeros(repeats, dtype=int)
    failed = False
    rows = np.arange(repeats)

    def absorb(x, epoch):
        vals = group.evaluate(x, owner).reshape(repeats, strands)
        j = np.argmin(vals, axis=1)
        better = group.live & (vals[rows, j] < best_v)
        best_v[better] = vals[rows, j][better]
        best_x[better] = x.reshape(repeats, strands, n)[rows[better], j[better]]
        done[group.live] = epoch

    x = instance.body.sample_uniform(repeats * strands, rng)
    absorb(x, 0)
    whitening = [LinearMap.identity(n)] * repeats
    amp = oracle.amplitude
    for i in range(1, sched.epochs + 1):
        if not group.live.any():
            break
        for g in range(repeats):
            rnd = estimate_rounding(whitening[g].apply(x[g * strands:(g + 1) * strands]),
                                    center=True)
            whitening[g] = rnd.whitening.compose(whitening[g])
        directions = _StackedMap(np.repeat(np.stack([w.inverse for w in whitening]),
                                           strands, axis=0))
        temp = sched.temperatures[i]

        def log_target(pts, idx, scale=-1.0 / temp):
            return group.evaluate(pts, owner[idx]) * scale

        try:
            state = hit_and_run(WalkState(x, 0, directions), log_target, instance.body,
                                sched.steps, rng, beta=min(2.0 * amp / temp, 2.0),
                                indexed_target=True)
        except SamplerError:
            failed = True
            break
        x = state.points
        absorb(x, i)
    out = []
    for g in range(repeats):
        if not math.isfinite(best_v[g]):
            out.append(QMinResult(np.zeros(n), math.inf, int(group.spent[g]), True, 0))
            continue
        truncated = failed or not group.live[g]
        out.append(QMinResult(best_x[g].copy(), float(best_v[g]), int(group.spent[g]),
                              bool(truncated), int(done[g])))
    return out


# --------------------------------------------------------------------------
# regret traces

@dataclass
class RegretTrace:
    points: np.ndarray
    instant: np.ndarray
    queries: np.ndarray
    estimator: str = "quantum"
    meta: dict = field(default_factory=dict)

    @property
    def T(self) -> int:
        return len(self.instant)

    @property
    def cumulative(self) -> np.ndarray:
        return np.cumsum(self.instant)

    @property
    def regret(self) -> float:
        return float(self.cumulative[-1]) if self.T else 0.0

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        n = self.points.shape[1]
        w.writerow(["t"] + [f"x{k}" for k in range(n)] + ["instant_regret", "cum_regret", "queries"])
        cum = self.cumulative
        for t in range(self.T):
            w.writerow([t + 1] + [f"{v:.10g}" for v in self.points[t]]
                       + [f"{self.instant[t]:.10g}", f"{cum[t]:.10g}", int(self.queries[t])])
        return buf.getvalue()


def intervals(T: int) -> list:
    """``[(start, length)]`` of the doubling partition ``{2^{i-1}, ..., 2^i - 1}``, last cut at ``T``."""
    if T < 1:
        raise ValueError("T must be at least 1")
    m = int(math.floor(math.log2(T)))
    out = []
    for i in range(1, m + 2):
        start = 2 ** (i - 1)
        length = 2 ** (i - 1) if i <= m else T - 2 ** m + 1
        if length > 0:
            out.append((start, length))
    return out


def _interval_eps(instance: BanditInstance, length: int, c_eps: float) -> float:
    n = instance.n
    eps = c_eps * n ** 5 * math.log(instance.T * instance.R) / length
    return min(max(eps, EPS_FLOOR), EPS_CEIL)


def _repeats(instance: BanditInstance, length: int) -> int:
    return min(max(1, int(math.floor(math.log2(instance.T * instance.R)))), length)


@dataclass
class Calibration:
    """Round-to-query conversion shared by the quantum and classical learners.

    ``evals_per_epoch`` is a pilot-measured upper estimate of snapped
    evaluations per annealing epoch (initial draws count as one epoch).
    """

    queries_per_round: int
    evals_per_epoch: float

    def expected_evaluations(self, n: int, eps: float) -> float:
        return self.evals_per_epoch * (final_epoch(max(n, 2), eps) + 1)

    def repeat_need(self, instance: BanditInstance, eps: float, estimator: str) -> float:
        """Queries for one repeat plus its selection evaluation."""
        cost = evaluation_cost(instance, eps, estimator)
        return (self.expected_evaluations(instance.n, eps) + 1) * cost


def affordable_eps(instance: BanditInstance, calib: Calibration, per_repeat: float,
                   estimator: str) -> float:
    """Smallest ``eps`` in ``[EPS_FLOOR, EPS_CEIL]`` whose repeat fits ``per_repeat`` queries.

    Returns ``EPS_CEIL`` when even that does not fit (the repeat then truncates).
    """
    def fits(e):
        return calib.repeat_need(instance, e, estimator) <= per_repeat

    if fits(EPS_FLOOR):
        return EPS_FLOOR
    lo, hi = math.log(EPS_FLOOR), math.log(EPS_CEIL)
    if not fits(EPS_CEIL):
        return EPS_CEIL
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if fits(math.exp(mid)):
            hi = mid
        else:
            lo = mid
    return math.exp(hi)


def calibrate(instance: BanditInstance, c_eps: float, rng, *, pilots: int = 3,
              margin: float = 1.5, strands: int = 4, steps: int = 4) -> Calibration:
    """Pick ``queries_per_round`` so every quantum repeat at the scheduled accuracy fits.

    Pilot optimisations (quantum estimator, no budget) at a few accuracies
    give the evaluations-per-epoch estimate, scaled by ``margin``; the round
    conversion is then the largest ``K (E + 1) cost / |T_i|`` over intervals.
    """
    rng = make_rng(rng)
    n = instance.n
    per_epoch = 0.0
    for eps in (0.3, 0.03, 0.003):
        K = final_epoch(max(n, 2), eps) + 1
        cost = evaluation_cost(instance, eps, "quantum")
        for _ in range(pilots):
            res = qmin_stoc_conv(instance, eps, None, rng, strands=strands, steps=steps)
            per_epoch = max(per_epoch, res.queries / cost / K)
    calib = Calibration(1, margin * per_epoch)
    need = 0.0
    for _, length in intervals(instance.T):
        eps = _interval_eps(instance, length, c_eps)
        need = max(need, _repeats(instance, length)
                   * calib.repeat_need(instance, eps, "quantum") / length)
    calib.queries_per_round = max(1, math.ceil(need))
    return calib


def _run(instance: BanditInstance, rng, estimator: str, calib: Calibration,
         c_eps: float, strands: int, steps: int) -> RegretTrace:
    rng = make_rng(rng)
    n, T = instance.n, instance.T
    ledger = QueryLedger()
    points = np.zeros((T, n))
    instant = np.zeros(T)
    queries = np.zeros(T, dtype=np.int64)
    play = np.zeros(n)
    truncations = 0
    schedule = []
    for start, length in intervals(T):
        lo = start - 1
        points[lo:lo + length] = play
        instant[lo:lo + length] = instance.regret(play)
        budget_total = length * calib.queries_per_round
        before = ledger["evaluation"]
        K = _repeats(instance, length)
        eps = max(_interval_eps(instance, length, c_eps),
                  affordable_eps(instance, calib, budget_total / K, estimator))
        schedule.append(eps)
        selector = SnappedOracle(instance, eps, rng, estimator=estimator, ledger=ledger)
        per_repeat = (budget_total - K * selector.cost) // K
        best, best_val = None, math.inf
        if per_repeat > 0:
            for res in qmin_repeats(instance, eps, per_repeat, K, rng, estimator=estimator,
                                    strands=strands, steps=steps, ledger=ledger):
                truncations += res.truncated
                val = selector.evaluate(res.point)
                if val < best_val:
                    best, best_val = res.point, val
        spent = ledger["evaluation"] - before
        # spread the interval's charge over its rounds
        queries[lo:lo + length] = before + np.minimum(
            spent, np.ceil(spent * np.arange(1, length + 1) / length)).astype(np.int64)
        if best is not None:
            play = best
    meta = {"queries_per_round": calib.queries_per_round,
            "evals_per_epoch": calib.evals_per_epoch, "c_eps": c_eps,
            "K": _repeats(instance, T), "truncated_repeats": truncations,
            "interval_eps": schedule}
    return RegretTrace(points, instant, queries, estimator, meta)


def qbandits(instance: BanditInstance, rng, *, calibration: Optional[Calibration] = None,
             c_eps: float = DEFAULT_C_EPS, strands: int = 4, steps: int = 4) -> RegretTrace:
    """Doubling-interval bandit learner with the MODEL-LEVEL quantum mean estimator.

    Interval ``i`` runs at ``eps_i = c_eps n^5 ln(TR) / |T_i|``, relaxed to
    the finest accuracy its repeat budget affords.  Without a
    ``calibration`` one is computed from ``rng`` first.
    """
    rng = make_rng(rng)
    calib = calibration or calibrate(instance, c_eps, rng, strands=strands, steps=steps)
    return _run(instance, rng, "quantum", calib, c_eps, strands, steps)


def classical_epoch_bandit(instance: BanditInstance, rng, *,
                           calibration: Optional[Calibration] = None,
                           c_eps: float = DEFAULT_C_EPS, strands: int = 4,
                           steps: int = 4) -> RegretTrace:
    """Same intervals, repeats and round budgets as :func:`qbandits`, classical averages for evaluation.

    The calibration is always the quantum learner's, so both spend the
    same budget; classical evaluations cost more at fine accuracy, so the
    affordable accuracy per interval is coarser.
    """
    rng = make_rng(rng)
    calib = calibration or calibrate(instance, c_eps, rng, strands=strands, steps=steps)
    return _run(instance, rng, "classical", calib, c_eps, strands, steps)
