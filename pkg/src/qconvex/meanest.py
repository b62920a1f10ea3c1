"""Amplitude estimation and mean estimation: circuit-level and MODEL-LEVEL quantum, plus classical.

:func:`q_mean_estimate` does not simulate a sub-Gaussian quantum mean
estimator.  It is a distributional model that meets the stated tail bound
``Pr[|mu~ - mu| > sigma ln(1/Delta) / tau] <= Delta`` and charges the stated
query cost; every :class:`MeanEstimate` it returns carries
``model="MODEL-LEVEL"``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Protocol

import numpy as np
from scipy.stats import norm

from .core import QueryLedger, _charge, make_rng

__all__ = [
    "CLT_THRESHOLD", "Source", "GaussianSource", "PointSource", "MeanEstimate", "fejer_distribution",
    "amp_estimate", "amp_error_bound", "query_cost", "q_mean_estimate",
    "classical_mean_estimate", "quantum_tau_for", "classical_samples_for",
]

EXCURSION = (1.0, 3.0)


class Source(Protocol):
    """A sampleable distribution with known mean and sub-Gaussian scale ``sigma``."""

    mean: float
    sigma: float

    def sample(self, size: int, rng) -> np.ndarray: ...


@dataclass
class GaussianSource:
    mean: float
    sigma: float

    def sample(self, size: int, rng) -> np.ndarray:
        return self.mean + self.sigma * rng.standard_normal(size)

    def average(self, k: int, rng, size=None):
        """Law of the mean of ``k`` draws, sampled exactly."""
        return self.mean + self.sigma / math.sqrt(k) * rng.standard_normal(size)


# above this many draws a non-Gaussian average is sampled from its normal limit
CLT_THRESHOLD = 10 ** 5
_FAMILY_VARIANCE = {"gaussian": 1.0, "bounded": 1.0 / 3.0, "two-point": 1.0}


class PointSource:
    """The noisy values of a :class:`~qconvex.core.StochasticOracle` at one point."""

    def __init__(self, oracle, x):
        self.oracle = oracle
        self.x = np.asarray(x, dtype=float)
        self.mean = float(oracle.mean(self.x))
        self.sigma = float(oracle.sigma)

    def sample(self, size: int, rng) -> np.ndarray:
        return self.mean + self.oracle.draw_noise(size, rng)

    def average(self, k: int, rng, size=None):
        """Mean of ``k`` draws: exact for Gaussian noise or small ``k``, else its normal limit."""
        family = self.oracle.noise
        if family == "gaussian" or k > CLT_THRESHOLD:
            sd = self.sigma * math.sqrt(_FAMILY_VARIANCE[family] / k)
            return self.mean + sd * rng.standard_normal(size)
        shape = (k,) if size is None else (size, k)
        draws = self.oracle.draw_noise(shape, rng)
        return self.mean + draws.mean(axis=-1)


@dataclass
class MeanEstimate:
    estimate: float
    delta: float
    accuracy: float
    queries: int
    excursion: bool = False
    model: str = "MODEL-LEVEL"


# --------------------------------------------------------------------------
# amplitude estimation

def fejer_distribution(a: float, M: int) -> np.ndarray:
    """Outcome law of ``M``-point phase estimation on the Grover operator for ``a = sin^2 theta``.

    The Grover operator has eigenphases ``+-2 theta``; the input is an equal
    superposition of the two eigenvectors, so the outcome ``j`` has
    probability ``(F(j/M - theta/pi) + F(j/M + theta/pi)) / 2`` with the
    Fejer kernel ``F(d) = sin^2(M pi d) / (M^2 sin^2(pi d))``.
    """
    if not 0.0 <= a <= 1.0:
        raise ValueError("a must lie in [0, 1]")
    theta = math.asin(math.sqrt(a))
    j = np.arange(M)

    def fejer(d):
        d = np.mod(d + 0.5, 1.0) - 0.5
        s = np.sin(np.pi * d)
        out = np.ones_like(d)
        nz = np.abs(s) > 1e-12
        out[nz] = np.sin(M * np.pi * d[nz]) ** 2 / (M * M * s[nz] ** 2)
        return out

    p = 0.5 * (fejer(j / M - theta / math.pi) + fejer(j / M + theta / math.pi))
    return p / p.sum()


def amp_error_bound(a: float, M: int) -> float:
    return 2 * math.pi * a * (1 - a) / M + math.pi ** 2 / M ** 2


def amp_estimate(a: float, M: int, rng, repetitions: int = 1,
                 ledger: Optional[QueryLedger] = None) -> float:
    """Median of ``repetitions`` readouts ``sin^2(pi j / M)``, ``j`` from :func:`fejer_distribution`."""
    if M < 1 or M & (M - 1):
        raise ValueError("M must be a power of two")
    if repetitions < 1:
        raise ValueError("need at least one repetition")
    rng = make_rng(rng)
    p = fejer_distribution(a, M)
    j = rng.choice(M, size=repetitions, p=p)
    # each readout uses M - 1 Grover iterates, two reflections apiece
    _charge(ledger, "reflector", repetitions * 2 * (M - 1))
    return float(np.median(np.sin(np.pi * j / M) ** 2))


# --------------------------------------------------------------------------
# mean estimation

def query_cost(tau: float, c: float = 1.0) -> int:
    """``max(tau, ceil(c tau ln^{3/2}(tau) ln ln(tau)))``, monotone in ``tau``."""
    tau = float(tau)
    if tau <= 0:
        raise ValueError("tau must be positive")
    base = math.ceil(tau)
    if tau <= math.e:
        return base
    return max(base, math.ceil(c * tau * math.log(tau) ** 1.5 * math.log(math.log(tau))))


def q_mean_estimate(source: Source, tau: float, delta: float, rng, *,
                    ledger: Optional[QueryLedger] = None, c: float = 1.0) -> MeanEstimate:
    """MODEL-LEVEL quantum mean estimate.

    With probability ``1 - delta`` the error is uniform on ``+-acc``,
    ``acc = sigma ln(1/delta) / tau``; otherwise it is a bounded excursion of
    size uniform on ``[1, 3] acc`` with a random sign.
    """
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    if tau < math.log(1.0 / delta):
        raise ValueError(f"tau = {tau} is below ln(1/delta) = {math.log(1 / delta):.4g}")
    rng = make_rng(rng)
    acc = source.sigma * math.log(1.0 / delta) / tau
    queries = query_cost(tau, c)
    _charge(ledger, "evaluation", queries)
    if rng.random() < delta:
        err = rng.uniform(*EXCURSION) * acc * rng.choice([-1.0, 1.0])
        return MeanEstimate(source.mean + err, delta, acc, queries, True)
    err = rng.uniform(-acc, acc)
    return MeanEstimate(source.mean + err, delta, acc, queries)


def classical_mean_estimate(source: Source, k: int, rng, *,
                            ledger: Optional[QueryLedger] = None) -> float:
    """Average of ``k`` fresh draws (sampled through ``source.average`` when available)."""
    if k < 1:
        raise ValueError("k must be at least 1")
    rng = make_rng(rng)
    _charge(ledger, "evaluation", k)
    if hasattr(source, "average"):
        return float(source.average(int(k), rng))
    return float(np.mean(source.sample(int(k), rng)))


def quantum_tau_for(eps: float, sigma: float, delta: float) -> int:
    """Smallest integer ``tau >= ln(1/delta)`` with ``sigma ln(1/delta) / tau <= eps``."""
    lg = math.log(1.0 / delta)
    return max(math.ceil(lg), math.ceil(sigma * lg / eps - 1e-12))


def classical_samples_for(eps: float, sigma: float, delta: float) -> int:
    """Samples after which a Gaussian-noise average misses by more than ``eps`` with probability ``delta``."""
    z = norm.isf(delta / 2.0)
    return max(1, math.ceil((z * sigma / eps) ** 2))
