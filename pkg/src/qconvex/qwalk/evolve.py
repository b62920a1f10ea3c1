"""Evolve ``|pi_0>|0>`` to ``|pi_1>|0>`` with approximate walk reflectors and pi/3 amplification."""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict
from typing import Optional

import numpy as np

from ..core import QueryLedger
from .chain import DiscreteChain, mixing_time
from .reflect import OMEGA, ApproxReflector, pi3_amplify, pi3_uses

__all__ = [
    "OverlapTooSmall", "PrepareReport", "encode_stationary", "l2_warmness",
    "phase_threshold", "prepare_next_state",
]

MIN_OVERLAP = 1e-3
MAX_ROUNDS = 8


class OverlapTooSmall(ValueError):
    pass


@dataclass
class PrepareReport:
    overlap: float
    warmness: float
    t0: int
    t1: int
    a0: int
    a1: int
    c: int
    rounds: int
    calls: int
    formula: float
    leaked: float
    fidelity: Optional[float] = None

    def to_dict(self) -> dict:
        return asdict(self)


def encode_stationary(density) -> np.ndarray:
    """``|rho>|0>`` on the doubled space, the fixed vector of ``W'`` when ``rho = pi``."""
    rho = np.asarray(density, dtype=float)
    N = rho.size
    out = np.zeros((N, N), dtype=complex)
    out[:, 0] = np.sqrt(rho)
    return out.ravel()


def l2_warmness(rho, sigma) -> float:
    """``||rho / sigma|| = sum rho^2 / sigma``."""
    rho, sigma = np.asarray(rho, float), np.asarray(sigma, float)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(rho > 0, rho * rho / sigma, 0.0)
    return float(np.sum(terms))


def phase_threshold(t: int) -> float:
    """``xi`` of a ``W'`` eigenvalue coming from ``lambda = 1 - 1/t``.

    ``W'`` doubles the walk phases, so ``xi = 2 arccos(1 - 1/t) / (2 pi)``.
    """
    t = max(int(t), 1)
    return min(1.0, math.acos(max(-1.0, 1.0 - 1.0 / t)) / math.pi)


def _reflector(factors, t: int, c: int, ledger) -> ApproxReflector:
    delta = phase_threshold(t)
    a = max(1, math.ceil(math.log2(1.0 / delta) - 1e-12))
    dim = factors.N ** 2
    return ApproxReflector(factors.W_prime, factors.W_prime_adjoint, dim, a, c,
                           OMEGA, ledger)


def prepare_next_state(state, chain0: DiscreteChain, chain1: DiscreteChain,
                       eps: float, *, ledger: Optional[QueryLedger] = None,
                       target: Optional[np.ndarray] = None):
    """Map an encoding of ``pi_0`` to one of ``pi_1``.

    Both reflectors act through their ancilla-zero block (post-selection on
    the estimation registers); the norm lost there is reported as
    ``leaked`` and the output is renormalised.  Returns ``(state, report)``.
    """
    from .walk import WalkFactors

    pi0, pi1 = chain0.pi, chain1.pi
    p = float(np.sum(np.sqrt(pi0 * pi1)))
    if p < MIN_OVERLAP:
        raise OverlapTooSmall(f"overlap {p:.3g} below {MIN_OVERLAP}")
    beta = max(l2_warmness(pi0, pi1), l2_warmness(pi1, pi0))
    state = np.asarray(state, dtype=complex)
    if np.allclose(chain0.P, chain1.P, atol=1e-15, rtol=0):
        rep = PrepareReport(p, beta, 0, 0, 0, 0, 0, 0, 0, 0.0, 0.0)
        if target is not None:
            rep.fidelity = float(abs(np.vdot(target, state)) ** 2)
        return state.copy(), rep

    eps1 = p * eps / max(math.log(1.0 / eps), 1.0)
    c = max(1, math.ceil(math.log2(1.0 / eps1)))
    # horizons are measured from the actual start density, so the warm-start
    # factor is not applied; bad-overlap mass then scales as sqrt(TV) = eps1
    t0 = mixing_time(chain1, pi0, eps1 ** 2)
    t1 = mixing_time(chain0, pi1, eps1 ** 2)
    # smallest m whose exact-reflector failure (1 - p^2)^{3^m} is below (eps/2)^2
    m = 0
    while (1.0 - p * p) ** (3 ** m) > (eps / 2) ** 2 and m < MAX_ROUNDS:
        m += 1
    R0 = _reflector(WalkFactors(chain0), t1, c, ledger)
    R1 = _reflector(WalkFactors(chain1), t0, c, ledger)
    out = pi3_amplify(R0, R1, m, state)
    norm = float(np.linalg.norm(out))
    out = out / norm
    uses = pi3_uses(m)
    calls = uses * (R0.calls_per_use + R1.calls_per_use)
    te0 = mixing_time(chain1, pi0, eps)
    te1 = mixing_time(chain0, pi1, eps)
    formula = (math.sqrt(te0 + te1) / p * max(math.log(beta / p), 1.0)
               * math.log(1.0 / (p * eps)) ** 2)
    rep = PrepareReport(p, beta, t0, t1, R0.a, R1.a, c, m, calls, formula,
                        1.0 - norm ** 2)
    if target is not None:
        rep.fidelity = float(abs(np.vdot(target, out)) ** 2)
    return out, rep
