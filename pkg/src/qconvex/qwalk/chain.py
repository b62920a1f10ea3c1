"""Finite reversible Markov chains: stationary densities, discriminants, grids."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy import linalg

__all__ = [
    "ReducibleChain", "NonReversibleWarning", "DiscreteChain", "stationary",
    "discriminant", "random_reversible_chain", "birth_death_chain",
    "lazy_cycle_chain", "metropolis_grid_chain", "hit_and_run_grid_chain",
    "tv_distance", "mixing_time", "load_chain", "dump_chain",
]

ROW_TOL = 1e-12
BALANCE_TOL = 1e-10


class ReducibleChain(ValueError):
    """The chain has no unique stationary density."""


class NonReversibleWarning(UserWarning):
    pass


def stationary(P) -> np.ndarray:
    """Unique stationary density of a row-stochastic matrix."""
    P = np.asarray(P, dtype=float)
    n = P.shape[0]
    # null space of (P^T - I), with the normalisation row appended
    A = np.vstack([P.T - np.eye(n), np.ones((1, n))])
    null = linalg.null_space(P.T - np.eye(n), rcond=1e-10)
    if null.shape[1] != 1:
        raise ReducibleChain(
            f"eigenvalue 1 has multiplicity {null.shape[1]}; no unique stationary density")
    rhs = np.zeros(n + 1)
    rhs[-1] = 1.0
    pi = np.linalg.lstsq(A, rhs, rcond=None)[0]
    pi = np.maximum(pi, 0.0)
    return pi / pi.sum()


@dataclass
class DiscreteChain:
    """Row-stochastic ``P`` over ``|Omega|`` states with its stationary density."""

    P: np.ndarray
    points: Optional[np.ndarray] = None

    def __post_init__(self):
        self.P = np.array(self.P, dtype=float)
        if self.P.ndim != 2 or self.P.shape[0] != self.P.shape[1]:
            raise ValueError("transition matrix must be square")
        if np.any(self.P < -ROW_TOL):
            raise ValueError("transition matrix has negative entries")
        if np.max(np.abs(self.P.sum(axis=1) - 1.0)) > ROW_TOL:
            raise ValueError("rows must sum to 1 within 1e-12")
        self.P = np.maximum(self.P, 0.0)
        self.pi = stationary(self.P)
        flow = self.pi[:, None] * self.P
        self.reversible = bool(np.max(np.abs(flow - flow.T)) <= BALANCE_TOL)
        ev = np.linalg.eigvals(self.P)
        unit = np.abs(np.abs(ev) - 1.0) < 1e-9
        self.periodic = bool(np.sum(unit) > 1)

    @property
    def size(self) -> int:
        return self.P.shape[0]

    def power(self, t: int) -> np.ndarray:
        return np.linalg.matrix_power(self.P, t)


def discriminant(chain: DiscreteChain) -> np.ndarray:
    """``D(x, y) = sqrt(P(x, y) P(y, x))``."""
    if not chain.reversible:
        warnings.warn("chain is not reversible; spec(D) need not equal spec(P)",
                      NonReversibleWarning, stacklevel=2)
    return np.sqrt(chain.P * chain.P.T)


# --------------------------------------------------------------------------
# constructors

def random_reversible_chain(size: int, rng, density: float = 1.0,
                            laziness: float = 0.0) -> DiscreteChain:
    """Random walk on a random weighted graph: ``P = W / rowsum(W)`` with ``W`` symmetric."""
    w = rng.random((size, size))
    if density < 1.0:
        w *= rng.random((size, size)) < density
    w = np.triu(w) + np.triu(w, 1).T
    # a path guarantees irreducibility
    for i in range(size - 1):
        w[i, i + 1] = w[i + 1, i] = max(w[i, i + 1], 0.05)
    P = w / w.sum(axis=1, keepdims=True)
    if laziness:
        P = laziness * np.eye(size) + (1 - laziness) * P
    P /= P.sum(axis=1, keepdims=True)
    return DiscreteChain(P)


def birth_death_chain(up, down) -> DiscreteChain:
    """Nearest-neighbour chain with ``P(i, i+1) = up[i]``, ``P(i+1, i) = down[i]``."""
    up, down = np.asarray(up, float), np.asarray(down, float)
    n = up.size + 1
    P = np.zeros((n, n))
    for i in range(n - 1):
        P[i, i + 1] = up[i]
        P[i + 1, i] = down[i]
    P[np.diag_indices(n)] = 1.0 - P.sum(axis=1)
    return DiscreteChain(P)


def lazy_cycle_chain(size: int, hold: float = 0.5) -> DiscreteChain:
    P = hold * np.eye(size)
    for i in range(size):
        P[i, (i + 1) % size] += (1 - hold) / 2
        P[i, (i - 1) % size] += (1 - hold) / 2
    return DiscreteChain(P)


def _grid_neighbours(shape):
    idx = np.arange(int(np.prod(shape))).reshape(shape)
    pairs = []
    for axis in range(len(shape)):
        a = np.take(idx, range(shape[axis] - 1), axis=axis).ravel()
        b = np.take(idx, range(1, shape[axis]), axis=axis).ravel()
        pairs.append(np.stack([a, b], axis=1))
    return np.concatenate(pairs)


def metropolis_grid_chain(log_density, shape, points=None) -> DiscreteChain:
    """Lazy nearest-neighbour Metropolis chain whose stationary density is ``exp(log_density)``.

    Each of the ``2d`` neighbour moves is proposed with probability ``1/(4d)``
    so the chain holds with probability at least one half.
    """
    shape = tuple(np.atleast_1d(shape))
    logp = np.asarray(log_density, dtype=float).ravel()
    size = logp.size
    if size != int(np.prod(shape)):
        raise ValueError("log_density does not match the grid shape")
    prop = 1.0 / (4 * len(shape))
    P = np.zeros((size, size))
    for a, b in _grid_neighbours(shape):
        P[a, b] = prop * min(1.0, math.exp(logp[b] - logp[a]))
        P[b, a] = prop * min(1.0, math.exp(logp[a] - logp[b]))
    P[np.diag_indices(size)] = 1.0 - P.sum(axis=1)
    return DiscreteChain(P, points)


def hit_and_run_grid_chain(points, log_density: Callable, body, nodes: int = 48,
                           metropolis: bool = True, linear_map=None) -> DiscreteChain:
    """Grid discretisation of hit-and-run: ``K(x,y) ~ g(y) / (mu(x,y) |x-y|^{n-1})``.

    ``mu(x, y)`` is the integral of ``g`` over the chord through ``x`` and
    ``y``, computed by Gauss-Legendre quadrature.  Rows are normalised; with
    ``metropolis=True`` a Metropolis-Hastings correction makes the grid
    density ``g`` exactly stationary.  When directions are drawn as ``A z``
    (``linear_map = A``) the kernel is that of plain hit-and-run in the
    coordinates ``A^{-1} x``, i.e. ``|x-y|^{n-1}`` becomes
    ``|A^{-1} u|^n |x-y|^{n-1}`` for the unit direction ``u``.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.shape[0] == 1 and pts.shape[1] > 1 and body.n == 1:
        pts = pts.T
    m, n = pts.shape
    logg = np.asarray(log_density(pts), dtype=float)
    A_inv = None if linear_map is None else np.linalg.inv(np.atleast_2d(linear_map))
    gl_x, gl_w = np.polynomial.legendre.leggauss(nodes)
    K = np.zeros((m, m))
    for i in range(m):
        diff = pts - pts[i]
        dist = np.linalg.norm(diff, axis=1)
        others = np.nonzero(dist > 0)[0]
        u = diff[others] / dist[others, None]
        s, t = body._chord(np.repeat(pts[i:i + 1], len(others), 0), u)
        half = 0.5 * (t - s)
        lam = 0.5 * (t + s)[:, None] + half[:, None] * gl_x
        line = pts[i] + lam[..., None] * u[:, None, :]
        vals = np.exp(np.asarray(log_density(line), dtype=float) - logg.max())
        mu = half * (vals @ gl_w)
        spread = dist[others] ** (n - 1)
        if A_inv is not None:
            spread = spread * np.linalg.norm(u @ A_inv.T, axis=1) ** n
        K[i, others] = np.exp(logg[others] - logg.max()) / (mu * spread)
    Q = K / K.sum(axis=1, keepdims=True)
    if not metropolis:
        P = Q
    else:
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.exp(logg[None, :] - logg[:, None]) * (Q.T / Q)
        P = Q * np.minimum(1.0, np.nan_to_num(ratio, nan=0.0))
        P[np.diag_indices(m)] = 0.0
        P[np.diag_indices(m)] = 1.0 - P.sum(axis=1)
    return DiscreteChain(P, pts)


# --------------------------------------------------------------------------
# mixing

def tv_distance(p, q) -> float:
    return 0.5 * float(np.sum(np.abs(np.asarray(p) - np.asarray(q))))


def mixing_time(chain: DiscreteChain, rho0, eps: float, target=None,
                t_max: int = 10**6) -> int:
    """Smallest ``t`` with ``TV(rho0 P^t, target) <= eps`` (target defaults to ``pi``)."""
    target = chain.pi if target is None else np.asarray(target)
    rho = np.asarray(rho0, dtype=float).copy()
    t = 0
    while tv_distance(rho, target) > eps:
        rho = rho @ chain.P
        t += 1
        if t > t_max:
            raise RuntimeError(f"no mixing to TV {eps} within {t_max} steps")
    return t


# --------------------------------------------------------------------------
# plain-text import / export

def dump_chain(chain: DiscreteChain) -> str:
    """First line ``|Omega|``, then one row of ``P`` per line."""
    lines = [str(chain.size)]
    lines += [" ".join(repr(float(v)) for v in row) for row in chain.P]
    return "\n".join(lines) + "\n"


def load_chain(text: str) -> DiscreteChain:
    rows = [ln.split() for ln in text.strip().splitlines() if ln.strip()]
    size = int(rows[0][0])
    P = np.array([[float(v) for v in r] for r in rows[1:]])
    if P.shape != (size, size):
        raise ValueError(f"expected {size} rows of {size} entries")
    return DiscreteChain(P)
