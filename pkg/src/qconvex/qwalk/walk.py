"""Szegedy walk operators on the doubled space, their spectra and coherent encodings.

States on the doubled space are stored as flat vectors indexed ``x * N + y``
(first register ``x``, second register ``y``).
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import linalg
from scipy.optimize import linear_sum_assignment

from .chain import DiscreteChain, discriminant, tv_distance

__all__ = [
    "UNITARY_TOL", "DENSE_CAP", "PureState", "WalkFactors", "WalkOperator",
    "build_walk", "coherent_encode", "predicted_eigenphases", "match_phases",
    "MixingPreconditionError", "GapReport", "effective_gap_report",
    "spectrum_csv",
]

UNITARY_TOL = 1e-10
EIG_TOL = 1e-9
DENSE_CAP = 32


@dataclass
class PureState:
    """Unit vector over ``Omega`` (``dims=(N,)``) or ``Omega x Omega`` (``dims=(N, N)``)."""

    amplitudes: np.ndarray
    dims: tuple

    def __post_init__(self):
        self.amplitudes = np.asarray(self.amplitudes, dtype=complex).ravel()
        if self.amplitudes.size != int(np.prod(self.dims)):
            raise ValueError("amplitude count does not match dims")
        if abs(np.linalg.norm(self.amplitudes) - 1.0) > 1e-10:
            raise ValueError("state must have unit norm")

    def overlap(self, other: "PureState") -> complex:
        return complex(np.vdot(self.amplitudes, other.amplitudes))

    def fidelity(self, other: "PureState") -> float:
        return abs(self.overlap(other)) ** 2


# --------------------------------------------------------------------------
# operator factors

class WalkFactors:
    """Matrix-free ``U``, ``S``, ``R_A`` for a chain, plus the two walk operators.

    ``U`` acts on each first-register block by the Householder reflection
    taking ``|0>`` to ``|psi_x> = sum_y sqrt(P(x,y)) |y>``; it is real,
    symmetric and an involution, so ``U^dagger = U``.
    """

    def __init__(self, chain: DiscreteChain):
        self.chain = chain
        self.N = chain.size
        psi = np.sqrt(chain.P)
        h = -psi.copy()
        h[:, 0] += 1.0
        norms = np.linalg.norm(h, axis=1)
        self.trivial = norms < 1e-14
        norms[self.trivial] = 1.0
        self.h = h / norms[:, None]
        self.psi = psi

    def _blocks(self, v):
        return np.asarray(v).reshape(v.shape[:-1] + (self.N, self.N))

    def U(self, v):
        b = self._blocks(v)
        proj = np.einsum("...xy,xy->...x", b, self.h)
        out = b - 2.0 * proj[..., None] * self.h
        out[..., self.trivial, :] = b[..., self.trivial, :]
        return out.reshape(v.shape)

    def S(self, v):
        return np.swapaxes(self._blocks(v), -1, -2).reshape(v.shape)

    def R_A(self, v):
        b = -self._blocks(v).copy()
        b[..., :, 0] *= -1.0
        return b.reshape(v.shape)

    def W(self, v):
        """``S (2 Pi - I)`` with ``2 Pi - I = U R_A U^dagger``."""
        return self.S(self.U(self.R_A(self.U(v))))

    def W_adjoint(self, v):
        return self.U(self.R_A(self.U(self.S(v))))

    def W_prime(self, v):
        """``U^dagger S U R_A U^dagger S U R_A``, applied right to left."""
        v = self.R_A(v)
        v = self.U(self.S(self.U(v)))
        v = self.R_A(v)
        return self.U(self.S(self.U(v)))

    def W_prime_adjoint(self, v):
        v = self.U(self.S(self.U(v)))
        v = self.R_A(v)
        v = self.U(self.S(self.U(v)))
        return self.R_A(v)

    def dense(self, variant: str = "primal") -> np.ndarray:
        op = self.W if variant == "primal" else self.W_prime
        eye = np.eye(self.N * self.N)
        # columns are images of basis vectors
        return op(eye).T

    def fixed_state(self, density=None) -> np.ndarray:
        """``sum_x sqrt(rho(x)) |x>|psi_x>``; ``rho`` defaults to ``pi``."""
        rho = self.chain.pi if density is None else np.asarray(density, float)
        return (np.sqrt(rho)[:, None] * self.psi).ravel()


# --------------------------------------------------------------------------
# dense walk operator

@dataclass
class WalkOperator:
    matrix: np.ndarray
    chain: DiscreteChain
    variant: str
    factors: WalkFactors = field(repr=False)
    _eig: Optional[tuple] = field(default=None, repr=False)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def unitarity_error(self) -> float:
        m = self.matrix
        return float(np.linalg.norm(m.conj().T @ m - np.eye(self.dim), 2))

    def eig(self):
        """Eigenphases in ``(-pi, pi]`` and orthonormal eigenvectors (columns)."""
        if self._eig is None:
            T, Z = linalg.schur(self.matrix.astype(complex), output="complex")
            vals = np.diag(T)
            phases = np.angle(vals)
            phases[np.isclose(phases, -np.pi, atol=1e-12)] = np.pi
            self._eig = (phases, Z)
        return self._eig

    @property
    def eigenphases(self) -> np.ndarray:
        return self.eig()[0]

    def apply(self, v):
        return self.matrix @ v

    def fixed_state(self) -> np.ndarray:
        """The stationary doubled state (``|Pi>`` or, for the alternative walk, ``|pi>|0>``)."""
        if self.variant == "primal":
            return self.factors.fixed_state()
        out = np.zeros((self.chain.size, self.chain.size))
        out[:, 0] = np.sqrt(self.chain.pi)
        return out.ravel()


def build_walk(chain: DiscreteChain, variant: str = "primal", cap: int = DENSE_CAP) -> WalkOperator:
    """Dense ``W = S(2 Pi - I)`` (``primal``) or ``W' = U^dag S U R_A U^dag S U R_A``."""
    if variant not in ("primal", "alternative"):
        raise ValueError(f"unknown walk variant {variant!r}")
    if chain.size > cap:
        raise ValueError(f"|Omega| = {chain.size} exceeds the dense cap {cap}")
    if not chain.reversible:
        raise ValueError("walk operators are built for reversible chains only")
    fac = WalkFactors(chain)
    op = WalkOperator(fac.dense(variant), chain, variant, fac)
    err = op.unitarity_error()
    if err > UNITARY_TOL:
        raise ArithmeticError(f"walk operator not unitary (error {err:.2e})")
    return op


def coherent_encode(rho0, chain: DiscreteChain) -> np.ndarray:
    """``sum_{x,y} sqrt(rho0(x)) sqrt(P(x,y)) |x>|y>``."""
    rho0 = np.asarray(rho0, dtype=float)
    if abs(rho0.sum() - 1.0) > 1e-10 or np.any(rho0 < 0):
        raise ValueError("rho0 must be a probability vector")
    return (np.sqrt(rho0)[:, None] * np.sqrt(chain.P)).ravel()


# --------------------------------------------------------------------------
# spectrum law

def predicted_eigenphases(chain: DiscreteChain, tol: float = 1e-9) -> np.ndarray:
    """Eigenphases of ``W`` from ``spec(D)``: ``+-arccos(lambda)`` plus ``0`` and ``pi`` fill.

    On the complement of ``span{|x>|psi_x>} + S span{...}`` the walk acts as
    ``-S``, which fixes the multiplicities of ``+1`` and ``-1``.
    """
    N = chain.size
    lam = np.clip(np.linalg.eigvalsh(discriminant(chain)), -1.0, 1.0)
    plus = np.sum(lam > 1 - tol)
    minus = np.sum(lam < -1 + tol)
    inner = lam[(lam <= 1 - tol) & (lam >= -1 + tol)]
    k = inner.size
    ones = plus + N * (N - 1) // 2 - k - minus
    neg = minus + N * (N + 1) // 2 - k - plus
    theta = np.arccos(inner)
    phases = np.concatenate([theta, -theta, np.zeros(ones), np.full(neg, np.pi)])
    return np.sort(phases)


def _circ(a, b):
    d = np.abs(a - b) % (2 * np.pi)
    return np.minimum(d, 2 * np.pi - d)


def match_phases(measured, predicted) -> float:
    """Largest circular error after optimally pairing two phase lists."""
    measured, predicted = np.sort(measured), np.sort(predicted)
    if measured.size != predicted.size:
        return math.inf
    cost = _circ(measured[:, None], predicted[None, :])
    r, c = linear_sum_assignment(cost)
    return float(cost[r, c].max())


# --------------------------------------------------------------------------
# effective spectral gap

class MixingPreconditionError(ValueError):
    """``rho0`` does not mix to the requested accuracy within ``t`` steps."""


@dataclass
class GapReport:
    mass: float
    max_amplitude: float
    bound: float
    violation: bool
    window: tuple
    eigenspaces: list

    def to_dict(self) -> dict:
        return {"mass": self.mass, "max_amplitude": self.max_amplitude,
                "bound": self.bound, "violation": self.violation,
                "window": list(self.window)}


def effective_gap_report(chain: DiscreteChain, rho0, t: int, eps: float, *,
                         beta: Optional[float] = None, gamma: Optional[float] = None,
                         constant: float = 10.0, window: float = 1.0,
                         walk: Optional[WalkOperator] = None) -> GapReport:
    """Overlap of ``|phi_rho0>`` with walk eigenspaces whose ``lambda`` lies in ``[1 - window/t, 1)``.

    ``lambda = cos(phase)``.  The bound is ``constant * beta sqrt(eps)`` for a
    ``beta``-warm start (default ``beta = max rho0/pi``) or
    ``constant * (gamma^{1/4} eps^{3/4} + sqrt(eps))`` when ``gamma`` is given.
    """
    rho0 = np.asarray(rho0, dtype=float)
    rho_t = rho0 @ chain.power(t)
    if tv_distance(rho_t, chain.pi) > eps:
        raise MixingPreconditionError(
            f"TV after {t} steps is {tv_distance(rho_t, chain.pi):.3g} > {eps}")
    walk = walk or build_walk(chain)
    phases, Z = walk.eig()
    phi = coherent_encode(rho0, chain)
    lam = np.cos(phases)
    lo = 1.0 - window / t
    sel = (lam >= lo) & (np.abs(phases) > EIG_TOL)
    amps = Z.conj().T @ phi
    # group numerically degenerate eigenvalues so the figure is basis free
    groups = []
    order = np.argsort(phases[sel])
    ph_sel, a_sel = phases[sel][order], amps[sel][order]
    i = 0
    while i < ph_sel.size:
        j = i + 1
        while j < ph_sel.size and ph_sel[j] - ph_sel[j - 1] < 1e-8:
            j += 1
        groups.append((float(ph_sel[i]), float(np.linalg.norm(a_sel[i:j]))))
        i = j
    mass = float(np.sum(np.abs(a_sel) ** 2))
    max_amp = max((g[1] for g in groups), default=0.0)
    if gamma is not None:
        bound = constant * (gamma ** 0.25 * eps ** 0.75 + math.sqrt(eps))
    else:
        if beta is None:
            beta = float(np.max(rho0 / chain.pi))
        bound = constant * beta * math.sqrt(eps)
    return GapReport(mass, max_amp, bound, max_amp > bound, (lo, 1.0), groups)


def spectrum_csv(walk: WalkOperator) -> str:
    """Rows ``(index, eigenphase, |<Pi|psi_j>|^2)`` sorted by eigenphase."""
    phases, Z = walk.eig()
    fixed = walk.fixed_state()
    weight = np.abs(Z.conj().T @ fixed) ** 2
    phases = np.where(np.abs(phases) < 1e-12, 0.0, phases)
    order = np.argsort(phases, kind="stable")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["index", "eigenphase", "overlap_fixed"])
    for k, j in enumerate(order):
        w.writerow([k, f"{phases[j]:.12f}", f"{weight[j]:.12f}"])
    return buf.getvalue()
