"""Phase-estimation reflectors and pi/3 fixed-point amplification.

A reflector ``R = alpha |psi0><psi0| + (I - |psi0><psi0|)`` about the unique
fixed vector of a walk operator is approximated by ``c`` rounds of ``a``-qubit
phase estimation: ancilla registers that all read zero get the phase
``alpha``, then the estimation is undone.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from ..core import QueryLedger, _charge

__all__ = [
    "OMEGA", "ApproxReflector", "ExactReflector", "approx_reflector",
    "reflector_parameters", "pi3_amplify", "pi3_uses", "pi3_bound",
]

OMEGA = cmath.exp(1j * math.pi / 3)
ANCILLA_CAP = 12
SYSTEM_CAP = 64


def reflector_parameters(delta: float, eps: float) -> tuple[int, int]:
    """``a = ceil(log2(1/Delta))`` and ``c = ceil(log2(1/sqrt(eps)))``."""
    if not 0 < delta <= 1:
        raise ValueError("Delta must lie in (0, 1]")
    if not 0 < eps < 0.5:
        raise ValueError("eps must lie in (0, 1/2)")
    a = max(1, math.ceil(math.log2(1.0 / delta) - 1e-12))
    c = max(1, math.ceil(math.log2(1.0 / math.sqrt(eps)) - 1e-12))
    return a, c


def _on_system(fn, arr):
    """Apply ``fn`` (acting on the last axis) to axis 0 of ``arr``."""
    d = arr.shape[0]
    flat = arr.reshape(d, -1).T
    return fn(flat).T.reshape(arr.shape)


def _walsh_hadamard(arr, axis, qubits):
    arr = np.moveaxis(arr, axis, -1)
    shape = arr.shape
    work = arr.reshape(shape[:-1] + (2,) * qubits)
    for q in range(qubits):
        ax = work.ndim - 1 - q
        x0 = np.take(work, 0, axis=ax)
        x1 = np.take(work, 1, axis=ax)
        work = np.stack([(x0 + x1), (x0 - x1)], axis=ax) / math.sqrt(2.0)
    return np.moveaxis(work.reshape(shape), -1, axis)


@dataclass
class ApproxReflector:
    """Phase-estimation reflector for a walk given as a function on state vectors.

    ``walk`` and ``walk_adjoint`` act on the last axis of their argument.
    """

    walk: Callable
    walk_adjoint: Callable
    dim: int
    a: int
    c: int
    alpha: complex = -1.0
    ledger: Optional[QueryLedger] = field(default=None, repr=False)
    matrix: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        if self.a < 1 or self.c < 1:
            raise ValueError("a and c must be positive")
        self.uses = 0
        self._gates = {}

    def _gate(self, b: int, adjoint: bool):
        """Controlled-``W^{2^b}`` as a function, dense when a matrix is known."""
        key = (b, adjoint)
        if key not in self._gates:
            if self.matrix is None:
                fn = self.walk_adjoint if adjoint else self.walk
                reps = 2 ** b

                def gate(v, fn=fn, reps=reps):
                    for _ in range(reps):
                        v = fn(v)
                    return v
            else:
                m = np.linalg.matrix_power(self.matrix, 2 ** b)
                if adjoint:
                    m = m.conj().T
                gate = lambda v, m=m: v @ m.T
            self._gates[key] = gate
        return self._gates[key]

    @property
    def M(self) -> int:
        return 2 ** self.a

    @property
    def calls_per_use(self) -> int:
        """Controlled-walk count charged per application."""
        return 2 ** (self.a + 1) * self.c

    @property
    def literal_calls(self) -> int:
        """Controlled-``W^{2^b}`` count of the simulated circuit, in units of ``W``."""
        return 2 * self.c * (self.M - 1)

    def _charge(self):
        self.uses += 1
        _charge(self.ledger, "controlled_walk", self.calls_per_use)

    # -- full circuit on system x ancilla --------------------------------

    def _controlled_powers(self, st, axis, adjoint):
        st = np.moveaxis(st, axis, -1)
        idx = np.arange(self.M)
        for b in range(self.a):
            mask = ((idx >> b) & 1) == 1
            st[..., mask] = _on_system(self._gate(b, adjoint), st[..., mask])
        return np.moveaxis(st, -1, axis)

    def apply(self, state: np.ndarray, alpha: Optional[complex] = None) -> np.ndarray:
        """Act on a state of shape ``(dim, M, ..., M)`` with ``c`` ancilla registers."""
        if self.a * self.c > ANCILLA_CAP:
            raise ValueError(f"a*c = {self.a * self.c} exceeds the ancilla cap {ANCILLA_CAP}")
        alpha = self.alpha if alpha is None else alpha
        st = np.array(state, dtype=complex)
        if st.shape != (self.dim,) + (self.M,) * self.c:
            raise ValueError("state shape does not match system x ancilla registers")
        for k in range(self.c):
            ax = 1 + k
            st = _walsh_hadamard(st, ax, self.a)
            st = self._controlled_powers(st, ax, False)
            st = np.fft.fft(st, axis=ax, norm="ortho")
        st[(slice(None),) + (0,) * self.c] *= alpha
        for k in reversed(range(self.c)):
            ax = 1 + k
            st = np.fft.ifft(st, axis=ax, norm="ortho")
            st = self._controlled_powers(st, ax, True)
            st = _walsh_hadamard(st, ax, self.a)
        self._charge()
        return st

    def embed(self, v) -> np.ndarray:
        st = np.zeros((self.dim,) + (self.M,) * self.c, dtype=complex)
        st[(slice(None),) + (0,) * self.c] = v
        return st

    def apply_zero(self, v) -> np.ndarray:
        """Full output for system input ``v`` with every ancilla in ``|0>``."""
        return self.apply(self.embed(v))

    # -- ancilla-zero block -----------------------------------------------

    def _average(self, v, fn):
        acc = v.copy()
        cur = v
        for _ in range(self.M - 1):
            cur = fn(cur)
            acc = acc + cur
        return acc / self.M

    def zero_block(self, v, adjoint: bool = False) -> np.ndarray:
        """``<0|R~|0>`` applied to ``v``: ``v + (alpha - 1) (B^dag B)^c v``.

        ``B = (1/M) sum_{j<M} W^j`` is the all-zero amplitude of one
        estimation round.  Costs the same ``2^{a+1} c`` walk calls.
        """
        alpha = np.conj(self.alpha) if adjoint else self.alpha
        v = np.asarray(v, dtype=complex)
        w = v
        for _ in range(self.c):
            w = self._average(w, self.walk)
            w = self._average(w, self.walk_adjoint)
        self._charge()
        return v + (alpha - 1.0) * w

    def __call__(self, v):
        return self.zero_block(v)

    def adjoint(self, v):
        return self.zero_block(v, adjoint=True)


def approx_reflector(walk, delta: float, eps: float, alpha: complex = -1.0,
                     ledger: Optional[QueryLedger] = None) -> ApproxReflector:
    """Reflector from a dense :class:`WalkOperator` (or any object with ``matrix``)."""
    a, c = reflector_parameters(delta, eps)
    mat = np.asarray(walk.matrix)
    dim = mat.shape[0]
    if dim > SYSTEM_CAP:
        raise ValueError(f"system dimension {dim} exceeds the dense cap {SYSTEM_CAP}")
    adj = mat.conj().T
    return ApproxReflector(lambda v: v @ mat.T, lambda v: v @ adj.T, dim, a, c,
                           alpha, ledger, mat)


@dataclass
class ExactReflector:
    """``alpha |psi><psi| + (I - |psi><psi|)``."""

    state: np.ndarray
    alpha: complex = OMEGA

    def __post_init__(self):
        self.state = np.asarray(self.state, dtype=complex)
        self.state = self.state / np.linalg.norm(self.state)
        self.uses = 0

    def _apply(self, v, alpha):
        self.uses += 1
        v = np.asarray(v, dtype=complex)
        return v + (alpha - 1.0) * self.state * np.vdot(self.state, v)

    def __call__(self, v):
        return self._apply(v, self.alpha)

    def adjoint(self, v):
        return self._apply(v, np.conj(self.alpha))


def pi3_uses(m: int) -> int:
    """Uses of each reflector (or its inverse) in ``V_m``: ``(3^m - 1) / 2``."""
    return (3 ** m - 1) // 2


def pi3_bound(p: float, m: int) -> float:
    """``1 - (1 - p)^{3^m}`` with ``p`` the squared initial overlap."""
    return 1.0 - (1.0 - p) ** (3 ** m)


def pi3_amplify(R_src, R_tgt, m: int, start) -> np.ndarray:
    """``V_m |start>`` for ``V_{j+1} = V_j R_src V_j^dag R_tgt V_j``, ``V_0 = I``.

    ``R_src`` reflects about the starting state and ``R_tgt`` about the
    target; both are callables with an ``adjoint`` method.
    """
    if m < 0:
        raise ValueError("m must be nonnegative")

    def V(j, v, dag):
        if j == 0:
            return v
        if not dag:
            v = V(j - 1, v, False)
            v = R_tgt(v)
            v = V(j - 1, v, True)
            v = R_src(v)
            return V(j - 1, v, False)
        v = V(j - 1, v, True)
        v = R_src.adjoint(v)
        v = V(j - 1, v, False)
        v = R_tgt.adjoint(v)
        return V(j - 1, v, True)

    return V(m, np.asarray(start, dtype=complex), False)
