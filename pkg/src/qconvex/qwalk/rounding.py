"""Non-destructive amplitude estimation and the rounding step built on it.

An observable ``h: Omega -> [0, 1]`` is loaded into an extra qubit,
``|Psi> = sum_x psi(x) |x> (sqrt(1 - h(x)) |0> + sqrt(h(x)) |1>)``, so that
``a = <Psi|P|Psi>`` with ``P`` the projector on the qubit reading one.  Phase
estimation on ``Q = R_Psi (I - 2P)`` reads out ``a = sin^2(pi j / M)``.  The
measured state lies in the two-dimensional invariant plane of ``Q``; a
projective test onto ``|Psi>`` (one controlled ``R_Psi``) either restores
it exactly or leaves the orthogonal vector in the plane, in which case
another estimation round is run and the test repeated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from ..core import QueryLedger, _charge, make_rng

__all__ = [
    "PRODUCT_CAP", "EstimateReport", "median_repetitions", "nondestructive_estimate",
    "nondestructive_round", "moment_observables", "moments_from_estimates",
]

PRODUCT_CAP = 2 ** 16
# a single phase-estimation readout is within the error bound with probability >= 8/pi^2
_SINGLE_SUCCESS = 8.0 / math.pi ** 2


def median_repetitions(eta: float) -> int:
    """Odd repetition count whose median misses with probability at most ``eta`` (Hoeffding)."""
    if not 0 < eta < 1:
        raise ValueError("eta must lie in (0, 1)")
    gap = _SINGLE_SUCCESS - 0.5
    r = max(1, math.ceil(math.log(1.0 / eta) / (2 * gap * gap)))
    return r if r % 2 else r + 1


@dataclass
class EstimateReport:
    estimate: float
    readouts: list
    rounds: int
    reflector_uses: int
    restored: bool
    fidelity: float

    def to_dict(self) -> dict:
        return {"estimate": self.estimate, "rounds": self.rounds,
                "reflector_uses": self.reflector_uses, "restored": self.restored,
                "fidelity": self.fidelity}


def _load(state, weights):
    h = np.clip(np.asarray(weights, dtype=float), 0.0, 1.0)
    return np.stack([state * np.sqrt(1.0 - h), state * np.sqrt(h)], axis=-1).ravel()


def nondestructive_estimate(state, weights, M: int, eta: float, rng, *,
                            ledger: Optional[QueryLedger] = None,
                            reflection_cost: int = 1) -> tuple:
    """Estimate ``a = sum |psi(x)|^2 h(x)`` and hand back the (restored) state.

    ``M`` is the phase-estimation grid; the readout is the median of
    :func:`median_repetitions` rounds, then up to ``ceil(log2(1/eta))``
    further rounds are spent until the restoration test succeeds.  Every
    use of ``R_Psi`` or ``2P - I`` is charged ``reflection_cost`` to the
    ledger's ``reflector`` counter.  Returns ``(estimate, state, report)``.
    """
    if M < 1 or M & (M - 1):
        raise ValueError("M must be a power of two")
    rng = make_rng(rng)
    psi = np.asarray(state, dtype=complex).ravel()
    psi = psi / np.linalg.norm(psi)
    Psi = _load(psi, np.broadcast_to(weights, psi.shape))
    sign = np.tile([1.0, -1.0], psi.size)
    uses = 0

    def Q(v):
        w = sign * v
        return 2.0 * Psi * np.vdot(Psi, w) - w

    reps = median_repetitions(eta)
    extra = max(1, math.ceil(math.log2(1.0 / eta)))
    v = Psi.copy()
    readouts = []
    restored = False
    rounds = 0
    while rounds < reps + extra:
        rounds += 1
        powers = np.empty((M, v.size), dtype=complex)
        powers[0] = v
        for k in range(1, M):
            powers[k] = Q(powers[k - 1])
        uses += 2 * (M - 1)
        out = np.fft.fft(powers, axis=0) / M
        prob = np.sum(np.abs(out) ** 2, axis=1)
        j = int(rng.choice(M, p=prob / prob.sum()))
        v = out[j] / np.linalg.norm(out[j])
        if len(readouts) < reps:
            readouts.append(math.sin(math.pi * j / M) ** 2)
        # projective test onto |Psi>
        uses += 1
        ov = np.vdot(Psi, v)
        p_ok = min(1.0, abs(ov) ** 2)
        if rng.random() < p_ok:
            v = Psi * (ov / abs(ov)) if abs(ov) > 0 else Psi.copy()
            restored = True
        else:
            v = v - Psi * ov
            v = v / np.linalg.norm(v)
            restored = False
        if restored and len(readouts) >= reps:
            break
    _charge(ledger, "reflector", uses * reflection_cost)
    fidelity = float(abs(np.vdot(Psi, v)) ** 2)
    # undo the loading rotation and read off the system part
    pair = v.reshape(-1, 2)
    h = np.clip(np.broadcast_to(weights, psi.shape), 0.0, 1.0)
    back = pair[:, 0] * np.sqrt(1.0 - h) + pair[:, 1] * np.sqrt(h)
    est = float(np.median(readouts))
    rep = EstimateReport(est, readouts, rounds, uses, restored, fidelity)
    return est, back, rep


def moment_observables(points) -> tuple[np.ndarray, list]:
    """Coordinates ``x_i`` and products ``x_i x_j`` (``i <= j``) as rows, with labels."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.shape[0] == 1 and pts.shape[1] > 1:
        pts = pts.T
    n = pts.shape[1]
    rows, labels = [], []
    for i in range(n):
        rows.append(pts[:, i])
        labels.append((i,))
    for i in range(n):
        for j in range(i, n):
            rows.append(pts[:, i] * pts[:, j])
            labels.append((i, j))
    return np.array(rows), labels


def moments_from_estimates(values, labels, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Mean vector and covariance matrix from :func:`moment_observables` estimates."""
    mean = np.zeros(n)
    second = np.zeros((n, n))
    for v, lab in zip(values, labels):
        if len(lab) == 1:
            mean[lab[0]] = v
        else:
            second[lab[0], lab[1]] = second[lab[1], lab[0]] = v
    return mean, second - np.outer(mean, mean)


def _scaled(obs):
    lo, hi = float(np.min(obs)), float(np.max(obs))
    span = hi - lo if hi > lo else 1.0
    return (obs - lo) / span, lo, span


def nondestructive_round(states: Sequence, observables, M: int, eta: float, rng, *,
                         ledger: Optional[QueryLedger] = None,
                         reflection_cost: int = 1) -> tuple:
    """Estimate ``E[(1/N) sum_j o(x^j)]`` for each observable row on the product of ``N`` states.

    ``states`` are vectors over ``Omega`` or over the doubled space
    ``Omega x Omega`` (the observable then acts on the first register).
    Each row of ``observables`` is affinely rescaled to ``[0, 1]`` for the
    estimation and mapped back.  Returns ``(estimates, restored, reports)``;
    when a restoration test never succeeds, the corresponding copy is the
    leading eigenvector of its reduced density matrix.
    """
    rng = make_rng(rng)
    obs = np.atleast_2d(np.asarray(observables, dtype=float))
    omega = obs.shape[1]
    vecs = [np.asarray(s, dtype=complex).ravel() for s in states]
    N = len(vecs)
    dims = [v.size for v in vecs]
    if any(d not in (omega, omega * omega) for d in dims):
        raise ValueError("states must live on Omega or Omega x Omega")
    total = int(np.prod(dims))
    if 2 * total > PRODUCT_CAP:
        raise ValueError(f"product dimension {2 * total} exceeds the cap {PRODUCT_CAP}")
    joint = vecs[0]
    for v in vecs[1:]:
        joint = np.kron(joint, v)
    joint = joint / np.linalg.norm(joint)
    estimates, reports = [], []
    for row in obs:
        h, lo, span = _scaled(row)
        per_copy = [h if d == omega else np.repeat(h, omega) for d in dims]
        weight = np.zeros(dims)
        for k, w in enumerate(per_copy):
            shape = [1] * N
            shape[k] = dims[k]
            weight = weight + w.reshape(shape)
        weight = (weight / N).ravel()
        est, joint, rep = nondestructive_estimate(joint, weight, M, eta, rng,
                                                  ledger=ledger,
                                                  reflection_cost=reflection_cost)
        estimates.append(lo + span * est)
        reports.append(rep)
    if all(r.restored for r in reports):
        restored = [v / np.linalg.norm(v) for v in vecs]
    else:
        restored = []
        tensor = joint.reshape(dims)
        for k in range(N):
            mat = np.moveaxis(tensor, k, 0).reshape(dims[k], -1)
            u, _, _ = np.linalg.svd(mat, full_matrices=False)
            restored.append(u[:, 0])
    return np.array(estimates), restored, reports
