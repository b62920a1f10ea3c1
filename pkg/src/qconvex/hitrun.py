"""Hit-and-run walk with a unidimensional rejection sampler on each chord.

The chord sampler works with ``log g`` and operates on a batch of chords at
once: every loop of the trisection / bisection / rejection procedure advances
all chords that are still active.  A single chord is just a batch of one.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .core import ConvexBody, LinearMap, QueryLedger, _charge

__all__ = [
    "SamplerError", "ChordDensity", "init_p", "bin_search", "init_e",
    "uni_sampler", "WalkState", "LinearImage", "hit_and_run",
    "default_chord_accuracy", "write_trajectory_csv",
]

HALVING_CAP = 64
# a bracket this narrow relative to the chord is treated as converged; it only
# matters for densities evaluated with fresh noise, which need not be consistent
COLLAPSE_RTOL = 1e-7
REJECTION_FACTOR = 200
# A beta-logconcave density is beta'-logconcave for every beta' >= beta; the
# trisection loop only terminates on strictly monotone g when beta > 0.
BETA_FLOOR = 1e-3


class SamplerError(RuntimeError):
    """Iteration cap hit: input is not beta-logconcave or the cap is too small."""


@dataclass
class ChordDensity:
    """A batch of chords ``[s_j, t_j]`` with log-density ``logg(idx, lam)``.

    ``logg`` receives the chord indices ``idx`` (shape ``(k,)``) and chord
    parameters ``lam`` (shape ``(k, q)``) and returns ``log g`` of the same
    shape.  ``eps`` is the sampler accuracy, which must lie in
    ``(0, exp(-2 beta) / 2)``.
    """

    logg: Callable[[np.ndarray, np.ndarray], np.ndarray]
    s: np.ndarray
    t: np.ndarray
    beta: float = 0.0
    eps: float = 1e-3
    ledger: Optional[QueryLedger] = field(default=None, repr=False)

    def __post_init__(self):
        self.s = np.atleast_1d(np.asarray(self.s, dtype=float))
        self.t = np.atleast_1d(np.asarray(self.t, dtype=float))
        if self.s.shape != self.t.shape:
            raise ValueError("chord endpoint arrays differ in shape")
        if np.any(self.t <= self.s):
            raise ValueError("chords must have s < t")
        if self.beta < 0:
            raise ValueError("beta must be nonnegative")
        if not 0 < self.eps < math.exp(-2 * self.beta) / 2:
            raise ValueError("eps must lie in (0, exp(-2 beta)/2)")
        self.evaluations = 0

    @classmethod
    def from_function(cls, g: Callable, s, t, beta=0.0, eps=1e-3, ledger=None,
                      log=False) -> "ChordDensity":
        """Single chord from a scalar-vectorized density ``g`` (or ``log g``)."""
        if log:
            fn = lambda idx, lam: np.asarray(g(lam), dtype=float)
        else:
            def fn(idx, lam):
                with np.errstate(divide="ignore"):
                    return np.log(np.asarray(g(lam), dtype=float))
        return cls(fn, s, t, beta, eps, ledger)

    @property
    def size(self) -> int:
        return self.s.size

    @property
    def beta_eff(self) -> float:
        return max(self.beta, BETA_FLOOR)

    def __call__(self, idx, lam) -> np.ndarray:
        lam = np.asarray(lam, dtype=float)
        self.evaluations += lam.size
        _charge(self.ledger, "evaluation", lam.size)
        return self.logg(idx, lam)


def _squeeze(d: ChordDensity, arr):
    return float(arr[0]) if d.size == 1 else arr


# probe pairs tested in order: (1st, 3rd), (1st, 2nd), (2nd, 3rd)
_PAIR_LO = np.array([0, 0, 1])
_PAIR_HI = np.array([2, 1, 2])


def _init_p(d: ChordDensity):
    beta = d.beta_eff
    s, t = d.s.copy(), d.t.copy()
    tol = COLLAPSE_RTOL * (d.t - d.s)
    p = np.empty_like(s)
    logp = np.empty_like(s)
    active = np.arange(d.size)
    frac = np.array([0.25, 0.5, 0.75])
    for _ in range(HALVING_CAP):
        if active.size == 0:
            break
        sa = s[active]
        width = t[active] - sa
        probes = sa[:, None] + width[:, None] * frac
        lg = d(active, probes)
        gaps = np.abs(lg[:, _PAIR_LO] - lg[:, _PAIR_HI]) > beta
        first = np.argmax(gaps, axis=1)
        done = ~gaps.any(axis=1) | (width <= tol[active])

        # cut away the low side of the first pair whose gap exceeds beta
        mv = np.flatnonzero(~done)
        if mv.size:
            lo, hi = _PAIR_LO[first[mv]], _PAIR_HI[first[mv]]
            left = lg[mv, lo] <= lg[mv, hi]
            rows = active[mv]
            s[rows[left]] = probes[mv[left], lo[left]]
            t[rows[~left]] = probes[mv[~left], hi[~left]]

        if mv.size < active.size:
            fin = np.flatnonzero(done)
            # argmax keeps the lowest index on ties
            best = np.argmax(lg[fin], axis=1)
            p[active[fin]] = probes[fin, best]
            logp[active[fin]] = lg[fin, best]
            active = active[mv]
    else:
        if active.size:
            raise SamplerError(f"InitP exceeded {HALVING_CAP} iterations")
    return p, logp


def init_p(d: ChordDensity):
    """Trisection search for a near-mode point ``p`` of each chord."""
    p, _ = _init_p(d)
    return _squeeze(d, p)


def _bin_search(d: ChordDensity, idx, x_l, x_r, v_l, v_r):
    x_l, x_r = np.array(x_l, dtype=float), np.array(x_r, dtype=float)
    out = np.empty_like(x_l)
    active = np.arange(idx.size)
    for _ in range(HALVING_CAP):
        if active.size == 0:
            break
        xm = 0.5 * (x_l[active] + x_r[active])
        lv = d(idx[active], xm[:, None])[:, 0]
        high = lv > v_r[active]
        low = ~high & (lv < v_l[active])
        collapsed = np.abs(x_r[active] - x_l[active]) <= COLLAPSE_RTOL * (
            d.t[idx[active]] - d.s[idx[active]])
        hit = ~(high | low) | collapsed
        high &= ~collapsed
        low &= ~collapsed
        x_r[active[high]] = xm[high]
        x_l[active[low]] = xm[low]
        out[active[hit]] = xm[hit]
        active = active[~hit]
    else:
        if active.size:
            raise SamplerError(f"BinSearch exceeded {HALVING_CAP} iterations")
    return out


def bin_search(d: ChordDensity, x_l, x_r, v_l, v_r, log_window=False):
    """Bisection for a point whose density lies in ``[v_l, v_r]``.

    ``x_l`` is the low-density end and ``x_r`` the high-density end of the
    bracket (positions along the chord, in either order).  Pass
    ``log_window=True`` when ``v_l``/``v_r`` are already logarithms.
    """
    x_l = np.broadcast_to(np.asarray(x_l, dtype=float), (d.size,))
    x_r = np.broadcast_to(np.asarray(x_r, dtype=float), (d.size,))
    v_l = np.broadcast_to(np.asarray(v_l, dtype=float), (d.size,))
    v_r = np.broadcast_to(np.asarray(v_r, dtype=float), (d.size,))
    if not log_window:
        with np.errstate(divide="ignore"):
            v_l, v_r = np.log(v_l), np.log(v_r)
    out = _bin_search(d, np.arange(d.size), x_l, x_r, v_l, v_r)
    return _squeeze(d, out)


def _init_e(d: ChordDensity, p, logp):
    beta = d.beta_eff
    lower = logp + math.log(d.eps / 2) - beta
    upper = logp + math.log(d.eps)
    idx = np.arange(d.size)
    ends = d(idx, np.stack([d.s, d.t], axis=1))
    e0, e1 = d.s.copy(), d.t.copy()
    need0 = idx[ends[:, 0] < lower]
    need1 = idx[ends[:, 1] < lower]
    if need0.size or need1.size:
        # both ends bisect in one batched loop
        k = np.concatenate([need0, need1])
        far = np.concatenate([d.s[need0], d.t[need1]])
        found = _bin_search(d, k, far, p[k], lower[k], upper[k])
        e0[need0] = found[:need0.size]
        e1[need1] = found[need0.size:]
    return e0, e1


def init_e(d: ChordDensity, p):
    """Truncation window ``[e0, e1]`` around ``p`` at level ``~eps * g(p)``."""
    p = np.atleast_1d(np.asarray(p, dtype=float))
    logp = d(np.arange(d.size), p[:, None])[:, 0]
    e0, e1 = _init_e(d, p, logp)
    return _squeeze(d, e0), _squeeze(d, e1)


REJECTION_BATCH = (4, 1024)


def _uni_sample(d: ChordDensity, rng, return_stats=False):
    beta = d.beta_eff
    p, logp = _init_p(d)
    e0, e1 = _init_e(d, p, logp)
    cap = int(math.ceil(REJECTION_FACTOR * math.exp(3 * beta)))
    # proposals per round double up to a ceiling, so at most about half
    # of the evaluated proposals are wasted once one is accepted
    batch = REJECTION_BATCH[0]
    out = np.empty(d.size)
    rounds = np.zeros(d.size, dtype=int)
    active = np.arange(d.size)
    while active.size:
        lam = e0[active, None] + (e1 - e0)[active, None] * rng.random((active.size, batch))
        logr = np.log(rng.random((active.size, batch)))
        lg = d(active, lam)
        ok = logr <= lg - 3 * beta - logp[active, None]
        hit = ok.any(axis=1)
        first = np.argmax(ok, axis=1)
        rounds[active] += np.where(hit, first + 1, batch)
        out[active[hit]] = lam[hit, first[hit]]
        active = active[~hit]
        if active.size and np.any(rounds[active] >= cap):
            raise SamplerError(f"rejection sampler exceeded {cap} rounds")
        batch = min(2 * batch, REJECTION_BATCH[1])
    if return_stats:
        return out, {"p": p, "e0": e0, "e1": e1, "rounds": rounds}
    return out


def uni_sampler(d: ChordDensity, rng, return_stats=False):
    """Draw one point per chord from (approximately) ``g`` restricted to it."""
    res = _uni_sample(d, rng, return_stats)
    if return_stats:
        out, stats = res
        return _squeeze(d, out), stats
    return _squeeze(d, res)


# --------------------------------------------------------------------------
# the walk

@dataclass
class WalkState:
    """Current point(s) of one or more strands, the step index and map in force."""

    points: np.ndarray
    step: int = 0
    linear_map: Optional[LinearMap] = None

    def __post_init__(self):
        self.points = np.array(self.points, dtype=float)
        if self.linear_map is None:
            self.linear_map = LinearMap.identity(self.points.shape[-1])


class LinearImage(ConvexBody):
    """The body ``M^{-1} K`` for an invertible map ``M``."""

    def __init__(self, body: ConvexBody, linear_map: LinearMap, ledger=None):
        self.body = body
        self.map = linear_map
        self.n = body.n
        self.ledger = ledger
        sv = np.linalg.svd(linear_map.matrix, compute_uv=False)
        self.r = body.r / sv.max()
        self.R = body.R / sv.min()

    @property
    def bounding_box(self):
        lo, hi = self.body.bounding_box
        corners = np.array(np.meshgrid(*zip(lo, hi))).reshape(self.n, -1).T
        img = self.map.apply_inverse(corners)
        return img.min(axis=0), img.max(axis=0)

    def _inside(self, pts):
        return self.body._inside(self.map.apply(pts))

    def _chord(self, pts, dirs):
        img = self.map.apply(dirs)
        scale = np.linalg.norm(img, axis=1)
        s, t = self.body._chord(self.map.apply(pts), img / scale[:, None])
        return s / scale, t / scale


def default_chord_accuracy(beta: float, steps: int, gamma: float = 0.1) -> float:
    """``gamma exp(-2 beta) / (12 m)``."""
    return gamma * math.exp(-2 * beta) / (12 * max(steps, 1))


def hit_and_run(start: WalkState, log_target: Callable, body: ConvexBody,
                steps: int, rng, *, beta: float = 0.0,
                linear_map: Optional[LinearMap] = None,
                eps: Optional[float] = None, record: bool = False,
                indexed_target: bool = False):
    """Run ``steps`` hit-and-run steps on every strand of ``start``.

    Parameters
    ----------
    start : WalkState
        Points of shape ``(N, n)`` (or ``(n,)`` for a single strand), all in K.
    log_target : callable
        Vectorized ``log g`` over points of shape ``(..., n)``.
    body : ConvexBody
        Supplies chords.
    beta : float
        Logconcavity defect of ``g`` used by the chord sampler.
    linear_map : LinearMap, optional
        Directions are ``Sigma z / |z|``; defaults to the map held by ``start``.
    eps : float, optional
        Chord sampler accuracy; defaults to ``gamma e^{-2 beta} / (12 m)``.
    record : bool
        Also return the trajectory array of shape ``(steps + 1, N, n)``.
    indexed_target : bool
        Call ``log_target(pts, idx)`` with the strand index of each row of
        ``pts``, for targets that differ between strands.
    """
    if steps < 0:
        raise ValueError("steps must be nonnegative")
    lmap = linear_map or start.linear_map
    single = start.points.ndim == 1
    x = np.atleast_2d(start.points).copy()
    if eps is None:
        eps = default_chord_accuracy(max(beta, BETA_FLOOR), steps)
    traj = [x.copy()] if record else None
    n_strands, n = x.shape
    for _ in range(steps):
        z = rng.standard_normal((n_strands, n))
        z /= np.linalg.norm(z, axis=1, keepdims=True)
        u = lmap.apply(z)
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        s, t = body.chord(x, u)
        base, dirs = x, u

        def logg(idx, lam, base=base[:, None, :], dirs=dirs[:, None, :]):
            pts = base[idx] + lam[..., None] * dirs[idx]
            return log_target(pts, idx) if indexed_target else log_target(pts)

        d = ChordDensity(logg, s, t, beta, eps)
        lam = _uni_sample(d, rng)
        x = x + lam[:, None] * u
        if record:
            traj.append(x.copy())
    end = WalkState(x[0] if single else x, start.step + steps, lmap)
    if record:
        return end, np.stack(traj)
    return end


def write_trajectory_csv(path, trajectory: np.ndarray) -> None:
    """Rows ``(strand, step, x1..xn)`` from a ``(steps+1, N, n)`` array."""
    steps, strands, n = trajectory.shape
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["strand", "step"] + [f"x{i + 1}" for i in range(n)])
        for j in range(strands):
            for k in range(steps):
                w.writerow([j, k] + [repr(float(v)) for v in trajectory[k, j]])
