"""Shared geometry, objective oracles, query accounting and seeded randomness.

Every randomized routine in the package takes a ``numpy.random.Generator``
built on the Philox counter-based bit generator, so that independent strands
can be split off a single seed and replayed bit-for-bit.
"""

from __future__ import annotations

import configparser
import io
import json
import math
import threading
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.optimize import linprog

__all__ = [
    "make_rng", "spawn_rngs", "QueryLedger", "BudgetExhausted", "ConvexBody", "Ball", "Box",
    "Polytope", "LinearMap", "sample_direction", "Quadratic", "NormObjective",
    "MaxAffine", "simplex_max_affine", "ApproxConvexOracle",
    "StochasticOracle", "load_config", "dump_config", "body_from_config",
    "objective_from_config", "oracle_from_config",
]

GEOM_TOL = 1e-9
MEMBER_TOL = 1e-12

QUERY_KINDS = ("evaluation", "membership", "controlled_walk", "reflector")


# --------------------------------------------------------------------------
# randomness

def make_rng(seed) -> np.random.Generator:
    """Philox-backed generator; ``seed`` may be an int or a SeedSequence."""
    if isinstance(seed, np.random.Generator):
        return seed
    if not isinstance(seed, np.random.SeedSequence):
        seed = np.random.SeedSequence(seed)
    return np.random.Generator(np.random.Philox(seed))


def spawn_rngs(seed, count: int) -> list[np.random.Generator]:
    """Independent child streams, one per strand or Monte Carlo repetition."""
    if isinstance(seed, np.random.Generator):
        children = seed.bit_generator.seed_seq.spawn(count)
    else:
        children = np.random.SeedSequence(seed).spawn(count)
    return [make_rng(c) for c in children]


# --------------------------------------------------------------------------
# query accounting

class QueryLedger:
    """Thread-safe monotone counters keyed by oracle kind."""

    def __init__(self):
        self._lock = threading.Lock()
        self._counts: dict[str, int] = defaultdict(int)

    def charge(self, kind: str, count: int = 1) -> None:
        count = int(count)
        if count < 0:
            raise ValueError("ledger counters never decrease")
        with self._lock:
            self._counts[kind] += count

    def __getitem__(self, kind: str) -> int:
        with self._lock:
            return self._counts.get(kind, 0)

    @property
    def total(self) -> int:
        with self._lock:
            return sum(self._counts.values())

    def snapshot(self) -> dict[str, int]:
        with self._lock:
            snap = {k: self._counts.get(k, 0) for k in QUERY_KINDS}
            snap.update({k: v for k, v in self._counts.items() if k not in snap})
            return snap

    def __repr__(self):
        return f"QueryLedger({self.snapshot()})"


class BudgetExhausted(RuntimeError):
    """Raised by budgeted oracles once their query allowance is spent."""


def _charge(ledger: Optional[QueryLedger], kind: str, count: int) -> None:
    if ledger is not None:
        ledger.charge(kind, count)


# --------------------------------------------------------------------------
# convex bodies

def _as_batch(x, n: int) -> tuple[np.ndarray, bool]:
    arr = np.asarray(x, dtype=float)
    single = arr.ndim == 1
    arr = np.atleast_2d(arr)
    if arr.shape[-1] != n:
        raise ValueError(f"dimension mismatch: expected {n}, got {arr.shape[-1]}")
    return arr, single


class ConvexBody:
    """Closed convex body K with B(0, r) inside K inside B(0, R).

    Subclasses implement ``_inside`` and ``_chord`` on batches of points.
    """

    n: int
    r: float
    R: float
    ledger: Optional[QueryLedger] = None

    def contains(self, x) -> bool | np.ndarray:
        """Closed membership test; boundary points count as contained."""
        pts, single = _as_batch(x, self.n)
        _charge(self.ledger, "membership", len(pts))
        inside = self._inside(pts)
        return bool(inside[0]) if single else inside

    def chord(self, x, u) -> tuple:
        """Signed arclength interval ``(s, t)`` of the line ``x + lambda*u`` inside K.

        ``u`` must be a unit vector (per row, for batches).
        """
        pts, single = _as_batch(x, self.n)
        dirs, _ = _as_batch(u, self.n)
        norms = np.linalg.norm(dirs, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-12):
            raise ValueError("chord direction must have unit norm")
        _charge(self.ledger, "membership", len(pts))
        if not np.all(self._inside(pts)):
            raise ValueError("chord base point is not inside the body")
        s, t = self._chord(pts, dirs)
        if np.any(s >= 0) or np.any(t <= 0):
            raise ValueError("chord base point is not interior")
        if np.any(t - s <= 1e-15):
            raise ValueError("degenerate zero-length chord")
        if single:
            return float(s[0]), float(t[0])
        return s, t

    @property
    def bounding_box(self) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def sample_uniform(self, count: int, rng, max_proposals: int = 10**6) -> np.ndarray:
        """Uniform points by rejection from the bounding box."""
        lo, hi = self.bounding_box
        out = []
        have = 0
        used = 0
        while have < count:
            batch = min(max(2 * (count - have), 64), max_proposals - used)
            if batch <= 0:
                raise RuntimeError(
                    f"uniform sampling exceeded {max_proposals} proposals")
            cand = lo + (hi - lo) * rng.random((batch, self.n))
            used += batch
            keep = cand[self._inside(cand)]
            out.append(keep)
            have += len(keep)
        _charge(self.ledger, "membership", used)
        return np.concatenate(out)[:count]


@dataclass
class Ball(ConvexBody):
    center: np.ndarray
    radius: float
    ledger: Optional[QueryLedger] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=float)
        self.n = self.center.size
        if self.radius <= 0:
            raise ValueError("ball radius must be positive")
        off = float(np.linalg.norm(self.center))
        self.r = self.radius - off
        self.R = self.radius + off
        if self.r <= 0:
            raise ValueError("ball must contain the origin in its interior")

    @classmethod
    def centered(cls, n: int, radius: float = 1.0, ledger=None):
        return cls(np.zeros(n), radius, ledger)

    @property
    def bounding_box(self):
        return self.center - self.radius, self.center + self.radius

    def _inside(self, pts):
        d = np.linalg.norm(pts - self.center, axis=1)
        return d <= self.radius * (1 + MEMBER_TOL)

    def _chord(self, pts, dirs):
        w = pts - self.center
        b = np.einsum("ij,ij->i", dirs, w)
        q = np.einsum("ij,ij->i", w, w) - self.radius**2
        disc = np.sqrt(np.maximum(b * b - q, 0.0))
        # stable roots of lambda^2 + 2 b lambda + q = 0
        big = -b - np.where(b >= 0, disc, -disc)
        with np.errstate(divide="ignore", invalid="ignore"):
            other = np.where(big != 0, q / big, 0.0)
        return np.minimum(big, other), np.maximum(big, other)


@dataclass
class Box(ConvexBody):
    lower: np.ndarray
    upper: np.ndarray
    ledger: Optional[QueryLedger] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.lower = np.asarray(self.lower, dtype=float)
        self.upper = np.asarray(self.upper, dtype=float)
        self.n = self.lower.size
        if np.any(self.upper <= self.lower):
            raise ValueError("box must have positive side lengths")
        self.r = float(np.min(np.minimum(-self.lower, self.upper)))
        self.R = float(np.linalg.norm(np.maximum(-self.lower, self.upper)))

    @classmethod
    def cube(cls, n: int, half_width: float = 1.0, ledger=None):
        return cls(-half_width * np.ones(n), half_width * np.ones(n), ledger)

    @property
    def bounding_box(self):
        return self.lower.copy(), self.upper.copy()

    def _inside(self, pts):
        tol = MEMBER_TOL * np.maximum(1.0, np.abs(self.upper - self.lower))
        return np.all((pts >= self.lower - tol) & (pts <= self.upper + tol), axis=1)

    def _chord(self, pts, dirs):
        with np.errstate(divide="ignore", invalid="ignore"):
            a = (self.lower - pts) / dirs
            b = (self.upper - pts) / dirs
        lo = np.where(dirs != 0, np.minimum(a, b), -np.inf)
        hi = np.where(dirs != 0, np.maximum(a, b), np.inf)
        return lo.max(axis=1), hi.min(axis=1)


@dataclass
class Polytope(ConvexBody):
    """Bounded intersection of halfspaces ``A x <= b`` with ``b > 0``."""

    A: np.ndarray
    b: np.ndarray
    ledger: Optional[QueryLedger] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.A = np.atleast_2d(np.asarray(self.A, dtype=float))
        self.b = np.asarray(self.b, dtype=float)
        self.n = self.A.shape[1]
        row_norms = np.linalg.norm(self.A, axis=1)
        if np.any(self.b <= 0):
            raise ValueError("origin must be interior (all b > 0)")
        self.r = float(np.min(self.b / row_norms))
        lo = np.empty(self.n)
        hi = np.empty(self.n)
        for i in range(self.n):
            c = np.zeros(self.n)
            c[i] = 1.0
            res_lo = linprog(c, A_ub=self.A, b_ub=self.b, bounds=(None, None))
            res_hi = linprog(-c, A_ub=self.A, b_ub=self.b, bounds=(None, None))
            if res_lo.status != 0 or res_hi.status != 0:
                raise ValueError("halfspace intersection is unbounded or empty")
            lo[i], hi[i] = res_lo.fun, -res_hi.fun
        self._box = (lo, hi)
        self.R = float(np.linalg.norm(np.maximum(-lo, hi)))

    @property
    def bounding_box(self):
        return self._box[0].copy(), self._box[1].copy()

    def _inside(self, pts):
        slack = self.b - pts @ self.A.T
        return np.all(slack >= -MEMBER_TOL * np.maximum(1.0, np.abs(self.b)), axis=1)

    def _chord(self, pts, dirs):
        rate = dirs @ self.A.T
        room = self.b - pts @ self.A.T
        with np.errstate(divide="ignore", invalid="ignore"):
            step = room / rate
        t = np.where(rate > 0, step, np.inf).min(axis=1)
        s = np.where(rate < 0, step, -np.inf).max(axis=1)
        return s, t


# --------------------------------------------------------------------------
# linear maps

class LinearMap:
    """Invertible n x n map with cached inverse."""

    def __init__(self, matrix):
        self.matrix = np.array(matrix, dtype=float)
        if self.matrix.ndim != 2 or self.matrix.shape[0] != self.matrix.shape[1]:
            raise ValueError("linear map must be square")
        cond = np.linalg.cond(self.matrix)
        if not np.isfinite(cond) or cond > 1e14:
            raise np.linalg.LinAlgError("singular linear map")
        self.inverse = np.linalg.inv(self.matrix)

    @classmethod
    def identity(cls, n: int) -> "LinearMap":
        return cls(np.eye(n))

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    def apply(self, x):
        return np.asarray(x) @ self.matrix.T

    def apply_inverse(self, x):
        return np.asarray(x) @ self.inverse.T

    def compose(self, inner: "LinearMap") -> "LinearMap":
        """``self o inner``."""
        return LinearMap(self.matrix @ inner.matrix)

    def __repr__(self):
        return f"LinearMap({self.matrix.tolist()})"


def sample_direction(linear_map: LinearMap, rng, size: Optional[int] = None) -> np.ndarray:
    """``Sigma z / |z|`` for standard normal ``z``: a point on the image ellipse."""
    n = linear_map.n
    z = rng.standard_normal((1 if size is None else size, n))
    z /= np.linalg.norm(z, axis=1, keepdims=True)
    out = linear_map.apply(z)
    return out[0] if size is None else out


# --------------------------------------------------------------------------
# objectives

@dataclass
class Quadratic:
    """``scale * |x - center|^2 + offset``."""

    center: np.ndarray
    scale: float = 1.0
    offset: float = 0.0

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=float)

    def __call__(self, x):
        d = np.asarray(x, dtype=float) - self.center
        return self.scale * (d * d).sum(axis=-1) + self.offset

    @property
    def minimizer(self):
        return self.center.copy()

    @property
    def minimum(self):
        return float(self.offset)

    def lipschitz_inf(self, radius: float) -> float:
        # sup |grad f|_1 over B(0, radius)
        reach = radius + np.linalg.norm(self.center)
        return 2.0 * self.scale * reach * math.sqrt(self.center.size)

    def strong_convexity(self) -> float:
        return 2.0 * self.scale


@dataclass
class NormObjective:
    """``scale * |x - center|_ord + offset``."""

    center: np.ndarray
    scale: float = 1.0
    offset: float = 0.0
    ord: float = 2

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=float)

    def __call__(self, x):
        d = np.asarray(x, dtype=float) - self.center
        return self.scale * np.linalg.norm(d, ord=self.ord, axis=-1) + self.offset

    @property
    def minimizer(self):
        return self.center.copy()

    @property
    def minimum(self):
        return float(self.offset)

    def lipschitz_inf(self, radius: float) -> float:
        n = self.center.size
        # dual norm of l_inf is l_1; |grad|_1 <= n^(1 - 1/q) |grad|_q
        q = np.inf if self.ord == 1 else (1.0 if self.ord == np.inf else self.ord / (self.ord - 1))
        return self.scale * (n if q == np.inf else n ** (1 - 1 / q))


@dataclass
class MaxAffine:
    """``max_k <slopes_k, x> + offsets_k``; minimizer must be supplied."""

    slopes: np.ndarray
    offsets: np.ndarray
    argmin: np.ndarray
    min_value: float

    def __post_init__(self):
        self.slopes = np.atleast_2d(np.asarray(self.slopes, dtype=float))
        self.offsets = np.asarray(self.offsets, dtype=float)
        self.argmin = np.asarray(self.argmin, dtype=float)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return np.max(x @ self.slopes.T + self.offsets, axis=-1)

    @property
    def minimizer(self):
        return self.argmin.copy()

    @property
    def minimum(self):
        return float(self.min_value)

    def lipschitz_inf(self, radius: float) -> float:
        return float(np.max(np.sum(np.abs(self.slopes), axis=1)))


def simplex_max_affine(n: int, center=None, scale: float = 1.0) -> MaxAffine:
    """Max of n+1 affine pieces whose slopes are regular-simplex vertices.

    The slopes sum to zero, so the minimum (0) is attained only at ``center``.
    """
    center = np.zeros(n) if center is None else np.asarray(center, dtype=float)
    verts = np.eye(n + 1) - 1.0 / (n + 1)
    # orthonormal basis of the sum-zero hyperplane
    basis = np.linalg.svd(verts)[2][:n]
    slopes = verts @ basis.T
    slopes *= scale / np.linalg.norm(slopes, axis=1, keepdims=True)
    offsets = -slopes @ center
    return MaxAffine(slopes, offsets, center, 0.0)


# --------------------------------------------------------------------------
# perturbations and oracles

_SM_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_SM_M1 = np.uint64(0xBF58476D1CE4E5B9)
_SM_M2 = np.uint64(0x94D049BB133111EB)


def _splitmix(z: np.ndarray) -> np.ndarray:
    z = z + _SM_GAMMA
    z = (z ^ (z >> np.uint64(30))) * _SM_M1
    z = (z ^ (z >> np.uint64(27))) * _SM_M2
    return z ^ (z >> np.uint64(31))


def _hash_unit(x: np.ndarray, seed: int) -> np.ndarray:
    """Deterministic per-point value in [0, 1)."""
    bits = np.ascontiguousarray(x, dtype=np.float64).view(np.uint64)
    with np.errstate(over="ignore"):
        h = np.full(bits.shape[:-1], np.uint64(seed & 0xFFFFFFFFFFFFFFFF), dtype=np.uint64)
        for k in range(bits.shape[-1]):
            h = _splitmix(h ^ bits[..., k])
    return (h >> np.uint64(11)).astype(np.float64) * 2.0**-53


PERTURBATIONS = ("none", "sinusoidal", "seeded-hash")


@dataclass
class ApproxConvexOracle:
    """Deterministic evaluation of ``F = f + p`` with ``|p| <= amplitude``."""

    base: Callable
    n: int
    perturbation: str = "none"
    amplitude: float = 0.0
    seed: int = 0
    frequency: float = 8.0
    lipschitz: float = float("nan")
    ledger: Optional[QueryLedger] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.perturbation not in PERTURBATIONS:
            raise ValueError(f"unknown perturbation {self.perturbation!r}")
        if self.amplitude < 0:
            raise ValueError("amplitude must be nonnegative")
        rng = make_rng(self.seed)
        waves = 4
        self._omega = rng.normal(0.0, self.frequency, (waves, self.n))
        self._phase = rng.uniform(0, 2 * np.pi, waves)
        w = rng.random(waves) + 0.5
        self._weights = w / w.sum()

    def perturb(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.perturbation == "none" or self.amplitude == 0:
            return np.zeros(x.shape[:-1])
        if self.perturbation == "sinusoidal":
            waves = np.sin(x @ self._omega.T + self._phase)
            return self.amplitude * (waves @ self._weights)
        return self.amplitude * (2.0 * _hash_unit(x, self.seed) - 1.0)

    def __call__(self, x):
        return self.evaluate(x)

    def evaluate(self, x):
        """``F(x)`` for a point or a batch of points; charges one query per point."""
        x = np.asarray(x, dtype=float)
        pts = x.reshape(-1, self.n)
        _charge(self.ledger, "evaluation", len(pts))
        vals = self.base(pts) + self.perturb(pts)
        return float(vals[0]) if x.ndim == 1 else vals.reshape(x.shape[:-1])

    @property
    def minimizer(self):
        return self.base.minimizer

    @property
    def minimum(self):
        return self.base.minimum


def eval_approx(oracle: ApproxConvexOracle, x):
    return oracle.evaluate(x)


NOISE_FAMILIES = ("gaussian", "bounded", "two-point")


@dataclass
class StochasticOracle:
    """``f(x) + e_x`` with fresh sub-Gaussian noise of parameter ``sigma``."""

    base: Callable
    n: int
    sigma: float = 0.0
    noise: str = "gaussian"
    ledger: Optional[QueryLedger] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.noise not in NOISE_FAMILIES:
            raise ValueError(f"unknown noise family {self.noise!r}")

    def draw_noise(self, shape, rng) -> np.ndarray:
        if self.sigma == 0:
            return np.zeros(shape)
        if self.noise == "gaussian":
            return self.sigma * rng.standard_normal(shape)
        if self.noise == "bounded":
            return self.sigma * rng.uniform(-1.0, 1.0, shape)
        return self.sigma * rng.choice([-1.0, 1.0], size=shape)

    def mean(self, x):
        return self.base(np.asarray(x, dtype=float))

    def evaluate(self, x, rng):
        x = np.asarray(x, dtype=float)
        pts = x.reshape(-1, self.n)
        _charge(self.ledger, "evaluation", len(pts))
        vals = self.base(pts) + self.draw_noise(len(pts), rng)
        return float(vals[0]) if x.ndim == 1 else vals.reshape(x.shape[:-1])

    def sample(self, x, size: int, rng) -> np.ndarray:
        """``size`` fresh noisy values at a single point."""
        _charge(self.ledger, "evaluation", size)
        return float(self.base(np.asarray(x, dtype=float))) + self.draw_noise(size, rng)


def eval_stochastic(oracle: StochasticOracle, x, rng):
    return oracle.evaluate(x, rng)


# --------------------------------------------------------------------------
# key-value configuration

_SECTION = "config"


def _parse_value(raw: str):
    raw = raw.strip()
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def load_config(source) -> dict:
    """Parse ``key = value`` lines; values are JSON literals or bare strings.

    ``source`` is a path-like or an open text stream.
    """
    if hasattr(source, "read"):
        text = source.read()
    else:
        with open(source, encoding="utf-8") as fh:
            text = fh.read()
    return parse_config(text)


def parse_config(text: str) -> dict:
    parser = configparser.ConfigParser(interpolation=None, delimiters=("=",),
                                       comment_prefixes=("#",))
    parser.optionxform = str
    parser.read_string(f"[{_SECTION}]\n" + text)
    return {k: _parse_value(v) for k, v in parser[_SECTION].items()}


def dump_config(cfg: dict) -> str:
    buf = io.StringIO()
    for key in sorted(cfg):
        val = cfg[key]
        if isinstance(val, str):
            buf.write(f"{key} = {val}\n")
        else:
            buf.write(f"{key} = {json.dumps(val)}\n")
    return buf.getvalue()


def body_from_config(cfg: dict, ledger=None) -> ConvexBody:
    n = int(cfg["n"])
    shape = cfg.get("shape", "ball")
    radius = float(cfg.get("radius", 1.0))
    if shape == "ball":
        center = cfg.get("center", [0.0] * n)
        return Ball(np.asarray(center, dtype=float), radius, ledger)
    if shape == "box":
        return Box.cube(n, radius, ledger)
    if shape == "polytope":
        return Polytope(np.asarray(cfg["A"]), np.asarray(cfg["b"]), ledger)
    raise ValueError(f"unknown shape {shape!r}")


def objective_from_config(cfg: dict):
    n = int(cfg["n"])
    kind = cfg.get("objective", "quadratic")
    center = np.asarray(cfg.get("minimizer", [0.0] * n), dtype=float)
    scale = float(cfg.get("scale", 1.0))
    if kind == "quadratic":
        return Quadratic(center, scale)
    if kind == "norm":
        return NormObjective(center, scale)
    if kind in ("max-affine", "piecewise-max-affine"):
        return simplex_max_affine(n, center, scale)
    raise ValueError(f"unknown objective {kind!r}")


def oracle_from_config(cfg: dict, ledger=None):
    """Approximate-convex oracle, or a stochastic one when ``sigma`` is set."""
    n = int(cfg["n"])
    base = objective_from_config(cfg)
    if "sigma" in cfg and float(cfg["sigma"]) > 0:
        return StochasticOracle(base, n, float(cfg["sigma"]),
                                cfg.get("noise", "gaussian"), ledger)
    body_radius = float(cfg.get("radius", 1.0))
    return ApproxConvexOracle(
        base, n,
        perturbation=cfg.get("perturbation", "none"),
        amplitude=float(cfg.get("amplitude", 0.0)),
        seed=int(cfg.get("seed", 0)),
        lipschitz=base.lipschitz_inf(body_radius),
        ledger=ledger,
    )
