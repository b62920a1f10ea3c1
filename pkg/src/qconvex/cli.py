"""Command-line experiment runner.

Every subcommand resolves its configuration (defaults, then ``--config``,
then flags), runs, and writes reports into ``--out``.  JSON reports and the
leading ``#`` lines of CSV reports carry the resolved configuration and
seed.  Exit status: 0 on success, 2 for a malformed configuration, and a
suite-specific code (see ``EXIT_CODES``) when an invariant is violated.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .core import (ApproxConvexOracle, body_from_config, dump_config, load_config, make_rng,
                   objective_from_config)

EXIT_CODES = {
    "config": 2,
    "warmness": 3,
    "spectral": 4,
    "pi3": 5,
    "reflector": 6,
    "bandit": 7,
    "annealing": 8,
}

RANDOMIZED = {"optimize", "sample", "amplify", "validate-lemmas", "bandit"}

DEFAULTS = {
    "optimize": {"n": 2, "shape": "ball", "radius": 1.0, "objective": "quadratic",
                 "minimizer": None, "scale": 1.0, "perturbation": "none", "eps": 0.1,
                 "amplitude": None, "epochs": None, "strands": None, "steps": 500},
    "sample": {"n": 2, "shape": "ball", "radius": 1.0, "objective": "quadratic",
               "minimizer": None, "scale": 1.0, "temperature": 1.0, "strands": 4,
               "steps": 200, "beta": 0.0},
    "spectrum": {"chain": "uniform", "size": 2, "variant": "primal", "chain_file": None,
                 "hold": 0.5},
    "amplify": {"trials": 100, "m_max": 3, "dim": 16, "chain_size": 8, "eps": 0.05},
    "validate-lemmas": {"eps": 0.1, "ns": [4, 9, 16], "grid": 20001, "chains": 100,
                        "sizes": [2, 4, 8, 16], "pi3_trials": 500},
    "bandit": {"n": 2, "sigma": 0.1, "T": 1024, "R": 2.0, "c_eps": 3e-5,
               "estimators": ["quantum", "classical"], "strands": 4, "steps": 4},
}


# accepted by every subcommand; recorded in the provenance, the simulators run single-threaded
for _cfg in DEFAULTS.values():
    _cfg["threads"] = 1


class ConfigError(ValueError):
    pass


class InvariantViolation(RuntimeError):
    def __init__(self, suite: str, message: str):
        super().__init__(message)
        self.suite = suite


# --------------------------------------------------------------------------
# plumbing

def resolve_config(command: str, path: Optional[str], overrides: dict) -> dict:
    cfg = dict(DEFAULTS[command])
    if path is not None:
        if not os.path.exists(path):
            raise ConfigError(f"config file {path!r} does not exist")
        try:
            loaded = load_config(path)
        except Exception as exc:  # configparser raises several unrelated types
            raise ConfigError(f"cannot parse {path!r}: {exc}") from exc
        unknown = sorted(set(loaded) - set(cfg))
        if unknown:
            raise ConfigError(f"unknown keys for {command}: {', '.join(unknown)}")
        cfg.update(loaded)
    cfg.update({k: v for k, v in overrides.items() if v is not None})
    if int(cfg["threads"]) < 1:
        raise ConfigError("threads must be at least 1")
    for key in ("chain_file",):
        if cfg.get(key) and not os.path.exists(cfg[key]):
            raise ConfigError(f"{key} {cfg[key]!r} does not exist")
    return cfg


def _provenance(command: str, cfg: dict, seed) -> dict:
    return {"command": command, "version": __version__, "seed": seed, "config": cfg}


def _write_json(out: Path, name: str, payload: dict) -> Path:
    path = out / name
    path.write_text(json.dumps(_jsonable(payload), sort_keys=True, indent=2) + "\n",
                    encoding="utf-8")
    return path


def _write_csv(out: Path, name: str, body: str, prov: dict) -> Path:
    path = out / name
    head = "".join(f"# {line}\n" for line in
                   [f"command = {prov['command']}", f"seed = {json.dumps(prov['seed'])}"]
                   + dump_config(prov["config"]).splitlines())
    path.write_text(head + body, encoding="utf-8")
    return path


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    return obj


def _objective_cfg(cfg: dict) -> dict:
    n = int(cfg["n"])
    out = dict(cfg)
    if out.get("minimizer") is None:
        out["minimizer"] = [0.0] * n
    return out


# --------------------------------------------------------------------------
# subcommands

def cmd_optimize(cfg: dict, seed, out: Path) -> dict:
    from .annealing import make_schedule, sim_annealing

    n = int(cfg["n"])
    eps = float(cfg["eps"])
    ocfg = _objective_cfg(cfg)
    body = body_from_config(ocfg)
    base = objective_from_config(ocfg)
    amplitude = eps / n if cfg["amplitude"] is None else float(cfg["amplitude"])
    if cfg["perturbation"] == "none":
        amplitude = 0.0
    oracle = ApproxConvexOracle(base, n, cfg["perturbation"], amplitude, int(seed),
                                lipschitz=base.lipschitz_inf(body.R))
    sched = make_schedule(n, eps, epochs=cfg["epochs"], strands=cfg["strands"],
                          steps=int(cfg["steps"]))
    rep = sim_annealing(oracle, body, eps, sched, make_rng(seed))
    vals = rep.epoch_best
    if any(b > a + 1e-12 for a, b in zip(vals, vals[1:])):
        raise InvariantViolation("annealing", "best value increased between epochs")
    payload = _provenance("optimize", cfg, seed)
    payload["report"] = rep.to_dict()
    payload["report"]["gap_to_base_minimum"] = rep.best_value - base.minimum
    _write_json(out, "optimize.json", payload)
    return payload


def cmd_sample(cfg: dict, seed, out: Path) -> dict:
    from .hitrun import WalkState, hit_and_run

    n = int(cfg["n"])
    ocfg = _objective_cfg(cfg)
    body = body_from_config(ocfg)
    base = objective_from_config(ocfg)
    rng = make_rng(seed)
    temp = float(cfg["temperature"])
    start = WalkState(body.sample_uniform(int(cfg["strands"]), rng))
    end, traj = hit_and_run(start, lambda x: -base(x) / temp, body, int(cfg["steps"]), rng,
                            beta=float(cfg["beta"]), record=True)
    inside = np.all(body.contains(traj.reshape(-1, n)))
    if not inside:
        raise InvariantViolation("annealing", "hit-and-run left the body")
    pts = traj[len(traj) // 2:].reshape(-1, n)
    rows = ["strand,step," + ",".join(f"x{i + 1}" for i in range(n))]
    for j in range(traj.shape[1]):
        for k in range(traj.shape[0]):
            rows.append(f"{j},{k}," + ",".join(repr(float(v)) for v in traj[k, j]))
    prov = _provenance("sample", cfg, seed)
    _write_csv(out, "trajectory.csv", "\n".join(rows) + "\n", prov)
    payload = dict(prov)
    payload["diagnostics"] = {
        "steps": int(cfg["steps"]), "strands": int(cfg["strands"]),
        "second_half_mean": pts.mean(axis=0), "second_half_cov": np.cov(pts.T).reshape(n, n),
        "final_points": end.points,
    }
    _write_json(out, "sample.json", payload)
    return payload


def _spectrum_chain(cfg: dict, seed):
    from .qwalk import DiscreteChain, lazy_cycle_chain, load_chain, random_reversible_chain

    kind = cfg["chain"]
    size = int(cfg["size"])
    if cfg.get("chain_file"):
        return load_chain(Path(cfg["chain_file"]).read_text(encoding="utf-8"))
    if kind == "uniform":
        return DiscreteChain(np.full((size, size), 1.0 / size))
    if kind == "lazy-cycle":
        return lazy_cycle_chain(size, float(cfg["hold"]))
    if kind == "random":
        if seed is None:
            raise ConfigError("a random chain needs --seed")
        return random_reversible_chain(size, make_rng(seed))
    raise ConfigError(f"unknown chain {kind!r}")


def cmd_spectrum(cfg: dict, seed, out: Path) -> dict:
    from .qwalk import build_walk, match_phases, predicted_eigenphases, spectrum_csv

    chain = _spectrum_chain(cfg, seed)
    walk = build_walk(chain, cfg["variant"])
    prov = _provenance("spectrum", cfg, seed)
    _write_csv(out, "spectrum.csv", spectrum_csv(walk), prov)
    payload = dict(prov)
    payload["unitarity_error"] = walk.unitarity_error()
    if cfg["variant"] == "primal":
        err = match_phases(walk.eigenphases, predicted_eigenphases(chain))
        payload["spectrum_law_error"] = err
        if err > 1e-8:
            raise InvariantViolation("spectral", f"eigenphases deviate from the law by {err:.3g}")
    _write_json(out, "spectrum.json", payload)
    return payload


def pi3_suite(trials: int, m_max: int, dim: int, rng, slack: float = 1e-10) -> dict:
    """Random dense trials of the pi/3 recursion with exact reflectors."""
    from .qwalk import ExactReflector, pi3_amplify, pi3_bound

    rng = make_rng(rng)
    worst, violations, rows = math.inf, 0, []
    for _ in range(trials):
        psi = rng.standard_normal(dim) + 1j * rng.standard_normal(dim)
        phi = rng.standard_normal(dim) + 1j * rng.standard_normal(dim)
        psi /= np.linalg.norm(psi)
        phi /= np.linalg.norm(phi)
        # mix the target toward the start so small and large overlaps both occur
        w = rng.random()
        phi = w * psi + (1 - w) * phi
        phi /= np.linalg.norm(phi)
        p = abs(np.vdot(psi, phi)) ** 2
        m = int(rng.integers(0, m_max + 1))
        out = pi3_amplify(ExactReflector(psi), ExactReflector(phi), m, psi)
        fid = abs(np.vdot(phi, out)) ** 2
        margin = fid - pi3_bound(p, m)
        worst = min(worst, margin)
        violations += margin < -slack
        rows.append({"p": p, "m": m, "fidelity": fid, "bound": pi3_bound(p, m)})
    return {"trials": trials, "violations": int(violations), "worst_margin": worst,
            "rows": rows}


def reflector_suite(chain, eps: float, ledger=None) -> dict:
    """Action of the phase-estimation reflector of ``W`` on each eigenvector.

    ``Delta`` is the smallest nonzero eigenphase as a fraction of a turn,
    raised to ``1/16`` if needed to keep ``a c`` within the ancilla cap.
    """
    from .core import QueryLedger
    from .qwalk import approx_reflector, build_walk

    led = ledger if ledger is not None else QueryLedger()
    walk = build_walk(chain)
    phases, Z = walk.eig()
    xi = np.abs(phases) / (2 * math.pi)
    nonzero = xi[xi > 1e-9]
    delta = float(nonzero.min()) if nonzero.size else 0.5
    R = approx_reflector(walk, delta, eps, ledger=led)
    while R.a * R.c > 12:
        delta *= 2
        R = approx_reflector(walk, delta, eps, ledger=led)
    rows = []
    for j in range(walk.dim):
        v = Z[:, j]
        got = R.apply_zero(v)
        fixed = xi[j] <= 1e-9
        # alpha on the fixed state, identity on eigenvectors with phase >= Delta
        ideal = R.embed(R.alpha * v if fixed else v)
        err = float(np.linalg.norm(got - ideal))
        rows.append({"xi": float(xi[j]), "fixed": bool(fixed), "error": err})
    fixed_err = max((r["error"] for r in rows if r["fixed"]), default=0.0)
    checked = [r for r in rows if not r["fixed"] and r["xi"] >= delta]
    return {"a": R.a, "c": R.c, "delta": delta, "eps": eps, "sqrt_eps": math.sqrt(eps),
            "worst_error": max((r["error"] for r in checked), default=0.0),
            "fixed_error": fixed_err, "ledger_calls": led["controlled_walk"],
            "expected_calls": R.uses * 2 ** (R.a + 1) * R.c, "uses": R.uses, "rows": rows}


def cmd_amplify(cfg: dict, seed, out: Path) -> dict:
    from .qwalk import random_reversible_chain

    rng = make_rng(seed)
    pi3 = pi3_suite(int(cfg["trials"]), int(cfg["m_max"]), int(cfg["dim"]), rng)
    chain = random_reversible_chain(int(cfg["chain_size"]), rng)
    refl = reflector_suite(chain, float(cfg["eps"]))
    payload = _provenance("amplify", cfg, seed)
    payload["pi3"] = pi3
    payload["reflector"] = refl
    _write_json(out, "amplify.json", payload)
    if pi3["violations"]:
        raise InvariantViolation("pi3", f"{pi3['violations']} pi/3 bound violations")
    if refl["worst_error"] > refl["sqrt_eps"] or refl["fixed_error"] > 1e-9:
        raise InvariantViolation("reflector", "reflector error above sqrt(eps)")
    return payload


def spectral_suite(chains: int, sizes, rng, tol: float = 1e-8) -> dict:
    from .qwalk import build_walk, match_phases, predicted_eigenphases, random_reversible_chain

    rng = make_rng(rng)
    worst, fails = 0.0, 0
    for k in range(chains):
        size = int(sizes[k % len(sizes)])
        chain = random_reversible_chain(size, rng)
        err = match_phases(build_walk(chain).eigenphases, predicted_eigenphases(chain))
        worst = max(worst, err)
        fails += err > tol
    return {"chains": chains, "worst_error": worst, "violations": int(fails)}


def cmd_validate(cfg: dict, seed, out: Path) -> dict:
    from .annealing import validate_annealing_lemmas

    rng = make_rng(seed)
    checks = validate_annealing_lemmas(tuple(cfg["ns"]), float(cfg["eps"]),
                                       grid=int(cfg["grid"]), seed=int(seed))
    spectral = spectral_suite(int(cfg["chains"]), cfg["sizes"], rng)
    pi3 = pi3_suite(int(cfg["pi3_trials"]), 3, 16, rng)
    pi3.pop("rows")
    prov = _provenance("validate-lemmas", cfg, seed)
    fields = list(checks[0].to_dict()) if checks else []
    lines = [",".join(fields)]
    for c in checks:
        d = c.to_dict()
        lines.append(",".join(repr(d[f]) if isinstance(d[f], float) else str(d[f])
                              for f in fields))
    _write_csv(out, "warmness.csv", "\n".join(lines) + "\n", prov)
    payload = dict(prov)
    payload["warmness"] = {"pairs": len(checks), "violations": sum(not c.ok for c in checks)}
    payload["spectral"] = spectral
    payload["pi3"] = pi3
    _write_json(out, "lemmas.json", payload)
    if payload["warmness"]["violations"]:
        raise InvariantViolation("warmness", "warmness/overlap bound violated")
    if spectral["violations"]:
        raise InvariantViolation("spectral", "spectrum law violated")
    if pi3["violations"]:
        raise InvariantViolation("pi3", "pi/3 bound violated")
    return payload


def cmd_bandit(cfg: dict, seed, out: Path) -> dict:
    from .bandit import calibrate, classical_epoch_bandit, default_instance, qbandits

    inst = default_instance(int(cfg["n"]), float(cfg["sigma"]), int(cfg["T"]),
                            R=float(cfg["R"]))
    rng = make_rng(seed)
    c_eps = float(cfg["c_eps"])
    calib = calibrate(inst, c_eps, rng, strands=int(cfg["strands"]), steps=int(cfg["steps"]))
    prov = _provenance("bandit", cfg, seed)
    payload = dict(prov)
    payload["calibration"] = {"queries_per_round": calib.queries_per_round,
                              "evals_per_epoch": calib.evals_per_epoch}
    runners = {"quantum": qbandits, "classical": classical_epoch_bandit}
    payload["runs"] = {}
    for est in cfg["estimators"]:
        if est not in runners:
            raise ConfigError(f"unknown estimator {est!r}")
        trace = runners[est](inst, make_rng([int(seed), 1]), calibration=calib, c_eps=c_eps,
                             strands=int(cfg["strands"]), steps=int(cfg["steps"]))
        if np.any(np.diff(trace.cumulative) < 0) or len(trace.instant) != inst.T:
            raise InvariantViolation("bandit", "regret trace invariant violated")
        _write_csv(out, f"regret_{est}.csv", trace.to_csv(), prov)
        payload["runs"][est] = {"regret": trace.regret, "meta": trace.meta,
                                "queries": int(trace.queries[-1])}
    _write_json(out, "bandit.json", payload)
    return payload


COMMANDS = {
    "optimize": cmd_optimize,
    "sample": cmd_sample,
    "spectrum": cmd_spectrum,
    "amplify": cmd_amplify,
    "validate-lemmas": cmd_validate,
    "bandit": cmd_bandit,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="key = value configuration file")
    common.add_argument("--seed", type=int, metavar="U64", help="seed for randomized runs")
    common.add_argument("--out", metavar="DIR", default=".", help="report directory")
    common.add_argument("--threads", type=int, metavar="N",
                        help="recorded for provenance; the simulators run single-threaded")
    parser = argparse.ArgumentParser(prog="qconvex", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"qconvex {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("optimize", parents=[common], help="annealing on an instance")
    p.add_argument("--epochs", type=int)
    p.add_argument("--strands", type=int)
    p.add_argument("--steps", type=int)
    sub.add_parser("sample", parents=[common], help="hit-and-run diagnostics")
    sub.add_parser("spectrum", parents=[common], help="walk-operator spectrum CSV")
    sub.add_parser("amplify", parents=[common], help="pi/3 and reflector demos")
    sub.add_parser("validate-lemmas", parents=[common],
                   help="warmness/overlap, spectral and pi/3 suites")
    sub.add_parser("bandit", parents=[common], help="regret traces")
    return parser


def run(command: str, cfg: dict, seed, out) -> dict:
    if command in RANDOMIZED and seed is None:
        raise ConfigError(f"{command} is randomized and needs --seed")
    if seed is not None and not 0 <= int(seed) < 2 ** 64:
        raise ConfigError("seed must be an unsigned 64-bit integer")
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    return COMMANDS[command](cfg, seed, out)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    overrides = {k: getattr(args, k) for k in ("epochs", "strands", "steps", "threads")
                 if hasattr(args, k)}
    try:
        cfg = resolve_config(args.command, args.config, overrides)
        run(args.command, cfg, args.seed, args.out)
    except ConfigError as exc:
        print(f"qconvex {args.command}: configuration error: {exc}", file=sys.stderr)
        return EXIT_CODES["config"]
    except InvariantViolation as exc:
        print(f"qconvex {args.command}: invariant violated ({exc.suite}): {exc}", file=sys.stderr)
        return EXIT_CODES[exc.suite]
    except (KeyError, TypeError, ValueError) as exc:
        print(f"qconvex {args.command}: configuration error: {exc}", file=sys.stderr)
        return EXIT_CODES["config"]
    return 0


if __name__ == "__main__":
    sys.exit(main())
