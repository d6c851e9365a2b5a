"""Command-line front end: ``rwre {validate,simulate,verify,analyze}``.

Exit codes: 0 all checks passed, 1 a check failed, 2 configuration or
contract error.  Log verbosity comes from the ``RWRE_LOG`` environment
variable (DEBUG, INFO, WARNING, ...).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import os
import sys
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import rng
from .env_model import (
    Environment,
    Periodic,
    check_decay,
    check_doubly_stochastic,
    check_nondeterministic,
    check_zero_drift,
)
from .envjson import SchemaError, env_from_json
from .evp_exact import (
    ContractError,
    UnsupportedEnvironment,
    build_evp_chain,
    exact_diffusion_matrix,
    exact_velocity,
    stationary_distribution,
    transitivity_report,
    verify_steady_state_identity,
)
from .mc_stats import (
    EnsembleSpec,
    Reseed,
    cylinder_decay_check,
    diffusion_estimate,
    endpoints_from_csv,
    endpoints_to_csv,
    ergodicity_diagnostic,
    exact_return_probability,
    recurrence_report,
    rescaled_trajectory,
    simulate,
    stationarity_check,
    stationary_source,
    velocity_estimate,
)
from .pvp_core import (
    MODES,
    DriftComponent,
    ModeError,
    PvpState,
    SiteLabel,
    StepEntropy,
    cylinder_measure_exact,
    decode_trajectory,
    encode_trajectory,
    write_trajectory_csv,
)

log = logging.getLogger("rwre")

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2

PERIODIC_CHECKS = ("steady_state", "stationarity", "cylinder_decay", "coding_roundtrip", "velocity", "qip",
                   "recurrence", "transitivity")
ALL_CHECKS = PERIODIC_CHECKS + ("ergodicity",)


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    environment: Environment
    seed: int
    raw: dict
    steps: int = 1000
    trials: int = 1000
    mode: str = "refresh"
    horizon: int | None = None
    generators: list | None = None
    window_radius: int = 8
    checks: dict = field(default_factory=dict)
    verify: dict = field(default_factory=dict)
    observable: dict | None = None
    export_paths: int = 0
    out: str | None = None

    @property
    def config_hash(self) -> str:
        return hashlib.sha256(json.dumps(self.raw, sort_keys=True).encode()).hexdigest()


def _int_field(doc, key, default, minimum=None):
    v = doc.get(key, default)
    if v is None:
        return None
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(f"{key!r} must be an integer")
    if minimum is not None and v < minimum:
        raise ConfigError(f"{key!r} must be >= {minimum}")
    return v


def parse_config(doc: dict, overrides: dict | None = None) -> RunConfig:
    """Validate a config document; scalar ``overrides`` (from flags) win."""
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    doc = dict(doc)
    for k, v in (overrides or {}).items():
        if v is not None:
            doc[k] = v
    if "seed" not in doc:
        raise ConfigError("config must set 'seed' (no silent nondeterminism)")
    seed = doc["seed"]
    if isinstance(seed, bool) or not isinstance(seed, int) or not 0 <= seed < 2**64:
        raise ConfigError("'seed' must be an unsigned 64-bit integer")
    if "environment" not in doc:
        raise ConfigError("config must contain 'environment'")
    try:
        env = env_from_json(doc["environment"])
    except SchemaError as exc:
        raise ConfigError(f"environment: {exc}") from exc
    mode = doc.get("mode", "refresh")
    if mode not in MODES:
        raise ConfigError(f"'mode' must be one of {MODES}")
    if mode == "exact_rational" and not env.is_exact:
        raise ConfigError("mode exact_rational needs rational probabilities in every jump law")
    checks = doc.get("checks", {"nondeterministic": True, "doubly_stochastic": True, "zero_drift": True})
    if not isinstance(checks, dict):
        raise ConfigError("'checks' must be an object")
    verify = doc.get("verify", {})
    if not isinstance(verify, dict):
        raise ConfigError("'verify' must be an object")
    unknown = set(verify.get("checks", [])) - set(ALL_CHECKS)
    if unknown:
        raise ConfigError(f"unknown verify checks {sorted(unknown)}")
    return RunConfig(
        environment=env,
        seed=seed,
        raw=doc,
        steps=_int_field(doc, "steps", 1000, 1),
        trials=_int_field(doc, "trials", 1000, 1),
        mode=mode,
        horizon=_int_field(doc, "horizon", None, 1),
        generators=doc.get("generators"),
        window_radius=_int_field(doc, "window_radius", 8, 1),
        checks=checks,
        verify=verify,
        observable=doc.get("observable"),
        export_paths=_int_field(doc, "export_paths", 0, 0),
        out=doc.get("out"),
    )


def make_observable(spec: dict | None, env: Environment):
    if spec is None:
        names = env.class_names
        if env.kind in ("iid", "column_ab"):
            return SiteLabel(names[-1])
        return StepEntropy()
    kind = spec.get("kind")
    if kind == "step_entropy":
        return StepEntropy()
    if kind == "drift":
        return DriftComponent(int(spec.get("axis", 0)))
    if kind == "site_label":
        return SiteLabel(spec["label"], spec.get("offset"))
    raise ConfigError(f"unknown observable kind {kind!r}")


def _provenance(cfg: RunConfig) -> dict:
    return {"config_hash": cfg.config_hash, "master_seed": cfg.seed}


def _dump(obj, path: Path | None):
    text = json.dumps(obj, indent=2, default=_json_default)
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text + "\n")
    return text


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, (np.bool_,)):
        return bool(o)
    if isinstance(o, (set, tuple)):
        return list(o)
    raise TypeError(type(o).__name__)


# -- validate -------------------------------------------------------------------


def cmd_validate(cfg: RunConfig) -> tuple[int, dict]:
    env, r = cfg.environment, cfg.window_radius
    results = {}
    toggles = cfg.checks
    if toggles.get("nondeterministic"):
        rep = check_nondeterministic(env, r)
        results["nondeterministic"] = {"ok": rep.ok, "deterministic_sites": rep.deterministic_sites}
    if toggles.get("decay"):
        opts = toggles["decay"] if isinstance(toggles["decay"], dict) else {}
        rep = check_decay(env, float(opts.get("K", 1.0)), float(opts.get("gamma", 1.0)), r)
        results["decay"] = {"ok": rep.ok, "worst_site": rep.worst_site, "worst_displacement": rep.worst_displacement,
                            "worst_ratio": rep.worst_ratio}
    if toggles.get("doubly_stochastic"):
        rep = check_doubly_stochastic(env, r)
        results["doubly_stochastic"] = {"ok": rep.ok, "max_deviation": rep.max_deviation,
                                        "failing_sites": rep.failing_sites}
    if toggles.get("zero_drift"):
        rep = check_zero_drift(env, r)
        results["zero_drift"] = {"ok": rep.ok, "max_drift_norm": rep.max_drift_norm, "worst_site": rep.worst_site}
    ok = all(v["ok"] for v in results.values())
    report = _provenance(cfg) | {"command": "validate", "ok": ok, "checks": results}
    return (EXIT_OK if ok else EXIT_FAIL), report


# -- simulate -------------------------------------------------------------------


def cmd_simulate(cfg: RunConfig, out: Path, threads: int = 1) -> tuple[int, dict]:
    source = Reseed(cfg.environment) if cfg.raw.get("resample_environment") else cfg.environment
    spec = EnsembleSpec(source, cfg.steps, cfg.trials, cfg.mode, cfg.seed)
    res = simulate(spec, threads=threads)
    out.mkdir(parents=True, exist_ok=True)
    endpoints_to_csv(res, out / "endpoints.csv")
    summary = _provenance(cfg) | _summarize(res)
    if cfg.export_paths:
        k = min(cfg.export_paths, cfg.trials)
        paths = simulate(EnsembleSpec(source, cfg.steps, k, cfg.mode, cfg.seed), record_paths=True, threads=threads)
        for t, traj in enumerate(paths.trajectories()):
            write_trajectory_csv(traj, out / f"trajectory_{t}.csv")
            times, pts = rescaled_trajectory(traj)
            with open(out / f"polyline_{t}.csv", "w") as fh:
                fh.write(",".join(["t"] + [f"r_{i + 1}" for i in range(pts.shape[1])]) + "\n")
                for tt, row in zip(times, pts):
                    fh.write(",".join([repr(float(tt))] + [repr(float(v)) for v in row]) + "\n")
    _dump(summary, out / "summary.json")
    return EXIT_OK, summary


def _summarize(res) -> dict:
    summary = {"n_steps": res.n_steps, "n_trials": res.n_trials,
               "fraction_returned": float(res.returned().mean())}
    if res.n_trials >= 2:
        v, se = velocity_estimate(res)
        summary["velocity"] = v.tolist()
        summary["velocity_stderr"] = se.tolist()
        Z = res.endpoints / math.sqrt(res.n_steps)
        summary["endpoint_covariance"] = np.atleast_2d(np.cov(Z, rowvar=False)).tolist()
    return summary


# -- verify ---------------------------------------------------------------------


def _entry(name, passed, measured, reference, tolerance, **extra):
    return {"name": name, "passed": bool(passed), "measured": measured, "reference": reference,
            "tolerance": tolerance} | extra


def _default_checks(env: Environment) -> list[str]:
    if not isinstance(env, Periodic):
        return ["ergodicity"]
    checks = ["steady_state", "stationarity", "cylinder_decay", "velocity", "transitivity"]
    if env.is_exact:
        checks.append("coding_roundtrip")
    if check_doubly_stochastic(env, 1).ok and check_zero_drift(env, 1).ok:
        checks.append("qip")
        if env.dim <= 2:
            checks.append("recurrence")
    return checks


def _check_coding(cfg: RunConfig, env: Environment):
    if not env.is_exact:
        raise ContractError("coding_roundtrip needs rational probabilities")
    n = int(cfg.verify.get("coding_steps", 25))
    samples = int(cfg.verify.get("coding_samples", 100))
    bad = 0
    for i in range(samples):
        u = rng.derive_key(cfg.seed, rng.TAG_START, i)
        s = Fraction(u % 10**9, 10**9)
        seq = encode_trajectory(PvpState.start(env, s), n)
        lo, hi = decode_trajectory(env, seq)
        if not (lo <= s < hi and hi - lo == cylinder_measure_exact(env, seq)):
            bad += 1
    return _entry("coding_roundtrip", bad == 0, bad, 0, 0, samples=samples, steps=n)


def run_check(name: str, cfg: RunConfig, threads: int = 1) -> dict:
    env, seed, n, T = cfg.environment, cfg.seed, cfg.steps, cfg.trials
    if name in PERIODIC_CHECKS and not isinstance(env, Periodic):
        raise UnsupportedEnvironment(f"check {name!r} needs a periodic environment, got {env.kind!r}")
    if name == "steady_state":
        chain = build_evp_chain(env)
        pi = stationary_distribution(chain)
        res = verify_steady_state_identity(chain, pi)
        return _entry(name, res <= 1e-10, res, 0.0, 1e-10, reducible=pi.reducible)
    if name == "stationarity":
        rep = stationarity_check(env, n, T, seed, threads=threads)
        return _entry(name, rep.passed, {"chi2_pvalue": rep.chi2_pvalue, "ks_pvalue": rep.ks_pvalue},
                      "uniform s_n, stationary X_n mod L", rep.significance)
    if name == "cylinder_decay":
        rep = cylinder_decay_check(env, n, T, seed, threads=threads)
        return _entry(name, rep.rel_err < 0.05, rep.mean_rate, rep.exact_rate, 0.05, rel_err=rep.rel_err,
                      deterministic_sites=rep.deterministic_sites)
    if name == "coding_roundtrip":
        return _check_coding(cfg, env)
    if name == "velocity":
        pi = stationary_distribution(build_evp_chain(env))
        exact = exact_velocity(env, pi)
        res = simulate(EnsembleSpec(stationary_source(env), n, T, "refresh", seed), threads=threads)
        v, se = velocity_estimate(res)
        ok = bool(np.all(np.abs(v - exact) <= 4 * se + 1e-15))
        return _entry(name, ok, v.tolist(), exact.tolist(), "4 stderr", stderr=se.tolist())
    if name == "qip":
        C = exact_diffusion_matrix(env)
        res = simulate(EnsembleSpec(env, n, T, "refresh", seed), threads=threads)
        rep = diffusion_estimate(res, C)
        return _entry(name, rep.rel_frobenius_err <= 0.05, rep.empirical_cov.tolist(), C.tolist(), 0.05,
                      rel_frobenius_err=rep.rel_frobenius_err, skewness=rep.marginal_skewness.tolist(),
                      excess_kurtosis=rep.marginal_excess_kurtosis.tolist())
    if name == "recurrence":
        h = cfg.horizon or min(n, 100)
        if h > n:
            raise ConfigError("horizon exceeds steps")
        res = simulate(EnsembleSpec(env, h, T, "refresh", seed), threads=threads)
        rep = recurrence_report(res, h)
        exact = exact_return_probability(env, h)
        ok = abs(rep.fraction_returned - exact) <= 3 * math.sqrt(exact * (1 - exact) / T) + 1e-12
        return _entry(name, ok, rep.fraction_returned, exact, "3 stderr", horizon=h)
    if name == "transitivity":
        rep = transitivity_report(env, cfg.generators, cfg.horizon)
        return _entry(name, rep.transitive, rep.transitive, True, None, sccs=len(rep.sccs),
                      sinks=[[list(x) for x in s] for s in rep.sinks])
    if name == "ergodicity":
        obs = make_observable(cfg.observable, env)
        realizations = int(cfg.verify.get("realizations", min(T, 50)))
        threshold = float(cfg.verify.get("ergodicity_threshold", 1e-3))
        spec = EnsembleSpec(Reseed(env), n, realizations, "refresh", seed)
        rep = ergodicity_diagnostic(spec, obs, threshold=threshold, threads=threads)
        return _entry(name, rep.consistent_with_ergodicity, rep.cross_variance, f"< {threshold}", threshold,
                      observable=rep.observable)
    raise ConfigError(f"unknown check {name!r}")


def cmd_verify(cfg: RunConfig, threads: int = 1) -> tuple[int, dict]:
    env = cfg.environment
    names = cfg.verify.get("checks") or _default_checks(env)
    expected = set(cfg.verify.get("expected_failures", []))
    entries = []
    for name in names:
        log.info("running check %s", name)
        e = run_check(name, cfg, threads)
        e["expected_failure"] = name in expected
        if e["passed"]:
            e["status"] = "PASS" if not e["expected_failure"] else "PASS (unexpected for expected failure)"
        else:
            e["status"] = "FAIL (expected for counterexample)" if e["expected_failure"] else "FAIL"
        entries.append(e)
    ok = all(e["passed"] != e["expected_failure"] for e in entries)
    report = _provenance(cfg) | {"command": "verify", "environment_kind": env.kind, "all_passed": ok,
                                 "checks": entries}
    return (EXIT_OK if ok else EXIT_FAIL), report


# -- analyze --------------------------------------------------------------------


def cmd_analyze(csv_path: Path, n_steps: int | None) -> tuple[int, dict]:
    if n_steps is None:
        side = csv_path.parent / "summary.json"
        if not side.exists():
            raise ConfigError("analyze needs --steps or a summary.json next to the CSV")
        n_steps = int(json.loads(side.read_text())["n_steps"])
    res = endpoints_from_csv(csv_path, n_steps)
    return EXIT_OK, {"command": "analyze", "source": str(csv_path)} | _summarize(res)


# -- entry point ----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rwre", description="Random walks in random environments: simulation and checks.")
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("validate", "simulate", "verify", "analyze"):
        sp = sub.add_parser(name)
        sp.add_argument("--config", type=Path)
        sp.add_argument("--seed", type=int)
        sp.add_argument("--trials", type=int)
        sp.add_argument("--steps", type=int)
        sp.add_argument("--out", type=Path)
        sp.add_argument("--threads", type=int, default=1, help="worker threads; never changes results")
        if name == "analyze":
            sp.add_argument("--csv", type=Path, required=True)
    return p


def _setup_logging():
    level = os.environ.get("RWRE_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        if args.command == "analyze":
            code, report = cmd_analyze(args.csv, args.steps)
            print(_dump(report, args.out / "analysis.json" if args.out else None))
            return code
        if args.config is None:
            raise ConfigError("--config is required")
        try:
            doc = json.loads(args.config.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config: {exc}") from exc
        cfg = parse_config(doc, {"seed": args.seed, "trials": args.trials, "steps": args.steps})
        out = args.out or (Path(cfg.out) if cfg.out else None)
        if args.command == "validate":
            code, report = cmd_validate(cfg)
            print(_dump(report, out / "validate_report.json" if out else None))
        elif args.command == "simulate":
            code, report = cmd_simulate(cfg, out or Path("rwre_out"), args.threads)
            print(_dump(report, None))
        else:
            code, report = cmd_verify(cfg, args.threads)
            print(_dump(report, out / "verify_report.json" if out else None))
        return code
    except (ConfigError, SchemaError, ContractError, UnsupportedEnvironment, ModeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
