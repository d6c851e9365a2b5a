"""Monte Carlo ensembles and the statistics computed from them.

Refresh-mode ensembles are simulated in lockstep: every trial is a row of a
numpy array and each time step is one vectorized lookup/locate/jump.  The
uniform used by trial ``t`` at step ``k`` is a pure function of
``(master_seed, t, k)``, so a trial's path does not depend on which other
trials are simulated alongside it, on chunking, or on thread count.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy import stats

from . import rng
from .env_model import Environment, Periodic, check_nondeterministic, shift
from .evp_exact import build_evp_chain, exact_entropy_rate, stationary_distribution
from .pvp_core import (
    MODES,
    ModeError,
    Observable,
    PvpState,
    Trajectory,
    build_partition,
    cylinder_log_measure,
    iterate,
)

CHUNK = 4096
SIGNIFICANCE = 1e-3
NEVER = np.iinfo(np.int64).max


# -- environment sources --------------------------------------------------------


class Reseed:
    """Sampler over environments: trial ``t`` sees ``env`` reseeded by ``(master_seed, t)``.

    For i.i.d. and column fields this draws an independent realization per
    trial; for periodic environments it is the identity.
    """

    def __init__(self, env: Environment):
        self.env = env

    def seed_for(self, master_seed: int, trial: int) -> int:
        return rng.derive_key(master_seed, rng.TAG_ENV, trial)

    def environment(self, master_seed: int, trial: int) -> Environment:
        return self.env.with_seed(self.seed_for(master_seed, trial))

    def batch(self, master_seed, trials):
        seeds = [self.seed_for(master_seed, int(t)) for t in trials]
        keys = np.array([self.env.field_key(s) for s in seeds], dtype=np.uint64)
        return keys, np.zeros((len(trials), self.env.dim), dtype=np.int64), seeds


class Translate:
    """Sampler over translates of a periodic environment.

    ``weights=None`` draws the shift uniformly from the torus (the translation
    invariant law of a periodic field); passing the stationary vector starts
    the walk from the stationary environment instead.
    """

    def __init__(self, env: Periodic, weights=None):
        self.env = env
        self.sites = env.torus_sites()
        w = np.full(len(self.sites), 1.0 / len(self.sites)) if weights is None else np.asarray(weights, float)
        self.cum = np.cumsum(w / w.sum())

    def offset_for(self, master_seed: int, trial: int) -> np.ndarray:
        u = rng.to_unit(np.array([rng.derive_key(master_seed, rng.TAG_ENV, trial)], dtype=np.uint64))[0]
        return self.sites[min(int(np.searchsorted(self.cum, u, side="right")), len(self.sites) - 1)]

    def environment(self, master_seed, trial):
        return shift(self.env, self.offset_for(master_seed, trial))

    def batch(self, master_seed, trials):
        offsets = np.array([self.offset_for(master_seed, int(t)) for t in trials], dtype=np.int64)
        return None, offsets.reshape(len(trials), self.env.dim), [None] * len(trials)


def stationary_source(env: Periodic) -> Translate:
    """Translates of ``env`` drawn from the torus chain's stationary vector.

    Walks started this way are stationary for the environment process, so
    E[X_n] / n equals the exact velocity at every n, not only in the limit.
    """
    return Translate(env, stationary_distribution(build_evp_chain(env)).weights)


@dataclass
class EnsembleSpec:
    env_source: Environment | Reseed | Translate
    n_steps: int
    n_trials: int
    mode: str = "refresh"
    master_seed: int = 0

    def __post_init__(self):
        if self.n_steps < 1 or self.n_trials < 1:
            raise ValueError("n_steps and n_trials must be >= 1")
        if self.mode not in MODES:
            raise ModeError(f"unknown mode {self.mode!r}")
        if self.mode == "exact_rational" and not self.base_env.is_exact:
            raise ModeError("exact_rational mode needs rational probabilities")

    @property
    def base_env(self) -> Environment:
        src = self.env_source
        return src if isinstance(src, Environment) else src.env

    def environment(self, trial: int) -> Environment:
        src = self.env_source
        return src if isinstance(src, Environment) else src.environment(self.master_seed, trial)


@dataclass
class EnsembleResult:
    n_steps: int
    endpoints: np.ndarray  # (T, d)
    s_final: np.ndarray  # (T,)
    log_measure: np.ndarray  # (T,) log of the cylinder measure of each path
    first_return: np.ndarray  # (T,) first k >= 1 with X_k = 0, NEVER if none
    min_norm: np.ndarray  # (T,) min over 1 <= k <= n of |X_k|
    birkhoff: np.ndarray | None = None
    paths: np.ndarray | None = None  # (T, n + 1, d)
    trials: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    @property
    def n_trials(self) -> int:
        return len(self.endpoints)

    def returned(self, horizon: int | None = None) -> np.ndarray:
        h = self.n_steps if horizon is None else horizon
        return self.first_return <= h

    def trajectories(self) -> list[Trajectory]:
        if self.paths is None:
            raise ValueError("paths were not recorded")
        return [Trajectory(p) for p in self.paths]


def _class_tables(env: Environment):
    classes = env.classes
    K = max(jd.size for jd in classes)
    C = len(classes)
    inner = np.full((C, max(K - 1, 1)), 2.0)
    starts = np.zeros((C, K))
    widths = np.ones((C, K))
    disp = np.zeros((C, K, env.dim), dtype=np.int64)
    for c, jd in enumerate(classes):
        bp = np.asarray(build_partition(jd).breakpoints)
        k = jd.size
        inner[c, : k - 1] = bp[1:k]
        starts[c, :k] = bp[:k]
        widths[c, :k] = np.diff(bp)
        disp[c, :k] = np.asarray(jd.displacements)
    return inner, starts, widths, np.log(widths), disp


def _observable_table(obs: Observable | None, env: Environment):
    if obs is None:
        return None
    try:
        return np.asarray(obs.table(env), dtype=float)
    except NotImplementedError:
        return None


def _refresh_chunk(spec: EnsembleSpec, trials: np.ndarray, record_paths: bool,
                   observable: Observable | None, burn_in: int) -> EnsembleResult:
    env = spec.base_env
    src = spec.env_source
    T, d, n = len(trials), env.dim, spec.n_steps
    if isinstance(src, Environment):
        fkeys, offsets = None, np.zeros((T, d), dtype=np.int64)
    else:
        fkeys, offsets, _ = src.batch(spec.master_seed, trials)
    keys = rng.trial_keys(spec.master_seed, trials)
    inner, starts, widths, logw, disp = _class_tables(env)
    single = len(env.classes) == 1 and fkeys is None
    obs_table = _observable_table(observable, env)

    pos = np.zeros((T, d), dtype=np.int64)
    s = np.zeros(T)
    logm = np.zeros(T)
    first_return = np.full(T, NEVER, dtype=np.int64)
    min_sq = np.full(T, np.inf)
    acc = np.zeros(T) if observable is not None else None
    paths = np.zeros((T, n + 1, d), dtype=np.int64) if record_paths else None
    zeros = np.zeros(T, dtype=np.int64)

    for k in range(n):
        cls = zeros if single else env.class_index(pos + offsets, fkeys)
        if acc is not None and k >= burn_in:
            if obs_table is not None:
                acc += obs_table[cls]
            else:
                acc += observable.values(env, pos + offsets, fkeys)
        u = rng.stream_uniforms(keys, k)
        b = (u[:, None] >= inner[cls]).sum(axis=1)
        w = widths[cls, b]
        s = np.minimum((u - starts[cls, b]) / w, 1.0 - 2.0**-53)
        logm += logw[cls, b]
        pos += disp[cls, b]
        sq = (pos * pos).sum(axis=1)
        hit = (sq == 0) & (first_return == NEVER)
        first_return[hit] = k + 1
        np.minimum(min_sq, sq, out=min_sq)
        if paths is not None:
            paths[:, k + 1] = pos

    birk = None
    if acc is not None:
        birk = acc / max(n - burn_in, 1)
    return EnsembleResult(n, pos, s, logm, first_return, np.sqrt(min_sq), birk, paths, np.asarray(trials))


def _scalar_chunk(spec: EnsembleSpec, trials: np.ndarray, record_paths: bool,
                  observable: Observable | None, burn_in: int) -> EnsembleResult:
    n, d = spec.n_steps, spec.base_env.dim
    ends, s_fin, logm, fr, mn, birk, paths = [], [], [], [], [], [], []
    for t in trials:
        env = spec.environment(int(t))
        u0 = rng.to_unit(np.array([rng.derive_key(spec.master_seed, rng.TAG_START, int(t))], dtype=np.uint64))[0]
        s0 = Fraction(float(u0)) if spec.mode == "exact_rational" else float(u0)
        traj, final = iterate(PvpState.start(env, s0), n, spec.mode)
        X = traj.positions
        ends.append(X[-1])
        s_fin.append(float(final.s))
        logm.append(cylinder_log_measure(env, traj.displacements()))
        sq = (X[1:] ** 2).sum(axis=1)
        zero = np.nonzero(sq == 0)[0]
        fr.append(int(zero[0]) + 1 if len(zero) else NEVER)
        mn.append(math.sqrt(sq.min()))
        if observable is not None:
            birk.append(float(observable.values(env, X[burn_in:n]).mean()))
        if record_paths:
            paths.append(X)
    return EnsembleResult(
        n, np.array(ends, dtype=np.int64).reshape(-1, d), np.array(s_fin), np.array(logm),
        np.array(fr, dtype=np.int64), np.array(mn), np.array(birk) if observable is not None else None,
        np.array(paths) if record_paths else None, np.asarray(trials),
    )


def _concat(parts: list[EnsembleResult]) -> EnsembleResult:
    if len(parts) == 1:
        return parts[0]

    def cat(name):
        vals = [getattr(p, name) for p in parts]
        return None if vals[0] is None else np.concatenate(vals)

    return EnsembleResult(
        parts[0].n_steps, cat("endpoints"), cat("s_final"), cat("log_measure"), cat("first_return"),
        cat("min_norm"), cat("birkhoff"), cat("paths"), cat("trials"),
    )


def simulate(spec: EnsembleSpec, *, record_paths: bool = False, observable: Observable | None = None,
             burn_in: int = 0, threads: int = 1, chunk: int = CHUNK) -> EnsembleResult:
    """Run ``spec.n_trials`` trials and reduce them in trial order.

    ``threads`` changes wall time only: chunks are independent and are
    concatenated in trial order.
    """
    if not 0 <= burn_in < spec.n_steps:
        raise ValueError("burn_in must lie in [0, n_steps)")
    kernel = _refresh_chunk if spec.mode == "refresh" else _scalar_chunk
    trials = np.arange(spec.n_trials, dtype=np.int64)
    chunks = [trials[i : i + chunk] for i in range(0, len(trials), chunk)]

    def run(ids):
        return kernel(spec, ids, record_paths, observable, burn_in)

    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(run, chunks))
    else:
        parts = [run(c) for c in chunks]
    return _concat(parts)


def sample_annealed(spec: EnsembleSpec, threads: int = 1) -> list[Trajectory]:
    """Trajectories of the annealed law: environment from the source, then a walk in it."""
    return simulate(spec, record_paths=True, threads=threads).trajectories()


# -- estimators -----------------------------------------------------------------


def _as_result(trajs) -> EnsembleResult:
    if isinstance(trajs, EnsembleResult):
        return trajs
    trajs = list(trajs)
    if not trajs:
        raise ValueError("no trajectories")
    paths = np.stack([t.positions for t in trajs])
    n = paths.shape[1] - 1
    sq = (paths[:, 1:] ** 2).sum(axis=2)
    hits = sq == 0
    first = np.where(hits.any(axis=1), hits.argmax(axis=1) + 1, NEVER)
    min_norm = np.sqrt(sq.min(axis=1)) if n > 0 else np.full(len(trajs), np.nan)
    T = len(trajs)
    return EnsembleResult(n, paths[:, -1], np.full(T, np.nan), np.full(T, np.nan), first, min_norm, None, paths,
                          np.arange(T))


def velocity_estimate(trajs) -> tuple[np.ndarray, np.ndarray]:
    """Mean and standard error of X_n / n across trials."""
    r = _as_result(trajs)
    if r.n_trials < 2:
        raise ValueError("need at least two trajectories")
    v = r.endpoints / r.n_steps
    return v.mean(axis=0), v.std(axis=0, ddof=1) / math.sqrt(r.n_trials)


def rescaled_trajectory(traj: Trajectory) -> tuple[np.ndarray, np.ndarray]:
    """Vertices (k/n, X_k/sqrt(n)) of the rescaled polyline, as (times, points)."""
    n = traj.n
    if n == 0:
        return np.zeros(1), traj.positions.astype(float)
    return np.arange(n + 1) / n, traj.positions / math.sqrt(n)


@dataclass
class DiffusionReport:
    empirical_cov: np.ndarray
    reference_C: np.ndarray | None
    rel_frobenius_err: float | None
    marginal_skewness: np.ndarray
    marginal_excess_kurtosis: np.ndarray
    n_trials: int

    def to_json(self):
        return {
            "empirical_cov": self.empirical_cov.tolist(),
            "reference_C": None if self.reference_C is None else np.asarray(self.reference_C).tolist(),
            "rel_frobenius_err": self.rel_frobenius_err,
            "marginal_skewness": self.marginal_skewness.tolist(),
            "marginal_excess_kurtosis": self.marginal_excess_kurtosis.tolist(),
            "n_trials": self.n_trials,
        }


def diffusion_estimate(trajs, reference_C=None) -> DiffusionReport:
    r = _as_result(trajs)
    if r.n_trials < 100:
        raise ValueError("diffusion_estimate needs at least 100 trajectories")
    Z = r.endpoints / math.sqrt(r.n_steps)
    cov = np.atleast_2d(np.cov(Z, rowvar=False))
    cov = 0.5 * (cov + cov.T)
    err = None
    if reference_C is not None:
        ref = np.atleast_2d(np.asarray(reference_C, dtype=float))
        err = float(np.linalg.norm(cov - ref) / np.linalg.norm(ref))
    return DiffusionReport(cov, reference_C, err, stats.skew(Z, axis=0), stats.kurtosis(Z, axis=0), r.n_trials)


@dataclass
class RecurrenceReport:
    horizon: int
    fraction_returned: float
    stderr: float
    min_distance_histogram: dict[int, int]

    def to_json(self):
        return {"horizon": self.horizon, "fraction_returned": self.fraction_returned, "stderr": self.stderr,
                "min_distance_histogram": {str(k): v for k, v in self.min_distance_histogram.items()}}


def recurrence_report(trajs, horizon: int | None = None) -> RecurrenceReport:
    """Share of trials with X_k = 0 for some 1 <= k <= horizon, plus min-distance histogram.

    The histogram bins min |X_k| (over the full recorded run) by its floor.
    """
    r = _as_result(trajs)
    h = r.n_steps if horizon is None else horizon
    if not 1 <= h <= r.n_steps:
        raise ValueError("horizon must lie in [1, n_steps]")
    ret = r.returned(h)
    frac = float(ret.mean())
    counts = np.bincount(np.floor(r.min_norm).astype(np.int64))
    hist = {int(i): int(c) for i, c in enumerate(counts) if c}
    return RecurrenceReport(h, frac, math.sqrt(frac * (1 - frac) / r.n_trials), hist)


def exact_return_probability(env: Environment, horizon: int) -> float:
    """P(X_k = 0 for some 1 <= k <= horizon) in a fixed environment, by dynamic programming.

    Mass is propagated on the box of radius ``horizon * span`` and removed
    once it reaches the origin.
    """
    d, S = env.dim, env.span()
    R = horizon * S
    side = 2 * R + 1
    coords = np.indices((side,) * d).reshape(d, -1).T - R
    cls = env.class_index(coords).reshape((side,) * d)
    mass = np.zeros((side,) * d)
    origin = (R,) * d
    mass[origin] = 1.0
    returned = 0.0
    for _ in range(horizon):
        new = np.zeros_like(mass)
        for c, jd in enumerate(env.classes):
            part = np.where(cls == c, mass, 0.0)
            if not part.any():
                continue
            for y, p in zip(jd.displacements, jd.probs):
                src = tuple(slice(max(0, -yi), side - max(0, yi)) for yi in y)
                dst = tuple(slice(max(0, yi), side - max(0, -yi)) for yi in y)
                new[dst] += p * part[src]
        returned += new[origin]
        new[origin] = 0.0
        mass = new
    return float(returned)


@dataclass
class CylinderDecayReport:
    mean_rate: float
    exact_rate: float
    rel_err: float
    std_rate: float
    deterministic_sites: list

    def to_json(self):
        return self.__dict__ | {"deterministic_sites": [list(x) for x in self.deterministic_sites]}


def cylinder_decay_check(env: Environment, n: int, trials: int, seed: int = 0, threads: int = 1) -> CylinderDecayReport:
    """Compare -(1/n) log m(cylinder) along refresh paths with the exact entropy rate."""
    pi = stationary_distribution(build_evp_chain(env))
    exact = exact_entropy_rate(env, pi)
    res = simulate(EnsembleSpec(env, n, trials, "refresh", seed), threads=threads)
    rates = -res.log_measure / n
    mean = float(rates.mean())
    rel = abs(mean - exact) / exact if exact > 0 else abs(mean)
    nd = check_nondeterministic(env, 1)
    return CylinderDecayReport(mean, exact, float(rel), float(rates.std()), nd.deterministic_sites)


@dataclass
class ErgodicityReport:
    per_realization_averages: np.ndarray
    cross_variance: float
    threshold: float
    observable: str = ""

    @property
    def consistent_with_ergodicity(self) -> bool:
        return self.cross_variance < self.threshold

    def to_json(self):
        return {"observable": self.observable, "cross_variance": self.cross_variance, "threshold": self.threshold,
                "consistent_with_ergodicity": self.consistent_with_ergodicity,
                "per_realization_averages": self.per_realization_averages.tolist()}


def ergodicity_diagnostic(spec: EnsembleSpec, observable: Observable, n_burn: int | None = None,
                          n_avg: int | None = None, threshold: float = 1e-3, threads: int = 1) -> ErgodicityReport:
    """One long Birkhoff average per realization; their spread across realizations.

    Realizations are the trials of ``spec`` (use a :class:`Reseed` source to
    vary the environment).  ``n_avg`` defaults to ``spec.n_steps`` and the
    burn-in to a tenth of it.
    """
    n_avg = spec.n_steps if n_avg is None else n_avg
    n_burn = n_avg // 10 if n_burn is None else n_burn
    run = EnsembleSpec(spec.env_source, n_burn + n_avg, spec.n_trials, spec.mode, spec.master_seed)
    res = simulate(run, observable=observable, burn_in=n_burn, threads=threads)
    avgs = res.birkhoff
    var = float(avgs.var(ddof=1)) if len(avgs) > 1 else 0.0
    return ErgodicityReport(avgs, var, threshold, getattr(observable, "name", ""))


@dataclass
class StationarityReport:
    chi2_pvalue: float
    ks_pvalue: float
    significance: float
    counts: np.ndarray
    expected: np.ndarray

    @property
    def passed(self) -> bool:
        return self.chi2_pvalue >= self.significance and self.ks_pvalue >= self.significance


def stationarity_check(env: Periodic, n: int, trials: int, seed: int = 0, significance: float = SIGNIFICANCE,
                       env_source=None, threads: int = 1) -> StationarityReport:
    """Chi-square test of X_n mod L against the stationary vector, KS test of s_n against U(0, 1).

    With a :class:`Translate` source the torus position is taken as offset + X_n.
    """
    chain = build_evp_chain(env)
    pi = stationary_distribution(chain).weights
    src = env if env_source is None else env_source
    res = simulate(EnsembleSpec(src, n, trials, "refresh", seed), threads=threads)
    pos = res.endpoints
    if isinstance(src, Translate):
        offsets = np.array([src.offset_for(seed, int(t)) for t in res.trials])
        pos = pos + offsets
    idx = np.array([chain.index(x) for x in pos]) if len(pos) else np.zeros(0, int)
    counts = np.bincount(idx, minlength=chain.n)
    support = pi > 0
    expected = pi * trials
    chi2 = stats.chisquare(counts[support], expected[support]).pvalue if support.sum() > 1 else 1.0
    ks = stats.kstest(res.s_final, "uniform").pvalue
    return StationarityReport(float(chi2), float(ks), significance, counts, expected)


def endpoints_to_csv(result: EnsembleResult, path) -> None:
    """Per-trial CSV: trial, x_1..x_d, returned_flag, cylinder_log_measure."""
    d = result.endpoints.shape[1]
    ret = result.returned()
    with open(path, "w", newline="") as fh:
        fh.write(",".join(["trial"] + [f"x_{i + 1}" for i in range(d)] + ["returned_flag", "cylinder_log_measure"]) + "\n")
        for t, x, r, lm in zip(result.trials, result.endpoints, ret, result.log_measure):
            fh.write(",".join([str(int(t))] + [str(int(v)) for v in x] + [str(int(r)), repr(float(lm))]) + "\n")


def endpoints_from_csv(path, n_steps: int) -> EnsembleResult:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, rows = rows[0], rows[1:]
    d = sum(1 for h in header if h.startswith("x_"))
    trials = np.array([int(r[0]) for r in rows], dtype=np.int64)
    X = np.array([[int(v) for v in r[1 : 1 + d]] for r in rows], dtype=np.int64).reshape(-1, d)
    ret = np.array([int(r[1 + d]) for r in rows], dtype=bool)
    lm = np.array([float(r[2 + d]) for r in rows])
    first = np.where(ret, n_steps, NEVER)
    return EnsembleResult(n_steps, X, np.full(len(rows), np.nan), lm, first, np.full(len(rows), np.nan), None,
                          None, trials)
