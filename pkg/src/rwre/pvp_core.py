"""The skew-product map on [0, 1) x environments.

A state is an internal variable ``s`` in [0, 1) together with the walker
position; the environment seen by the walker is the base environment
re-centered at that position, never materialized.  One step locates ``s`` in
the interval partition of the current jump law, jumps by that branch's
displacement, and replaces ``s`` by its affine image under the branch.

Three iteration modes:

* ``faithful``: float ``s``; each step consumes about H bits of the 53 a
  double carries, so orbits are only meaningful for short horizons.
* ``refresh``: a fresh uniform ``s`` is drawn before every step.  The law of
  the walk is unchanged because the branch image of a uniform point is
  uniform and independent of the branch taken.
* ``exact_rational``: ``s`` is a Fraction and all arithmetic is exact.
"""

from __future__ import annotations

import bisect
import csv
import functools
import json
import math
from dataclasses import dataclass, replace
from fractions import Fraction
from typing import Sequence

import numpy as np

from .env_model import Environment, JumpDistribution, dist_at
from .rng import Stream

MODES = ("faithful", "refresh", "exact_rational")
_BELOW_ONE = 1.0 - 2.0**-53


class ModeError(ValueError):
    """Iteration mode incompatible with the environment or arguments."""


class UnrealizableError(ValueError):
    def __init__(self, step: int, displacement, position):
        self.step = step
        self.displacement = displacement
        self.position = position
        super().__init__(f"step {step}: displacement {displacement} has probability 0 at site {position}")


@dataclass(frozen=True)
class Partition:
    breakpoints: tuple[float, ...]
    displacements: tuple[tuple[int, ...], ...]
    exact_breakpoints: tuple[Fraction, ...] | None = None

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.breakpoints)

    def __len__(self):
        return len(self.displacements)


@functools.lru_cache(maxsize=4096)
def build_partition(jd: JumpDistribution) -> Partition:
    """Prefix sums of the probabilities in canonical displacement order."""
    acc = [0.0]
    for p in jd.probs[:-1]:
        acc.append(acc[-1] + p)
    # last breakpoint pinned to 1 so every s in [0, 1) is located
    acc.append(1.0)
    exact = None
    if jd.exact is not None:
        ex = [Fraction(0)]
        for p in jd.exact:
            ex.append(ex[-1] + p)
        exact = tuple(ex)
    return Partition(tuple(acc), jd.displacements, exact)


def _check_unit(s):
    if not (0 <= s < 1):
        raise ValueError(f"s={s!r} outside [0, 1)")


def _bounds(p: Partition, s):
    if isinstance(s, Fraction):
        if p.exact_breakpoints is None:
            raise ModeError("exact s requires an exact partition")
        return p.exact_breakpoints
    return p.breakpoints


def locate(p: Partition, s) -> tuple[int, tuple[int, ...]]:
    """1-based index i with a_{i-1} <= s < a_i, and that branch's displacement."""
    _check_unit(s)
    i = bisect.bisect_right(_bounds(p, s), s)
    return i, p.displacements[i - 1]


def phi(p: Partition, s):
    """Affine image of ``s`` under its branch; exact for Fraction input."""
    i, _ = locate(p, s)
    a = _bounds(p, s)
    out = (s - a[i - 1]) / (a[i] - a[i - 1])
    if isinstance(s, Fraction):
        return out
    return min(max(out, 0.0), _BELOW_ONE)


@dataclass(frozen=True)
class PvpState:
    s: float | Fraction
    position: tuple[int, ...]
    env: Environment
    step_count: int = 0

    @classmethod
    def start(cls, env: Environment, s) -> "PvpState":
        _check_unit(s)
        return cls(s, (0,) * env.dim, env, 0)


@dataclass
class Trajectory:
    positions: np.ndarray  # (n + 1, d) integer array, positions[0] == 0

    @property
    def n(self) -> int:
        return len(self.positions) - 1

    @property
    def dim(self) -> int:
        return self.positions.shape[1]

    def displacements(self) -> tuple[tuple[int, ...], ...]:
        return tuple(tuple(int(c) for c in row) for row in np.diff(self.positions, axis=0))

    def to_csv(self, path) -> None:
        write_trajectory_csv(self, path)


def step(state: PvpState) -> PvpState:
    p = build_partition(dist_at(state.env, state.position))
    _, y = locate(p, state.s)
    s_next = phi(p, state.s)
    pos = tuple(a + b for a, b in zip(state.position, y))
    return PvpState(s_next, pos, state.env, state.step_count + 1)


def _prepare(state: PvpState, mode: str, rng_stream) -> PvpState:
    if mode not in MODES:
        raise ModeError(f"unknown mode {mode!r}; choose from {MODES}")
    if mode == "exact_rational":
        if not state.env.is_exact:
            raise ModeError("exact_rational mode needs exactly specified (rational) probabilities")
        return replace(state, s=Fraction(state.s))
    if mode == "refresh" and rng_stream is None:
        raise ModeError("refresh mode needs an rng stream")
    return replace(state, s=float(state.s))


def iterate(state: PvpState, n: int, mode: str = "faithful", rng_stream: Stream | None = None):
    """Run ``n`` steps; returns (Trajectory of n + 1 positions, final state)."""
    if n < 0:
        raise ValueError("n must be nonnegative")
    state = _prepare(state, mode, rng_stream)
    out = np.empty((n + 1, state.env.dim), dtype=np.int64)
    out[0] = state.position
    for k in range(n):
        if mode == "refresh":
            state = replace(state, s=rng_stream.uniform())
        state = step(state)
        out[k + 1] = state.position
    return Trajectory(out), state


def encode_trajectory(state: PvpState, n: int, mode: str | None = None) -> tuple[tuple[int, ...], ...]:
    """Branch displacements taken over ``n`` steps from ``state``.

    Fraction ``s`` is iterated exactly, float ``s`` faithfully.
    """
    if mode is None:
        mode = "exact_rational" if isinstance(state.s, Fraction) else "faithful"
    if mode == "refresh":
        raise ModeError("encoding is defined for deterministic orbits only")
    traj, _ = iterate(state, n, mode)
    return traj.displacements()


def _walk_branches(env: Environment, seq: Sequence[Sequence[int]]):
    """Yield (step, partition, 0-based branch index) along a displacement sequence."""
    pos = (0,) * env.dim
    for k, y in enumerate(seq):
        y = tuple(int(c) for c in y)
        p = build_partition(dist_at(env, pos))
        try:
            i = p.displacements.index(y)
        except ValueError:
            raise UnrealizableError(k, y, pos) from None
        yield k, p, i
        pos = tuple(a + b for a, b in zip(pos, y))


def cylinder_log_measure(env: Environment, seq) -> float:
    """Log of the Lebesgue measure of the s-interval producing ``seq``."""
    return math.fsum(math.log(p.breakpoints[i + 1] - p.breakpoints[i]) if p.exact_breakpoints is None
                     else math.log(p.exact_breakpoints[i + 1] - p.exact_breakpoints[i])
                     for _, p, i in _walk_branches(env, seq))


def cylinder_measure_exact(env: Environment, seq) -> Fraction:
    """Product of the branch probabilities, in exact arithmetic."""
    out = Fraction(1)
    pos = (0,) * env.dim
    for k, y in enumerate(seq):
        jd = dist_at(env, pos)
        if jd.exact is None:
            raise ModeError("exact cylinder measure needs rational probabilities")
        y = tuple(int(c) for c in y)
        if y not in jd.displacements:
            raise UnrealizableError(k, y, pos)
        out *= jd.exact[jd.displacements.index(y)]
        pos = tuple(a + b for a, b in zip(pos, y))
    return out


def decode_trajectory(env: Environment, seq) -> tuple[Fraction, Fraction]:
    """The right-open cylinder [lo, hi) of s-values whose orbit follows ``seq``.

    Interval narrowing: each step keeps the sub-interval of the branch taken.
    """
    lo, hi = Fraction(0), Fraction(1)
    for _, p, i in _walk_branches(env, seq):
        if p.exact_breakpoints is None:
            raise ModeError("decoding needs rational probabilities")
        width = hi - lo
        lo, hi = lo + width * p.exact_breakpoints[i], lo + width * p.exact_breakpoints[i + 1]
    return lo, hi


def step_entropy(env: Environment, x) -> float:
    """Shannon entropy (nats) of the jump law at ``x``; 0 iff a point mass."""
    return dist_at(env, x).entropy()


# -- observables --------------------------------------------------------------


class Observable:
    """A real function of the environment re-centered at the walker.

    Subclasses give either a per-class ``table`` or override ``values``.
    """

    name = "observable"

    def table(self, env: Environment) -> np.ndarray:
        raise NotImplementedError

    def values(self, env: Environment, sites: np.ndarray, keys=None) -> np.ndarray:
        return self.table(env)[env.class_index(sites, keys)]

    def __call__(self, env: Environment, x) -> float:
        return float(self.values(env, np.asarray([x], dtype=np.int64))[0])


class DriftComponent(Observable):
    def __init__(self, axis: int = 0):
        self.axis = axis
        self.name = f"drift[{axis}]"

    def table(self, env):
        return np.array([jd.drift()[self.axis] for jd in env.classes])


class StepEntropy(Observable):
    name = "step_entropy"

    def table(self, env):
        return np.array([jd.entropy() for jd in env.classes])


class SiteLabel(Observable):
    """Indicator that the site at ``offset`` from the walker has class ``label``.

    ``label`` is a class name (e.g. ``"B"``) or a class index.
    """

    def __init__(self, label, offset: Sequence[int] | None = None):
        self.label = label
        self.offset = None if offset is None else tuple(int(c) for c in offset)
        self.name = f"label[{label}]@{self.offset or 0}"

    def _index(self, env):
        if isinstance(self.label, str):
            return env.class_names.index(self.label)
        return int(self.label)

    def values(self, env, sites, keys=None):
        if self.offset is not None:
            sites = sites + np.asarray(self.offset, dtype=np.int64)
        return (env.class_index(sites, keys) == self._index(env)).astype(float)


def birkhoff_average(state: PvpState, observable: Observable, n: int, mode: str = "refresh",
                     rng_stream: Stream | None = None) -> float:
    """(1/n) * sum over k < n of the observable along the orbit of ``state``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    traj, _ = iterate(state, n, mode, rng_stream)
    return float(observable.values(state.env, traj.positions[:-1]).mean())


# -- export -------------------------------------------------------------------


def write_trajectory_csv(traj: Trajectory, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step"] + [f"x_{i + 1}" for i in range(traj.dim)])
        for k, row in enumerate(traj.positions):
            w.writerow([k] + [int(v) for v in row])


def read_trajectory_csv(path) -> Trajectory:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))[1:]
    return Trajectory(np.array([[int(v) for v in r[1:]] for r in rows], dtype=np.int64))


def sequence_to_json(seq) -> str:
    return json.dumps([list(y) for y in seq])


def sequence_from_json(text: str) -> tuple[tuple[int, ...], ...]:
    return tuple(tuple(int(c) for c in y) for y in json.loads(text))


def interval_to_json(interval: tuple[Fraction, Fraction]) -> dict:
    lo, hi = interval
    return {"lo": [str(lo.numerator), str(lo.denominator)], "hi": [str(hi.numerator), str(hi.denominator)]}


def interval_from_json(doc: dict) -> tuple[Fraction, Fraction]:
    return Fraction(int(doc["lo"][0]), int(doc["lo"][1])), Fraction(int(doc["hi"][0]), int(doc["hi"][1]))
