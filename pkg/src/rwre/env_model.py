"""Environments on Z^d: per-site jump laws, translations, and assumption checks.

An environment is a deterministic field ``x -> JumpDistribution``.  Every kind
here draws its laws from a finite list of *classes* (one per torus site for
periodic environments, one per family member for i.i.d. fields, A/B for the
column counterexample), which lets the Monte Carlo engine look laws up for a
whole batch of walkers with one vectorized call to :meth:`Environment.class_index`.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

from . import rng

PROB_SUM_TOL = 1e-12
AGGREGATE_TOL = 1e-10
DRIFT_TOL = 1e-12


class DimensionError(ValueError):
    pass


class WindowError(ValueError):
    pass


Displacement = tuple[int, ...]


def canonical_key(y: Sequence[int]):
    """Sort key for displacements: ascending l1 norm, ties lexicographic."""
    return (sum(abs(c) for c in y), tuple(y))


def _as_prob(p):
    if isinstance(p, Fraction):
        return p, True
    if isinstance(p, (int, np.integer)) and not isinstance(p, bool):
        return Fraction(int(p)), True
    if isinstance(p, str):
        return Fraction(p.strip()), True
    return float(p), False


@dataclass(frozen=True)
class JumpDistribution:
    """Finite-support law of one jump, stored in canonical displacement order.

    ``exact`` holds the probabilities as Fractions when every input
    probability was given exactly (int, Fraction, or a string such as
    ``"1/3"`` or ``"0.7"``); otherwise it is None.
    """

    displacements: tuple[Displacement, ...]
    probs: tuple[float, ...]
    exact: tuple[Fraction, ...] | None = None

    def __post_init__(self):
        if not self.displacements:
            raise ValueError("empty jump distribution")
        d = len(self.displacements[0])
        if d < 1 or any(len(y) != d for y in self.displacements):
            raise DimensionError("displacements must share one positive dimension")
        if len(set(self.displacements)) != len(self.displacements):
            raise ValueError("displacements must be pairwise distinct")
        if any(not (p > 0.0) or p > 1.0 + PROB_SUM_TOL for p in self.probs):
            raise ValueError("probabilities must lie in (0, 1]")
        if abs(math.fsum(self.probs) - 1.0) > PROB_SUM_TOL:
            raise ValueError(f"probabilities sum to {math.fsum(self.probs)!r}, not 1")
        if self.exact is not None and sum(self.exact) != 1:
            raise ValueError("exact probabilities do not sum to 1")

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[Sequence[int], object]]) -> "JumpDistribution":
        """Build from (displacement, probability) pairs.

        Duplicated displacements are merged and zero-probability entries
        dropped, so every partition interval downstream is nonempty.
        """
        merged: dict[Displacement, object] = {}
        all_exact = True
        for y, p in pairs:
            y = tuple(int(c) for c in np.atleast_1d(y))
            value, is_exact = _as_prob(p)
            all_exact &= is_exact
            merged[y] = merged.get(y, 0) + value
        if not all_exact:
            merged = {y: float(p) for y, p in merged.items()}
        items = sorted(((y, p) for y, p in merged.items() if p != 0), key=lambda t: canonical_key(t[0]))
        if any(p < 0 for _, p in items):
            raise ValueError("negative probability")
        disps = tuple(y for y, _ in items)
        probs = tuple(float(p) for _, p in items)
        exact = tuple(Fraction(p) for _, p in items) if all_exact else None
        return cls(disps, probs, exact)

    @classmethod
    def from_dict(cls, mapping: dict) -> "JumpDistribution":
        return cls.from_pairs(mapping.items())

    @property
    def dim(self) -> int:
        return len(self.displacements[0])

    @property
    def size(self) -> int:
        return len(self.displacements)

    @property
    def is_exact(self) -> bool:
        return self.exact is not None

    def prob(self, y: Sequence[int]) -> float:
        y = tuple(int(c) for c in y)
        try:
            return self.probs[self.displacements.index(y)]
        except ValueError:
            return 0.0

    def as_dict(self) -> dict[Displacement, float]:
        return dict(zip(self.displacements, self.probs))

    def drift(self) -> np.ndarray:
        return np.asarray(self.probs) @ np.asarray(self.displacements, dtype=float)

    def second_moment(self) -> np.ndarray:
        y = np.asarray(self.displacements, dtype=float)
        return (y * np.asarray(self.probs)[:, None]).T @ y

    def entropy(self) -> float:
        return float(-sum(p * math.log(p) for p in self.probs))

    def span(self) -> int:
        return max(max(abs(c) for c in y) for y in self.displacements)


def simple_random_walk_law(d: int, exact: bool = True) -> JumpDistribution:
    q = Fraction(1, 2 * d) if exact else 1.0 / (2 * d)
    pairs = []
    for i in range(d):
        for sgn in (1, -1):
            y = [0] * d
            y[i] = sgn
            pairs.append((y, q))
    return JumpDistribution.from_pairs(pairs)


@dataclass(frozen=True)
class Environment:
    """Base class; subclasses define ``classes`` and ``_class_index``.

    ``origin`` implements the translation action: the environment shifted by
    ``z`` sees at site ``x`` what the original sees at ``x + z``.
    """

    dim: int
    origin: tuple[int, ...] = field(default=(), kw_only=True)

    kind = "abstract"

    def __post_init__(self):
        if self.dim < 1:
            raise DimensionError("dim must be positive")
        if not self.origin:
            object.__setattr__(self, "origin", (0,) * self.dim)
        object.__setattr__(self, "origin", tuple(int(c) for c in self.origin))
        if len(self.origin) != self.dim:
            raise DimensionError("origin has wrong length")

    @property
    def classes(self) -> tuple[JumpDistribution, ...]:
        raise NotImplementedError

    @property
    def class_names(self) -> tuple[str, ...]:
        return tuple(str(i) for i in range(len(self.classes)))

    def _class_index(self, sites: np.ndarray, keys: np.ndarray | None) -> np.ndarray:
        raise NotImplementedError

    def class_index(self, sites, keys: np.ndarray | None = None) -> np.ndarray:
        """Class of each row of ``sites`` (shape (n, d)).

        ``keys`` optionally overrides the field key per row; the Monte Carlo
        engine uses it to evaluate many reseeded copies of one environment.
        """
        sites = np.asarray(sites, dtype=np.int64)
        if sites.ndim != 2 or sites.shape[1] != self.dim:
            raise DimensionError(f"expected sites of shape (n, {self.dim}), got {sites.shape}")
        return self._class_index(sites + np.asarray(self.origin, dtype=np.int64), keys)

    def class_of(self, x: Sequence[int]) -> int:
        return int(self.class_index(np.asarray([x]))[0])

    @property
    def is_exact(self) -> bool:
        return all(c.is_exact for c in self.classes)

    def span(self) -> int:
        return max(c.span() for c in self.classes)

    def field_key(self, seed: int | None = None) -> int:
        """Hash key for site-dependent randomness; unused by periodic fields."""
        return 0

    def with_seed(self, seed: int) -> "Environment":
        return self


@dataclass(frozen=True)
class Periodic(Environment):
    """Environment periodic with the given extents; ``table`` is in C order."""

    extents: tuple[int, ...] = ()
    table: tuple[JumpDistribution, ...] = ()

    kind = "periodic"

    def __post_init__(self):
        super().__post_init__()
        object.__setattr__(self, "extents", tuple(int(e) for e in self.extents))
        object.__setattr__(self, "table", tuple(self.table))
        if len(self.extents) != self.dim or any(e < 1 for e in self.extents):
            raise ValueError("extents must be dim positive integers")
        if len(self.table) != self.n_sites:
            raise ValueError(f"table has {len(self.table)} entries, torus has {self.n_sites} sites")
        if any(jd.dim != self.dim for jd in self.table):
            raise DimensionError("table entry of wrong dimension")

    @property
    def n_sites(self) -> int:
        return math.prod(self.extents)

    @property
    def classes(self):
        return self.table

    def _class_index(self, sites, keys):
        return np.ravel_multi_index(tuple(np.mod(sites, self.extents).T), self.extents)

    def torus_sites(self) -> np.ndarray:
        """Fundamental-domain coordinates in C order, shape (n_sites, d)."""
        return np.indices(self.extents).reshape(self.dim, -1).T

    def canonical(self) -> "Periodic":
        """Same field with origin folded into the table."""
        idx = self.class_index(self.torus_sites())
        return Periodic(self.dim, extents=self.extents, table=tuple(self.table[i] for i in idx))


@dataclass(frozen=True)
class SeededIID(Environment):
    """I.i.d. field: site x draws ``family[k]`` with probability ``weights[k]``.

    The draw is a counter-based hash of ``(master_seed, x)``, so the field is
    evaluated lazily and reproducibly at any site.
    """

    family: tuple[JumpDistribution, ...] = ()
    weights: tuple[float, ...] = ()
    master_seed: int = 0
    names: tuple[str, ...] = ()

    kind = "iid"

    def __post_init__(self):
        super().__post_init__()
        object.__setattr__(self, "family", tuple(self.family))
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))
        if not self.family or len(self.family) != len(self.weights):
            raise ValueError("family and weights must be nonempty and aligned")
        if any(w < 0 for w in self.weights) or abs(math.fsum(self.weights) - 1.0) > PROB_SUM_TOL:
            raise ValueError("weights must be nonnegative and sum to 1")
        if any(jd.dim != self.dim for jd in self.family):
            raise DimensionError("family member of wrong dimension")
        if self.names and len(self.names) != len(self.family):
            raise ValueError("names must align with family")

    @property
    def classes(self):
        return self.family

    @property
    def class_names(self):
        return self.names or super().class_names

    def field_key(self, seed=None):
        return rng.derive_key(self.master_seed if seed is None else seed, rng.TAG_SITE)

    def with_seed(self, seed):
        return dataclasses.replace(self, master_seed=int(seed))

    def _class_index(self, sites, keys):
        key = np.uint64(self.field_key()) if keys is None else keys
        u = rng.to_unit(rng.hash_sites(key, sites))
        cum = np.cumsum(self.weights)
        return np.minimum(np.searchsorted(cum, u, side="right"), len(self.family) - 1)


A_LAW = JumpDistribution.from_pairs([((1, 0), Fraction(1, 2)), ((-1, 0), Fraction(1, 2))])
B_LAW = JumpDistribution.from_pairs([((0, 1), Fraction(1, 2)), ((0, -1), Fraction(1, 2))])


@dataclass(frozen=True)
class ColumnAB(Environment):
    """Two-dimensional column counterexample.

    Column ``j`` is labeled A with probability ``prob_A`` independently; A
    sites jump horizontally, B sites vertically, each with probability 1/2.
    """

    prob_A: float = 0.5
    master_seed: int = 0
    dim: int = 2

    kind = "column_ab"

    def __post_init__(self):
        super().__post_init__()
        if self.dim != 2:
            raise DimensionError("ColumnAB is two-dimensional")
        if not 0.0 < self.prob_A < 1.0:
            raise ValueError("prob_A must lie in (0, 1)")

    @property
    def classes(self):
        return (A_LAW, B_LAW)

    @property
    def class_names(self):
        return ("A", "B")

    def field_key(self, seed=None):
        return rng.derive_key(self.master_seed if seed is None else seed, rng.TAG_SITE)

    def with_seed(self, seed):
        return dataclasses.replace(self, master_seed=int(seed))

    def _class_index(self, sites, keys):
        key = np.uint64(self.field_key()) if keys is None else keys
        u = rng.to_unit(rng.hash_sites(key, sites[:, :1]))
        return (u >= self.prob_A).astype(np.int64)

    def column_label(self, j: int) -> str:
        return self.class_names[self.class_of((j, 0))]


def column_ab_periodic(pattern: str, height: int = 1) -> Periodic:
    """Periodic rendering of the column counterexample with a fixed label pattern."""
    width = len(pattern)
    table = [A_LAW if pattern[i].upper() == "A" else B_LAW for i in range(width) for _ in range(height)]
    return Periodic(2, extents=(width, height), table=tuple(table))


def homogeneous(jd: JumpDistribution) -> Periodic:
    return Periodic(jd.dim, extents=(1,) * jd.dim, table=(jd,))


def simple_random_walk(d: int, exact: bool = True) -> Periodic:
    return homogeneous(simple_random_walk_law(d, exact))


# -- operations ---------------------------------------------------------------


def _check_site(env: Environment, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.int64).reshape(-1)
    if x.shape[0] != env.dim:
        raise DimensionError(f"site has length {x.shape[0]}, environment has dim {env.dim}")
    return x


def dist_at(env: Environment, x) -> JumpDistribution:
    x = _check_site(env, x)
    return env.classes[int(env.class_index(x[None, :])[0])]


def shift(env: Environment, z) -> Environment:
    """The translated environment: ``dist_at(shift(env, z), x) == dist_at(env, x + z)``."""
    z = _check_site(env, z)
    return dataclasses.replace(env, origin=tuple(int(a + b) for a, b in zip(env.origin, z)))


def local_drift(env: Environment, x) -> np.ndarray:
    return dist_at(env, x).drift()


def window_sites(dim: int, radius: int) -> np.ndarray:
    """All sites with sup-norm at most ``radius``, shape (n, dim)."""
    side = np.arange(-radius, radius + 1)
    grids = np.meshgrid(*([side] * dim), indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=1)


def _sites_to_check(env: Environment, window_radius: int) -> tuple[np.ndarray, np.ndarray]:
    if window_radius < 1:
        raise WindowError("window_radius must be >= 1")
    if isinstance(env, Periodic):
        sites = env.torus_sites()
    else:
        sites = window_sites(env.dim, window_radius)
    return sites, env.class_index(sites)


@dataclass
class DecayReport:
    ok: bool
    worst_site: tuple | None
    worst_displacement: tuple | None
    worst_ratio: float


def check_decay(env: Environment, K: float, gamma: float, window_radius: int) -> DecayReport:
    """Check ``p(y) <= K |y|^(-d-gamma)`` at every site of the window.

    ``worst_ratio`` is the largest ``p(y) / bound(y)`` seen; ok iff it is <= 1.
    Periodic environments are checked over one fundamental domain.
    """
    if K <= 0 or gamma <= 0:
        raise ValueError("K and gamma must be positive")
    sites, cls = _sites_to_check(env, window_radius)
    ratios = []
    for c, jd in enumerate(env.classes):
        best = (-1.0, None)
        for y, p in zip(jd.displacements, jd.probs):
            norm = math.sqrt(sum(v * v for v in y))
            if norm == 0:
                continue
            r = p / (K * norm ** (-env.dim - gamma))
            if r > best[0]:
                best = (r, y)
        ratios.append(best)
    worst = (-1.0, None, None)
    for site, c in zip(sites, cls):
        r, y = ratios[c]
        if r > worst[0]:
            worst = (r, tuple(int(v) for v in site), y)
    ratio, site, y = worst
    ratio = max(ratio, 0.0)
    return DecayReport(ok=ratio <= 1.0, worst_site=site, worst_displacement=y, worst_ratio=ratio)


@dataclass
class DoublyStochasticReport:
    ok: bool
    per_site_incoming_mass: np.ndarray
    target_sites: np.ndarray
    failing_sites: list = field(default_factory=list)
    max_deviation: float = 0.0


def incoming_mass_periodic(env: Periodic) -> np.ndarray:
    """Column sums of the torus-reduced transition matrix, in torus C order."""
    sites = env.torus_sites()
    cls = env.class_index(sites)
    mass = np.zeros(env.n_sites)
    ext = np.asarray(env.extents)
    for x, c in zip(sites, cls):
        jd = env.classes[c]
        targets = np.mod(x + np.asarray(jd.displacements), ext)
        np.add.at(mass, np.ravel_multi_index(tuple(targets.T), env.extents), jd.probs)
    return mass


def check_doubly_stochastic(env: Environment, window_radius: int) -> DoublyStochasticReport:
    """Incoming mass ``sum_x p_xy`` at each target site.

    For non-periodic kinds the sources range over the window of the given
    radius and the targets over the inner window shrunk by the largest jump,
    which is where every contributing source is accounted for.
    """
    if isinstance(env, Periodic):
        if window_radius < 1:
            raise WindowError("window_radius must be >= 1")
        targets = env.torus_sites()
        mass = incoming_mass_periodic(env)
    else:
        span = env.span()
        if window_radius < span:
            raise WindowError(f"window_radius {window_radius} smaller than jump span {span}")
        r = window_radius
        sources = window_sites(env.dim, r + span)
        cls = env.class_index(sources)
        side = 2 * (r + span) + 1
        grid = np.zeros((side,) * env.dim)
        for c, jd in enumerate(env.classes):
            src = sources[cls == c]
            if len(src) == 0:
                continue
            for y, p in zip(jd.displacements, jd.probs):
                t = src + np.asarray(y) + (r + span)
                inside = np.all((t >= 0) & (t < side), axis=1)
                np.add.at(grid, tuple(t[inside].T), p)
        targets = window_sites(env.dim, r)
        mass = grid[tuple((targets + r + span).T)]
    dev = np.abs(mass - 1.0)
    bad = np.nonzero(dev > AGGREGATE_TOL)[0]
    return DoublyStochasticReport(
        ok=len(bad) == 0,
        per_site_incoming_mass=mass,
        target_sites=targets,
        failing_sites=[tuple(int(v) for v in targets[i]) for i in bad],
        max_deviation=float(dev.max()) if len(dev) else 0.0,
    )


@dataclass
class ZeroDriftReport:
    ok: bool
    max_drift_norm: float
    worst_site: tuple | None = None


def check_zero_drift(env: Environment, window_radius: int) -> ZeroDriftReport:
    sites, cls = _sites_to_check(env, window_radius)
    norms = np.array([np.linalg.norm(jd.drift()) for jd in env.classes])
    site_norms = norms[cls]
    i = int(np.argmax(site_norms))
    worst = float(site_norms[i])
    return ZeroDriftReport(ok=worst <= DRIFT_TOL, max_drift_norm=worst, worst_site=tuple(int(v) for v in sites[i]))


@dataclass
class NondeterministicReport:
    ok: bool
    deterministic_sites: list


def check_nondeterministic(env: Environment, window_radius: int) -> NondeterministicReport:
    """Flag sites whose jump law is a point mass."""
    sites, cls = _sites_to_check(env, window_radius)
    point_mass = np.array([jd.size == 1 for jd in env.classes])
    hits = sites[point_mass[cls]]
    return NondeterministicReport(ok=len(hits) == 0, deterministic_sites=[tuple(int(v) for v in s) for s in hits])
