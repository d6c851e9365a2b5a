"""Exact linear algebra for periodic environments.

On an environment with periods ``L_1..L_d`` the environment seen from the
walker only depends on the walker's position mod L, so the chain of
re-centered environments is a finite Markov chain on the torus.  Its matrix
``M[x, x'] = sum of p_x(y) over y with x + y = x' (mod L)`` is the torus
reduction of the kernel; stationary vectors, velocities, diffusion matrices
and entropy rates all become finite sums.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .env_model import (
    AGGREGATE_TOL,
    Environment,
    Periodic,
    check_doubly_stochastic,
    check_zero_drift,
)

log = logging.getLogger(__name__)

SOLVE_TOL = 1e-10
POWER_TOL = 1e-12
POWER_BUDGET = 10**6


class UnsupportedEnvironment(TypeError):
    pass


class ContractError(ValueError):
    pass


class NumericalFailure(RuntimeError):
    pass


@dataclass
class EvpChain:
    env: Periodic
    sites: np.ndarray  # (n, d) fundamental-domain coordinates, C order
    matrix: np.ndarray  # (n, n) row-stochastic

    @property
    def n(self) -> int:
        return len(self.sites)

    def index(self, x) -> int:
        return int(np.ravel_multi_index(tuple(np.mod(np.asarray(x), self.env.extents)), self.env.extents))


def _require_periodic(env: Environment) -> Periodic:
    if not isinstance(env, Periodic):
        raise UnsupportedEnvironment(f"exact oracles need a periodic environment, got kind {env.kind!r}")
    return env.canonical()


def build_evp_chain(env: Environment) -> EvpChain:
    env = _require_periodic(env)
    sites = env.torus_sites()
    n = env.n_sites
    M = np.zeros((n, n))
    ext = np.asarray(env.extents)
    for i, x in enumerate(sites):
        jd = env.table[i]
        t = np.ravel_multi_index(tuple(np.mod(x + np.asarray(jd.displacements), ext).T), env.extents)
        np.add.at(M[i], t, jd.probs)
    return EvpChain(env, sites, M)


@dataclass
class StationaryMeasure:
    weights: np.ndarray
    reducible: bool = False
    method: str = "direct"
    residual: float = 0.0

    @property
    def support(self) -> np.ndarray:
        return self.weights > 0


def stationary_residual(M: np.ndarray, pi: np.ndarray) -> float:
    return float(np.max(np.abs(pi @ M - pi))) if len(pi) else 0.0


def _direct_solve(M: np.ndarray) -> np.ndarray:
    n = len(M)
    A = np.vstack([M.T - np.eye(n), np.ones((1, n))])
    b = np.zeros(n + 1)
    b[-1] = 1.0
    pi, *_ = np.linalg.lstsq(A, b, rcond=None)
    return pi


def power_iteration_stationary(M: np.ndarray, start: int = 0, tol: float = POWER_TOL,
                               max_iter: int = POWER_BUDGET) -> np.ndarray:
    """Iterate the lazy chain (I + M)/2 from a point mass until converged to ``tol``.

    Stops once both the last step and its geometric tail estimate are below
    ``tol``, so slowly mixing chains are not cut off early.  Laziness
    removes periodicity without changing stationary vectors; from a reducible
    start the limit is the occupation measure reached from ``start``.
    """
    lazy = 0.5 * (np.eye(len(M)) + M)
    v = np.zeros(len(M))
    v[start] = 1.0
    prev = np.inf
    for _ in range(max_iter):
        w = v @ lazy
        step = float(np.max(np.abs(w - v)))
        # geometric tail bound: remaining error ~ step * rho / (1 - rho)
        rho = step / prev if prev > 0 else 0.0
        if step == 0.0 or (rho < 1.0 and step * rho / (1.0 - rho) < tol and step < tol):
            return w / w.sum()
        prev, v = step, w
    raise NumericalFailure(f"power iteration did not converge in {max_iter} iterations")


def _adjacency(M: np.ndarray) -> list[list[int]]:
    return [list(np.nonzero(row > 0)[0]) for row in M]


def strongly_connected_components(adj: Sequence[Sequence[int]]) -> list[list[int]]:
    """Tarjan's algorithm, iterative; components come out in reverse topological order."""
    n = len(adj)
    index = [-1] * n
    low = [0] * n
    on_stack = [False] * n
    stack: list[int] = []
    comps: list[list[int]] = []
    counter = 0
    for root in range(n):
        if index[root] != -1:
            continue
        work = [(root, 0)]
        while work:
            v, pos = work.pop()
            if pos == 0:
                index[v] = low[v] = counter
                counter += 1
                stack.append(v)
                on_stack[v] = True
            recurse = False
            nbrs = adj[v]
            while pos < len(nbrs):
                w = nbrs[pos]
                pos += 1
                if index[w] == -1:
                    work.append((v, pos))
                    work.append((w, 0))
                    recurse = True
                    break
                if on_stack[w]:
                    low[v] = min(low[v], index[w])
            if recurse:
                continue
            if low[v] == index[v]:
                comp = []
                while True:
                    w = stack.pop()
                    on_stack[w] = False
                    comp.append(w)
                    if w == v:
                        break
                comps.append(sorted(comp))
            if work:
                parent = work[-1][0]
                low[parent] = min(low[parent], low[v])
    return comps


def closed_components(adj, comps) -> list[list[int]]:
    where = {}
    for k, c in enumerate(comps):
        for v in c:
            where[v] = k
    return [c for k, c in enumerate(comps) if all(where[w] == k for v in c for w in adj[v])]


def reachable_from(adj, start: int = 0, horizon: int | None = None) -> set[int]:
    """Vertices reachable from ``start`` in at most ``horizon`` steps (0 steps included)."""
    seen = {start}
    frontier = deque([(start, 0)])
    while frontier:
        v, depth = frontier.popleft()
        if horizon is not None and depth >= horizon:
            continue
        for w in adj[v]:
            if w not in seen:
                seen.add(w)
                frontier.append((w, depth + 1))
    return seen


def stationary_distribution(chain: EvpChain, start: int = 0) -> StationaryMeasure:
    """Stationary vector of the torus chain.

    Irreducible chains: direct least-squares solve of pi (M - I) = 0 with the
    normalization row, falling back to power iteration.  Reducible chains:
    the limiting occupation measure from ``start``, i.e. the stationary
    vectors of the closed classes reachable from it weighted by their
    absorption probabilities; ``reducible`` is set.
    """
    M = chain.matrix
    n = len(M)
    adj = _adjacency(M)
    comps = strongly_connected_components(adj)
    if len(comps) == 1:
        pi = _direct_solve(M)
        res = stationary_residual(M, pi)
        if res <= SOLVE_TOL and pi.min() >= -AGGREGATE_TOL:
            pi = np.clip(pi, 0.0, None)
            pi /= pi.sum()
            return StationaryMeasure(pi, False, "direct", stationary_residual(M, pi))
        log.info("direct solve residual %.3g; falling back to power iteration", res)
        pi = power_iteration_stationary(M, start)
        return StationaryMeasure(pi, False, "power", stationary_residual(M, pi))

    reach = reachable_from(adj, start)
    closed = [c for c in closed_components(adj, comps) if c[0] in reach]
    in_closed = np.zeros(n, dtype=bool)
    for c in closed:
        in_closed[c] = True
    transient = np.array(sorted(v for v in reach if not in_closed[v]), dtype=int)
    pi = np.zeros(n)
    for c in closed:
        c = np.asarray(c)
        sub = _direct_solve(M[np.ix_(c, c)])
        if stationary_residual(M[np.ix_(c, c)], sub) > SOLVE_TOL:
            sub = power_iteration_stationary(M[np.ix_(c, c)])
        if in_closed[start]:
            h = 1.0 if start in c else 0.0
        else:
            A = np.eye(len(transient)) - M[np.ix_(transient, transient)]
            rhs = M[np.ix_(transient, c)].sum(axis=1)
            h_vec = np.linalg.solve(A, rhs)
            h = float(h_vec[np.searchsorted(transient, start)])
        pi[c] += h * np.clip(sub, 0.0, None) / np.clip(sub, 0.0, None).sum()
    pi /= pi.sum()
    return StationaryMeasure(pi, True, "absorption", stationary_residual(M, pi))


def verify_steady_state_identity(chain: EvpChain, pi) -> float:
    """Max over singletons B of |pi(B) - sum_i sum_{x: x + d_i in B} pi(x) q_i(x)|.

    Computed from the jump tables directly, not from ``chain.matrix``.
    """
    w = pi.weights if isinstance(pi, StationaryMeasure) else np.asarray(pi, dtype=float)
    env = chain.env
    acc = np.zeros(env.n_sites)
    for i, x in enumerate(chain.sites):
        jd = env.table[i]
        for y, q in zip(jd.displacements, jd.probs):
            acc[chain.index(np.asarray(x) + np.asarray(y))] += w[i] * q
    return float(np.max(np.abs(w - acc)))


def _weights(env: Periodic, pi) -> np.ndarray:
    if pi is None:
        return np.full(env.n_sites, 1.0 / env.n_sites)
    return pi.weights if isinstance(pi, StationaryMeasure) else np.asarray(pi, dtype=float)


def exact_velocity(env: Environment, pi) -> np.ndarray:
    """Limit of X_n / n: stationary average of the local drift."""
    env = _require_periodic(env)
    w = _weights(env, pi)
    drifts = np.array([jd.drift() for jd in env.table])
    return w @ drifts


def exact_diffusion_matrix(env: Environment, pi=None) -> np.ndarray:
    """Stationary average of sum_y p(y) y y^T.

    Requires a doubly stochastic, zero-drift environment; the uniform
    measure is used unless ``pi`` is given.
    """
    env = _require_periodic(env)
    ds = check_doubly_stochastic(env, 1)
    if not ds.ok:
        raise ContractError(f"doubly_stochastic check failed (max deviation {ds.max_deviation:.3g})")
    zd = check_zero_drift(env, 1)
    if not zd.ok:
        raise ContractError(f"zero_drift check failed (max drift {zd.max_drift_norm:.3g})")
    w = _weights(env, pi)
    C = sum(wi * jd.second_moment() for wi, jd in zip(w, env.table))
    return 0.5 * (C + C.T)


def exact_entropy_rate(env: Environment, pi) -> float:
    env = _require_periodic(env)
    w = _weights(env, pi)
    rate = float(w @ np.array([jd.entropy() for jd in env.table]))
    if rate == 0.0:
        log.warning("entropy rate is zero: the walk is deterministic on the stationary support")
    return rate


def radon_nikodym(pi: StationaryMeasure) -> np.ndarray:
    """Density of the stationary measure against the uniform measure on the torus."""
    w = _weights_only(pi)
    return w * len(w)


def _weights_only(pi) -> np.ndarray:
    return pi.weights if isinstance(pi, StationaryMeasure) else np.asarray(pi, dtype=float)


@dataclass
class TransitivityReport:
    generators: list[tuple[int, ...]]
    horizon: int
    reachable: set[tuple[int, ...]]
    sccs: list[list[tuple[int, ...]]]
    sinks: list[list[tuple[int, ...]]]
    transitive: bool
    generated: set[tuple[int, ...]] = field(default_factory=set)

    @property
    def proper_sinks(self):
        total = sum(len(c) for c in self.sccs)
        return [s for s in self.sinks if len(s) < total]

    def to_json(self) -> dict:
        return {
            "generators": [list(g) for g in self.generators],
            "horizon": self.horizon,
            "reachable": sorted(list(x) for x in self.reachable),
            "sccs": [[list(x) for x in c] for c in self.sccs],
            "sinks": [[list(x) for x in c] for c in self.sinks],
            "transitive": self.transitive,
        }


def transitivity_report(env: Environment, generators=None, horizon: int | None = None) -> TransitivityReport:
    """Reachability, SCCs and sinks of the positive-probability jump graph on the torus.

    ``transitive`` means every torus site in the subgroup generated by
    ``generators`` (default: the standard basis) is reached from 0 within
    ``horizon`` steps; a False answer at small horizon is not conclusive.
    """
    chain = build_evp_chain(env)
    d = chain.env.dim
    if generators is None:
        generators = [tuple(int(i == j) for j in range(d)) for i in range(d)]
    generators = [tuple(int(c) for c in g) for g in generators]
    if horizon is None:
        horizon = chain.n
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    adj = _adjacency(chain.matrix)
    reach = reachable_from(adj, 0, horizon)

    gen_adj = [sorted({chain.index(chain.sites[v] + s * np.asarray(g)) for g in generators for s in (1, -1)})
               for v in range(chain.n)]
    generated = reachable_from(gen_adj, 0)

    comps = strongly_connected_components(adj)
    sinks = closed_components(adj, comps)

    def coords(vs):
        return [tuple(int(c) for c in chain.sites[v]) for v in sorted(vs)]

    return TransitivityReport(
        generators=generators,
        horizon=horizon,
        reachable=set(coords(reach)),
        sccs=[coords(c) for c in sorted(comps)],
        sinks=[coords(c) for c in sorted(sinks)],
        transitive=generated <= reach,
        generated=set(coords(generated)),
    )
