"""Constructors for test and experiment environments.

Doubly stochastic periodic fields are built as convex combinations, with
site-independent weights, of bijections ``x -> x + g(x)`` of Z^d.  Row
shifts ``g(x) = a(x_j) e_i`` (j != i) and global translations are such
bijections, and so are their negatives, so pairing each map with its
negative gives zero local drift as well.
"""

from __future__ import annotations

from fractions import Fraction
from itertools import product

import numpy as np

from .env_model import JumpDistribution, Periodic, SeededIID, simple_random_walk_law


def _unit(d, i, sign=1):
    y = [0] * d
    y[i] = sign
    return tuple(y)


def random_periodic(gen: np.random.Generator, dim: int, extents, extra: int = 2, span: int = 2,
                    min_prob: float = 0.02) -> Periodic:
    """Random periodic field whose every site charges all of +-e_i.

    Charging every unit vector makes the torus chain irreducible.  ``extra``
    further displacements with sup-norm <= ``span`` are added per site.
    """
    extents = tuple(int(e) for e in extents)
    n = int(np.prod(extents))
    table = []
    for _ in range(n):
        support = {_unit(dim, i, s) for i in range(dim) for s in (1, -1)}
        while len(support) < 2 * dim + extra:
            y = tuple(int(v) for v in gen.integers(-span, span + 1, size=dim))
            support.add(y)
        support = sorted(support)
        w = gen.dirichlet(np.ones(len(support)))
        w = min_prob + (1 - min_prob * len(w)) * w
        table.append(JumpDistribution.from_pairs(zip(support, w)))
    return Periodic(dim, extents=extents, table=tuple(table))


def random_rational_periodic(gen: np.random.Generator, dim: int, extents, max_support: int = 5,
                             span: int = 2, denom: int = 12) -> Periodic:
    """Periodic field with exact rational laws of support size 1..max_support."""
    extents = tuple(int(e) for e in extents)
    table = []
    for _ in range(int(np.prod(extents))):
        k = int(gen.integers(1, max_support + 1))
        support = set()
        while len(support) < k:
            support.add(tuple(int(v) for v in gen.integers(-span, span + 1, size=dim)))
        cuts = sorted(int(c) for c in gen.choice(np.arange(1, denom), size=k - 1, replace=False))
        parts = np.diff([0, *cuts, denom])
        table.append(JumpDistribution.from_pairs(
            (y, Fraction(int(c), denom)) for y, c in zip(sorted(support), parts)))
    return Periodic(dim, extents=extents, table=tuple(table))


def bijection_mixture(extents, maps, weights) -> Periodic:
    """Periodic law ``p_x = sum_k weights[k] * delta_{maps[k](x)}``.

    Each map takes a torus site (tuple) to a displacement; callers must make
    sure ``x -> x + map(x)`` is a bijection of Z^d for the result to be
    doubly stochastic.
    """
    extents = tuple(extents)
    table = []
    for x in product(*(range(e) for e in extents)):
        table.append(JumpDistribution.from_pairs((m(x), w) for m, w in zip(maps, weights)))
    return Periodic(len(extents), extents=extents, table=tuple(table))


def row_shift(axis: int, along: int, values):
    """Map ``x -> values[x[along] mod len(values)] * e_axis``, a bijection when along != axis."""
    def g(x):
        y = [0] * len(x)
        y[axis] = int(values[x[along] % len(values)])
        return tuple(y)
    return g


def translation(y):
    y = tuple(int(c) for c in y)
    return lambda x: y


def negated(g):
    return lambda x: tuple(-c for c in g(x))


def doubly_stochastic_2d(L: int = 4) -> Periodic:
    """A d=2 doubly stochastic field with site-dependent laws, drift and aperiodic torus chain."""
    maps = [
        row_shift(0, 1, [1, 2, -1, 1][:L] if L >= 4 else [1] * L),
        row_shift(1, 0, [1, -1, 2, 1][:L] if L >= 4 else [1] * L),
        translation((0, -1)),
        translation((-1, 0)),
        translation((1, 1)),
    ]
    return bijection_mixture((L, L), maps, [Fraction(k, 10) for k in (3, 2, 2, 2, 1)])


def martingale_2d(L: int = 4) -> Periodic:
    """A d=2 doubly stochastic zero-drift field with site-dependent laws."""
    a = [1, 2, 1, 3][:L] if L >= 4 else [1] * L
    b = [2, 1, 1, 1][:L] if L >= 4 else [1] * L
    g1, g2 = row_shift(0, 1, a), row_shift(1, 0, b)
    maps = [g1, negated(g1), g2, negated(g2), translation((1, 1)), translation((-1, -1))]
    return bijection_mixture((L, L), maps, [Fraction(k, 10) for k in (2, 2, 2, 2, 1, 1)])


def mixed_steps_1d() -> Periodic:
    """d=1, period 2, zero drift, doubly stochastic, mixing +-1, +-2 and +-4 jumps.

    With period 2 a field is doubly stochastic iff both sites put equal mass
    on odd displacements; here both put 1/2.
    """
    even = JumpDistribution.from_pairs([((1,), Fraction(1, 4)), ((-1,), Fraction(1, 4)),
                                        ((2,), Fraction(1, 4)), ((-2,), Fraction(1, 4))])
    odd = JumpDistribution.from_pairs([((1,), Fraction(1, 4)), ((-1,), Fraction(1, 4)),
                                       ((2,), Fraction(1, 10)), ((-2,), Fraction(1, 10)),
                                       ((4,), Fraction(3, 20)), ((-4,), Fraction(3, 20))])
    return Periodic(1, extents=(2,), table=(even, odd))


def two_entropy_1d() -> Periodic:
    """d=1, period 2: site 0 symmetric (entropy log 2), site 1 {+1: 0.7, -1: 0.3}.

    Both sites put all mass on odd jumps, so the field is doubly stochastic.
    """
    a = JumpDistribution.from_pairs([((1,), Fraction(1, 2)), ((-1,), Fraction(1, 2))])
    b = JumpDistribution.from_pairs([((1,), Fraction(7, 10)), ((-1,), Fraction(3, 10))])
    return Periodic(1, extents=(2,), table=(a, b))


def labeled_srw(d: int, seed: int, n_labels: int = 2) -> SeededIID:
    """I.i.d. field whose every site is a simple random walk, tagged with a random label.

    The dynamics are homogeneous while ``SiteLabel`` observables are not constant.
    """
    law = simple_random_walk_law(d)
    return SeededIID(d, family=(law,) * n_labels, weights=(1.0 / n_labels,) * n_labels, master_seed=seed,
                     names=tuple(f"L{i}" for i in range(n_labels)))


def absorbing_chain_1d() -> Periodic:
    """Four sites on a ring; 0 and 1 leak into the closed pair {2, 3}."""
    table = (
        JumpDistribution.from_pairs([((1,), Fraction(1, 2)), ((2,), Fraction(1, 2))]),
        JumpDistribution.from_pairs([((1,), Fraction(1, 2)), ((2,), Fraction(1, 2))]),
        JumpDistribution.from_pairs([((1,), Fraction(1, 2)), ((4,), Fraction(1, 2))]),
        JumpDistribution.from_pairs([((-1,), Fraction(1, 2)), ((4,), Fraction(1, 2))]),
    )
    return Periodic(1, extents=(4,), table=table)
