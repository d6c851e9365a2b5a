import json
import subprocess
import sys
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rwre.env_model import (
    ColumnAB,
    DimensionError,
    JumpDistribution,
    Periodic,
    SeededIID,
    WindowError,
    check_decay,
    check_doubly_stochastic,
    check_nondeterministic,
    check_zero_drift,
    column_ab_periodic,
    dist_at,
    homogeneous,
    local_drift,
    shift,
    simple_random_walk,
    simple_random_walk_law,
)
from rwre.envjson import SchemaError, env_from_json, env_to_json
from rwre.generators import labeled_srw, random_periodic, random_rational_periodic

J = JumpDistribution.from_dict


def biased_pair():
    return Periodic(1, extents=(2,), table=(J({(1,): 0.7, (-1,): 0.3}), J({(1,): 0.3, (-1,): 0.7})))


def column_ab_with_first(label, prob_A=0.5):
    for seed in range(1000):
        env = ColumnAB(prob_A=prob_A, master_seed=seed)
        if env.column_label(0) == label:
            return env
    raise AssertionError("no seed found")


class TestJumpDistribution:
    def test_zero_entries_dropped_and_canonical_order(self):
        jd = J({(1, 0): 0.25, (0, 1): 0.25, (-1, 0): 0.25, (0, -1): 0.25, (2, 2): 0.0})
        assert jd.displacements == ((-1, 0), (0, -1), (0, 1), (1, 0))

    def test_duplicates_merge(self):
        jd = JumpDistribution.from_pairs([((1,), 0.25), ((1,), 0.25), ((-1,), 0.5)])
        assert jd.as_dict() == {(-1,): 0.5, (1,): 0.5}

    @pytest.mark.parametrize("probs", [[0.5, 0.4], [0.7, 0.3 + 1e-9], [1.2, -0.2]])
    def test_bad_sums_rejected(self, probs):
        with pytest.raises(ValueError):
            JumpDistribution.from_pairs(zip([(1,), (-1,)], probs))

    def test_exact_storage(self):
        jd = JumpDistribution.from_pairs([((1,), "7/10"), ((-1,), Fraction(3, 10))])
        assert jd.exact == (Fraction(3, 10), Fraction(7, 10))
        assert not J({(1,): 0.7, (-1,): 0.3}).is_exact

    def test_mixed_dimensions_rejected(self):
        with pytest.raises(DimensionError):
            JumpDistribution.from_pairs([((1,), 0.5), ((1, 0), 0.5)])


class TestDistAt:
    def test_periodic_wraps(self):
        assert dist_at(biased_pair(), (3,)).as_dict() == {(1,): 0.3, (-1,): 0.7}

    def test_column_ab_a_site(self):
        env = column_ab_with_first("A")
        assert dist_at(env, (0, 5)).as_dict() == {(1, 0): 0.5, (-1, 0): 0.5}

    def test_seeded_iid_deterministic(self):
        env = random_iid(5)
        assert dist_at(env, (4, 4)) == dist_at(env, (4, 4))

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionError):
            dist_at(simple_random_walk(2), (1,))


def random_iid(seed, d=2):
    gen = np.random.default_rng(seed)
    fam = [random_periodic(gen, d, (1,) * d).table[0] for _ in range(3)]
    return SeededIID(d, family=tuple(fam), weights=(0.2, 0.3, 0.5), master_seed=seed)


class TestLocalDrift:
    def test_srw_2d(self):
        np.testing.assert_array_equal(local_drift(simple_random_walk(2), (3, -1)), [0.0, 0.0])

    def test_biased(self):
        env = homogeneous(J({(1,): 0.7, (-1,): 0.3}))
        assert local_drift(env, (0,))[0] == pytest.approx(0.4, abs=1e-15)

    def test_column_ab_b_site(self):
        env = column_ab_with_first("B")
        np.testing.assert_array_equal(local_drift(env, (0, 2)), [0.0, 0.0])


envs = st.sampled_from(["periodic", "iid", "column_ab"])
coords = st.lists(st.integers(-50, 50), min_size=2, max_size=2)


@given(envs, coords, coords, st.integers(0, 2**32))
def test_translation_consistency(kind, x, z, seed):
    if kind == "periodic":
        env = random_periodic(np.random.default_rng(seed), 2, (3, 2))
    elif kind == "iid":
        env = random_iid(seed)
    else:
        env = ColumnAB(prob_A=0.4, master_seed=seed)
    xz = tuple(a + b for a, b in zip(x, z))
    assert dist_at(env, xz) == dist_at(shift(env, z), x)


@given(coords, st.integers(0, 100))
def test_periodicity(x, seed):
    env = random_periodic(np.random.default_rng(seed), 2, (3, 4))
    assert dist_at(env, x) == dist_at(env, (x[0] % 3, x[1] % 4))


def test_seeded_iid_bit_identical_across_processes():
    code = (
        "import numpy as np, json\n"
        "from tests.test_env_model import random_iid\n"
        "env = random_iid(2024)\n"
        "sites = np.random.default_rng(0).integers(-10**6, 10**6, size=(1000, 2))\n"
        "print(json.dumps(env.class_index(sites).tolist()))\n"
    )
    runs = [subprocess.run([sys.executable, "-c", code], capture_output=True, text=True, check=True,
                           cwd=str(__import__('pathlib').Path(__file__).parents[1])).stdout for _ in range(2)]
    assert runs[0] == runs[1]
    idx = json.loads(runs[0])
    assert len(set(idx)) == 3


@given(st.integers(0, 10**6), st.integers(1, 3))
def test_translation_invariant_env_is_doubly_stochastic(seed, d):
    jd = random_periodic(np.random.default_rng(seed), d, (1,) * d).table[0]
    assert check_doubly_stochastic(homogeneous(jd), 3).ok


class TestDecay:
    def test_srw_ok(self):
        assert check_decay(simple_random_walk(1), 1.0, 1.0, 3).ok

    def test_long_jump_violation(self):
        env = homogeneous(J({(3,): 0.5, (-1,): 0.5}))
        rep = check_decay(env, 1.0, 1.0, 2)
        assert not rep.ok
        assert rep.worst_displacement == (3,)
        assert rep.worst_ratio == pytest.approx(0.5 / 3**-2)

    @given(st.integers(0, 1000), st.integers(1, 6))
    def test_periodic_window_independent(self, seed, r):
        env = random_periodic(np.random.default_rng(seed), 2, (3, 2), span=3)
        a = check_decay(env, 0.5, 1.0, r)
        b = check_decay(env, 0.5, 1.0, max(env.extents))
        assert (a.ok, a.worst_site, a.worst_displacement, a.worst_ratio) == (b.ok, b.worst_site, b.worst_displacement, b.worst_ratio)


def brute_incoming(table, L, y, reach=3):
    """Incoming mass at y on Z, summing explicitly over sources y - reach .. y + reach."""
    total = 0.0
    for x in range(y - reach, y + reach + 1):
        total += table[x % L].prob((y - x,))
    return total


class TestDoublyStochastic:
    def test_srw(self):
        for d in (1, 2, 3):
            rep = check_doubly_stochastic(simple_random_walk(d), 2)
            assert rep.ok
            np.testing.assert_allclose(rep.per_site_incoming_mass, 1.0)

    def test_column_ab_aba(self):
        env = column_ab_periodic("ABA" + "B" * 3, 1)
        rep = check_doubly_stochastic(env, 1)
        assert not rep.ok
        # B column between two A columns: 1/2 + 1/2 horizontally + 1/2 + 1/2 vertically
        assert rep.per_site_incoming_mass[1] == pytest.approx(2.0)
        assert (1, 0) in rep.failing_sites

    def test_column_ab_random_field(self):
        env = ColumnAB(prob_A=0.5, master_seed=11)
        rep = check_doubly_stochastic(env, 6)
        assert not rep.ok
        labels = [env.column_label(j) for j in range(-7, 8)]
        for i, j in enumerate(range(-6, 7)):
            if labels[i] == "A" and labels[i + 1] == "B" and labels[i + 2] == "A":
                assert (j, 0) in rep.failing_sites

    def test_two_site_torus_against_brute_force(self):
        env = biased_pair()
        rep = check_doubly_stochastic(env, 1)
        expected = [brute_incoming(env.table, 2, y) for y in (0, 1)]
        np.testing.assert_allclose(rep.per_site_incoming_mass, expected, atol=1e-15)
        assert rep.ok == all(abs(m - 1) <= 1e-10 for m in expected)
        assert rep.ok

    def test_window_too_small(self):
        env = SeededIID(1, family=(J({(3,): 0.5, (-3,): 0.5}),), weights=(1.0,), master_seed=1)
        with pytest.raises(WindowError):
            check_doubly_stochastic(env, 2)

    def test_labeled_srw_window(self):
        assert check_doubly_stochastic(labeled_srw(2, 5), 4).ok


class TestZeroDrift:
    def test_srw(self):
        assert check_zero_drift(simple_random_walk(2), 2).ok

    def test_biased(self):
        rep = check_zero_drift(homogeneous(J({(1,): 0.7, (-1,): 0.3})), 2)
        assert not rep.ok
        assert rep.max_drift_norm == pytest.approx(0.4)

    def test_column_ab(self):
        assert check_zero_drift(ColumnAB(master_seed=3), 5).ok


class TestNondeterministic:
    def test_srw(self):
        assert check_nondeterministic(simple_random_walk(2), 2).ok

    def test_point_mass_flagged(self):
        env = Periodic(1, extents=(3,), table=(J({(1,): 1.0}), simple_random_walk_law(1), simple_random_walk_law(1)))
        rep = check_nondeterministic(env, 2)
        assert not rep.ok
        assert rep.deterministic_sites == [(0,)]

    def test_column_ab(self):
        assert check_nondeterministic(ColumnAB(master_seed=3), 4).ok


class TestJson:
    @given(st.integers(0, 10**6))
    def test_round_trip_periodic(self, seed):
        gen = np.random.default_rng(seed)
        for env in (random_periodic(gen, 2, (2, 3)), random_rational_periodic(gen, 1, (3,))):
            doc = env_to_json(env)
            back = env_from_json(json.loads(json.dumps(doc)))
            assert back == env
            assert env_to_json(back) == doc

    def test_round_trip_other_kinds(self):
        for env in (random_iid(3), labeled_srw(2, 9), ColumnAB(prob_A=0.3, master_seed=5), shift(ColumnAB(), (2, 1))):
            assert env_from_json(json.loads(json.dumps(env_to_json(env)))) == env

    def test_exact_strings(self):
        doc = {"dim": 1, "kind": "periodic", "extents": [1], "table": [[[[1], "1/3"], [[-1], "2/3"]]]}
        env = env_from_json(doc)
        assert env.is_exact
        assert env_to_json(env)["table"][0] == [[[-1], "2/3"], [[1], "1/3"]]

    @pytest.mark.parametrize("doc", [
        {"kind": "periodic"},
        {"dim": 1, "kind": "torus"},
        {"dim": 1, "kind": "periodic", "extents": [2], "table": [[[[1], 1.0]]]},
        {"dim": 1, "kind": "periodic", "extents": [1], "table": [[[[1, 0], 1.0]]]},
        {"dim": 1, "kind": "periodic", "extents": [1], "table": [[[[1], 0.6], [[-1], 0.6]]]},
        {"dim": 2, "kind": "column_ab", "prob_A": 1.5, "seed": 1},
    ])
    def test_malformed(self, doc):
        with pytest.raises(SchemaError):
            env_from_json(doc)
