import math

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given
from hypothesis import strategies as st
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from rwre.env_model import ColumnAB, JumpDistribution, Periodic, column_ab_periodic, homogeneous, simple_random_walk
from rwre.evp_exact import (
    ContractError,
    UnsupportedEnvironment,
    build_evp_chain,
    exact_diffusion_matrix,
    exact_entropy_rate,
    exact_velocity,
    power_iteration_stationary,
    radon_nikodym,
    reachable_from,
    stationary_distribution,
    strongly_connected_components,
    transitivity_report,
    verify_steady_state_identity,
)
from rwre.generators import (
    absorbing_chain_1d,
    doubly_stochastic_2d,
    martingale_2d,
    mixed_steps_1d,
    random_periodic,
    two_entropy_1d,
)

J = JumpDistribution.from_dict
PAIR = Periodic(1, extents=(2,), table=(J({(1,): 0.7, (-1,): 0.3}), J({(1,): 0.3, (-1,): 0.7})))


def eig_stationary(M):
    """Left Perron vector via a dense eigensolver, as an oracle independent of the solver under test."""
    vals, vecs = scipy.linalg.eig(M.T)
    v = np.real(vecs[:, np.argmin(np.abs(vals - 1))])
    return v / v.sum()


class TestChain:
    def test_srw_circulant(self):
        M = build_evp_chain(Periodic(1, extents=(4,), table=(simple_random_walk(1).classes[0],) * 4)).matrix
        expected = 0.5 * (np.roll(np.eye(4), 1, axis=1) + np.roll(np.eye(4), -1, axis=1))
        np.testing.assert_array_equal(M, expected)

    def test_single_site(self):
        np.testing.assert_array_equal(build_evp_chain(simple_random_walk(2)).matrix, [[1.0]])

    def test_pair_swap(self):
        np.testing.assert_array_equal(build_evp_chain(PAIR).matrix, [[0, 1], [1, 0]])

    def test_non_periodic_rejected(self):
        with pytest.raises(UnsupportedEnvironment):
            build_evp_chain(ColumnAB())

    @given(st.integers(0, 10**6), st.integers(1, 2))
    def test_row_and_column_sums(self, seed, d):
        env = random_periodic(np.random.default_rng(seed), d, (3,) * d)
        M = build_evp_chain(env).matrix
        assert (M >= 0).all()
        np.testing.assert_allclose(M.sum(axis=1), 1.0, atol=1e-12)

    @pytest.mark.parametrize("make", [doubly_stochastic_2d, martingale_2d, mixed_steps_1d, two_entropy_1d])
    def test_doubly_stochastic_columns(self, make):
        np.testing.assert_allclose(build_evp_chain(make()).matrix.sum(axis=0), 1.0, atol=1e-10)


class TestStationary:
    def test_pair(self):
        np.testing.assert_allclose(stationary_distribution(build_evp_chain(PAIR)).weights, [0.5, 0.5])

    @pytest.mark.parametrize("make", [doubly_stochastic_2d, martingale_2d, mixed_steps_1d, two_entropy_1d])
    def test_doubly_stochastic_uniform(self, make):
        pi = stationary_distribution(build_evp_chain(make()))
        np.testing.assert_allclose(pi.weights, 1.0 / len(pi.weights), atol=1e-12)
        np.testing.assert_allclose(radon_nikodym(pi), 1.0, atol=1e-10)

    def test_l3_against_eigen_oracle(self):
        env = random_periodic(np.random.default_rng(3), 1, (3,))
        chain = build_evp_chain(env)
        pi = stationary_distribution(chain)
        np.testing.assert_allclose(pi.weights, eig_stationary(chain.matrix), atol=1e-12)
        np.testing.assert_allclose(power_iteration_stationary(chain.matrix), pi.weights, atol=1e-9)

    @given(st.integers(0, 10**6), st.integers(1, 2))
    def test_direct_vs_power(self, seed, d):
        gen = np.random.default_rng(seed)
        env = random_periodic(gen, d, tuple(int(v) for v in gen.integers(1, 7 if d == 1 else 4, size=d)))
        chain = build_evp_chain(env)
        pi = stationary_distribution(chain)
        assert not pi.reducible
        assert np.max(np.abs(pi.weights - power_iteration_stationary(chain.matrix))) <= 1e-9
        assert verify_steady_state_identity(chain, pi) <= 1e-10
        assert radon_nikodym(pi).min() >= 1e-9

    def test_reducible_absorption(self):
        chain = build_evp_chain(absorbing_chain_1d())
        pi = stationary_distribution(chain)
        assert pi.reducible
        np.testing.assert_array_equal(pi.weights[:2], 0.0)
        assert pi.weights[2:].sum() == pytest.approx(1.0)
        assert verify_steady_state_identity(chain, pi) <= 1e-10
        rn = radon_nikodym(pi)
        assert (rn[:2] == 0).all() and (rn[2:] > 0).all()

    def test_reducible_two_closed_classes(self):
        # column_ab "ABAB": from column 0 the walk is absorbed in column 1 or 3 with equal probability
        chain = build_evp_chain(column_ab_periodic("ABAB", 2))
        pi = stationary_distribution(chain)
        assert pi.reducible
        by_col = pi.weights.reshape(4, 2).sum(axis=1)
        np.testing.assert_allclose(by_col, [0, 0.5, 0, 0.5], atol=1e-12)


class TestSteadyStateIdentity:
    def test_valid_pairs(self):
        for env in (PAIR, doubly_stochastic_2d(), random_periodic(np.random.default_rng(9), 2, (3, 2))):
            chain = build_evp_chain(env)
            assert verify_steady_state_identity(chain, stationary_distribution(chain)) <= 1e-10

    def test_single_site_exact_zero(self):
        chain = build_evp_chain(homogeneous(J({(1,): 0.6, (-2,): 0.4})))
        assert verify_steady_state_identity(chain, stationary_distribution(chain)) == 0.0

    def test_perturbed_fixture(self):
        # SRW on Z/4, uniform + 0.01 at site 0: residual 0.01 at site 0, 0.005 at its neighbours
        env = Periodic(1, extents=(4,), table=(simple_random_walk(1).classes[0],) * 4)
        chain = build_evp_chain(env)
        w = np.full(4, 0.25)
        w[0] += 0.01
        assert verify_steady_state_identity(chain, w) == pytest.approx(0.01, abs=1e-15)

    @given(st.integers(0, 10**6))
    def test_matches_matrix_residual(self, seed):
        gen = np.random.default_rng(seed)
        chain = build_evp_chain(random_periodic(gen, 2, (2, 3)))
        w = gen.dirichlet(np.ones(chain.n))
        assert verify_steady_state_identity(chain, w) == pytest.approx(np.max(np.abs(w @ chain.matrix - w)), abs=1e-14)


class TestVelocityAndDiffusion:
    def test_zero_drift(self):
        env = martingale_2d()
        np.testing.assert_allclose(exact_velocity(env, stationary_distribution(build_evp_chain(env))), 0.0, atol=1e-15)

    def test_biased(self):
        env = homogeneous(J({(1,): 0.7, (-1,): 0.3}))
        assert exact_velocity(env, stationary_distribution(build_evp_chain(env)))[0] == pytest.approx(0.4)

    def test_two_entropy_velocity(self):
        env = two_entropy_1d()
        assert exact_velocity(env, stationary_distribution(build_evp_chain(env)))[0] == pytest.approx(0.2)

    def test_srw_diffusion(self):
        np.testing.assert_allclose(exact_diffusion_matrix(simple_random_walk(2)), 0.5 * np.eye(2))
        np.testing.assert_allclose(exact_diffusion_matrix(simple_random_walk(1)), [[1.0]])

    def test_frozen_values(self):
        np.testing.assert_allclose(exact_diffusion_matrix(martingale_2d()), [[1.7, 0.2], [0.2, 0.9]], atol=1e-12)
        np.testing.assert_allclose(exact_diffusion_matrix(mixed_steps_1d()), [[4.3]], atol=1e-12)

    def test_contract_errors(self):
        with pytest.raises(ContractError, match="zero_drift"):
            exact_diffusion_matrix(homogeneous(J({(1,): 0.7, (-1,): 0.3})))
        with pytest.raises(ContractError, match="doubly_stochastic"):
            exact_diffusion_matrix(random_periodic(np.random.default_rng(1), 1, (3,)))

    @given(st.integers(0, 10**6))
    def test_symmetric_psd(self, seed):
        gen = np.random.default_rng(seed)
        jd = random_periodic(gen, 2, (1, 1)).table[0]
        sym = JumpDistribution.from_pairs([(y, p / 2) for y, p in zip(jd.displacements, jd.probs)]
                                          + [(tuple(-c for c in y), p / 2) for y, p in zip(jd.displacements, jd.probs)])
        C = exact_diffusion_matrix(homogeneous(sym))
        assert np.max(np.abs(C - C.T)) <= 1e-14
        assert np.linalg.eigvalsh(C).min() >= -1e-12


class TestEntropyRate:
    def test_srw(self):
        for d in (1, 2, 3):
            env = simple_random_walk(d)
            assert exact_entropy_rate(env, None) == pytest.approx(math.log(2 * d))

    def test_two_entropy(self):
        env = two_entropy_1d()
        pi = stationary_distribution(build_evp_chain(env))
        h07 = -0.7 * math.log(0.7) - 0.3 * math.log(0.3)
        assert exact_entropy_rate(env, pi) == pytest.approx(0.5 * math.log(2) + 0.5 * h07)

    def test_deterministic_absorbing_site(self):
        env = Periodic(1, extents=(2,), table=(J({(2,): 1.0}), simple_random_walk(1).classes[0]))
        pi = stationary_distribution(build_evp_chain(env))
        np.testing.assert_array_equal(pi.weights, [1.0, 0.0])
        assert exact_entropy_rate(env, pi) == 0.0


def scipy_sccs(adj):
    n = len(adj)
    rows = [i for i, out in enumerate(adj) for _ in out]
    cols = [j for out in adj for j in out]
    g = csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
    _, labels = connected_components(g, directed=True, connection="strong")
    groups = {}
    for v, lab in enumerate(labels):
        groups.setdefault(lab, []).append(v)
    return sorted(sorted(c) for c in groups.values())


class TestGraph:
    @given(st.integers(1, 40), st.floats(0.0, 0.3), st.integers(0, 10**6))
    def test_scc_against_scipy(self, n, density, seed):
        gen = np.random.default_rng(seed)
        adj = [list(np.nonzero(gen.random(n) < density)[0]) for _ in range(n)]
        assert sorted(sorted(c) for c in strongly_connected_components(adj)) == scipy_sccs(adj)

    def test_scc_long_path_no_recursion_limit(self):
        n = 20000
        adj = [[i + 1] for i in range(n - 1)] + [[0]]
        assert len(strongly_connected_components(adj)) == 1

    @given(st.integers(0, 10**6))
    def test_reachability_monotone(self, seed):
        gen = np.random.default_rng(seed)
        n = 12
        adj = [list(np.nonzero(gen.random(n) < 0.15)[0]) for _ in range(n)]
        prev = set()
        for h in range(0, n + 3):
            cur = reachable_from(adj, 0, h)
            assert prev <= cur
            prev = cur
        assert reachable_from(adj, 0, n) == reachable_from(adj, 0)


class TestTransitivity:
    def test_srw_torus(self):
        env = Periodic(2, extents=(3, 3), table=(simple_random_walk(2).classes[0],) * 9)
        rep = transitivity_report(env)
        assert rep.transitive
        assert len(rep.sccs) == 1
        assert rep.proper_sinks == []
        assert len(rep.reachable) == 9

    @pytest.mark.parametrize("height", [1, 2, 5])
    def test_column_ab(self, height):
        rep = transitivity_report(column_ab_periodic("ABAB", height))
        assert not rep.transitive
        cols = sorted({x[0] for x in s} for s in rep.sinks)
        assert [sorted(c) for c in cols] == [[1], [3]]
        for s in rep.sinks:
            assert len(s) == height

    def test_absorbing_pair(self):
        rep = transitivity_report(absorbing_chain_1d())
        assert rep.sinks == [[(2,), (3,)]]
        assert rep.proper_sinks == [[(2,), (3,)]]
        # every site is reached from 0 before absorption, so reachability alone still holds
        assert rep.transitive

    def test_horizon_truncation(self):
        env = Periodic(1, extents=(6,), table=(J({(1,): 0.9, (0,): 0.1}),) * 6)
        assert not transitivity_report(env, horizon=2).transitive
        assert transitivity_report(env, horizon=5).transitive

    def test_custom_generators(self):
        # only even sites are reachable, which is all that generator 2 asks for
        env = Periodic(1, extents=(4,), table=(J({(2,): 0.5, (-2,): 0.5}),) * 4)
        assert not transitivity_report(env).transitive
        assert transitivity_report(env, generators=[(2,)]).transitive

    def test_json(self):
        doc = transitivity_report(absorbing_chain_1d()).to_json()
        assert doc["sinks"] == [[[2], [3]]]
