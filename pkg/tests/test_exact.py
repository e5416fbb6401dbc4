"""Exact oracles: enumeration, subset DP, normalizer, hard-temperature limits."""

import numpy as np
import pytest

import oracles
from priorder import (
    OrderParams,
    PriorityGraph,
    SizeLimitError,
    SoftPriority,
    SumOfUnanimityGame,
    dp_normalizer,
    dp_pairwise_probs,
    enumerate_pmf,
    exact_value,
    log_unnormalized_pmf_batch,
)
from priorder.exact import dp_pairwise_probs as dp_with_flag


def uniform_params(n):
    return OrderParams(PriorityGraph(np.zeros((n, n)), 0.0), SoftPriority(np.ones(n)))


class TestEnumeration:
    def test_uniform(self):
        pmf = enumerate_pmf(uniform_params(3))
        assert len(pmf) == 6
        assert all(p == pytest.approx(1 / 6, rel=1e-12) for p in pmf.values())

    def test_normalized(self):
        rng = np.random.default_rng(0)
        for _ in range(5):
            p = oracles.random_params(rng, int(rng.integers(2, 7)))
            pmf = enumerate_pmf(p)
            assert sum(pmf.values()) == pytest.approx(1.0, abs=1e-12)

    def test_matches_reference_pmf(self):
        rng = np.random.default_rng(1)
        for _ in range(5):
            p = oracles.random_params(rng, int(rng.integers(2, 6)), beta=1.0)
            ref = oracles.brute_pmf(p)
            pmf = enumerate_pmf(p)
            for order, prob in ref.items():
                assert pmf[order] == pytest.approx(prob, rel=1e-10)

    def test_guard(self):
        with pytest.raises(SizeLimitError):
            enumerate_pmf(uniform_params(11))

    def test_cycle_fixture_support_at_large_temperature(self):
        pmf = enumerate_pmf(oracles.cycle_fixture(beta=50.0))
        mass = sum(pmf[s] for s in oracles.CYCLE_FIXTURE_SUPPORT)
        assert mass >= 1 - 1e-6

    def test_cycle_fixture_limit_ratio(self):
        # the admissible-set law on the reduced graph differs from the true
        # limit by the factor 2*lam5/(lam3+lam5) = 1.25 on one support order
        p = oracles.cycle_fixture(beta=50.0)
        pmf = enumerate_pmf(p)
        lam = p.soft.lam
        identity = oracles.CYCLE_FIXTURE_SUPPORT[0]
        other = oracles.CYCLE_FIXTURE_SUPPORT[1]
        true_ratio = pmf[other] / pmf[identity]
        dag_ratio = oracles.dag_stage_unnorm(
            oracles.CYCLE_FIXTURE_REDUCED_EDGES, lam, other
        ) / oracles.dag_stage_unnorm(oracles.CYCLE_FIXTURE_REDUCED_EDGES, lam, identity)
        assert dag_ratio / true_ratio == pytest.approx(2 * lam[4] / (lam[2] + lam[4]), abs=1e-6)
        assert dag_ratio / true_ratio == pytest.approx(1.25, abs=1e-6)


class TestExactValue:
    def test_cardinality_game_gives_ones(self):
        rng = np.random.default_rng(2)
        game = SumOfUnanimityGame(5, [([i], 1.0) for i in range(5)])
        for _ in range(3):
            p = oracles.random_params(rng, 5)
            assert np.allclose(exact_value(p, game), np.ones(5), atol=1e-12)

    def test_pair_unanimity_symmetry(self):
        game = SumOfUnanimityGame(4, [([0, 1], 1.0)])
        psi = exact_value(uniform_params(4), game)
        assert np.allclose(psi, [0.5, 0.5, 0.0, 0.0], atol=1e-12)

    def test_block_game_splits_evenly(self):
        from priorder import scenario2_instance

        inst = scenario2_instance(4, 4, case=2, seed=0)
        psi = exact_value(inst.params, inst.game)
        assert np.allclose(psi, inst.target, atol=1e-10)

    def test_efficiency(self):
        rng = np.random.default_rng(3)
        for _ in range(5):
            n = int(rng.integers(2, 7))
            p = oracles.random_params(rng, n)
            terms = [(list(rng.choice(n, size=int(rng.integers(1, n + 1)), replace=False)),
                      float(rng.uniform(0.5, 2))) for _ in range(6)]
            game = SumOfUnanimityGame(n, terms)
            psi = exact_value(p, game)
            total = game.evaluate((1 << n) - 1) - game.evaluate(0)
            assert psi.sum() == pytest.approx(total, rel=1e-12)

    def test_matches_reference_values(self):
        rng = np.random.default_rng(4)
        p = oracles.random_params(rng, 5, beta=0.9)
        terms = [([0, 2], 1.0), ([1, 3, 4], 2.0), ([2], 0.5)]
        game = SumOfUnanimityGame(5, terms)
        ref = oracles.value_from_pmf(oracles.brute_pmf(p), game, 5)
        assert np.allclose(exact_value(p, game), ref, atol=1e-10)

    def test_hard_limit_matches_admissible_law(self):
        # at very large temperature a DAG instance follows the
        # admissible-set stage law on its linear extensions
        rng = np.random.default_rng(5)
        for trial in range(4):
            n = int(rng.integers(4, 8))
            edge_mask = np.triu(rng.random((n, n)) < 0.4, 1)
            omega = edge_mask * rng.uniform(0.5, 2.0, (n, n))
            lam = rng.uniform(0.5, 4.0, n)
            p = OrderParams(PriorityGraph(omega, 50.0), SoftPriority(lam))
            terms = [
                (list(rng.choice(n, size=int(rng.integers(1, n + 1)), replace=False)),
                 float(rng.uniform(0.5, 1.5)))
                for _ in range(6)
            ]
            game = SumOfUnanimityGame(n, terms)
            ref = oracles.dag_limit_value(edge_mask, lam, game, n)
            assert np.abs(exact_value(p, game) - ref).max() <= 1e-6

    def test_guard(self):
        game = SumOfUnanimityGame(11, [([0], 1.0)])
        with pytest.raises(SizeLimitError):
            exact_value(uniform_params(11), game)


class TestPairwiseDP:
    def test_uniform_is_half(self):
        P = dp_pairwise_probs(uniform_params(9))
        off = P[~np.eye(9, dtype=bool)]
        assert np.allclose(off, 0.5, atol=1e-12)

    def test_single_hard_edge(self):
        omega = np.zeros((3, 3))
        omega[0, 1] = 50.0
        p = OrderParams(PriorityGraph(omega, 1.0), SoftPriority(np.ones(3)))
        P = dp_pairwise_probs(p)
        assert P[0, 1] >= 1 - 1e-6

    def test_matches_enumeration(self):
        rng = np.random.default_rng(6)
        for _ in range(8):
            n = int(rng.integers(2, 8))
            p = oracles.random_params(
                rng, n, beta=float(rng.choice([0.0, 1.0, 5.0])), cyclic=bool(rng.random() < 0.5)
            )
            ref = oracles.pairwise_from_pmf(oracles.brute_pmf(p), n)
            assert np.abs(dp_pairwise_probs(p) - ref).max() <= 1e-10

    def test_matches_enumeration_on_scenario_regimes(self):
        # all four lam/weight regimes of both scenario families
        from priorder import scenario1_instance, scenario2_instance

        for case in (1, 2, 3, 4):
            for inst in (
                scenario1_instance(6, case=case, seed=case, num_terms=4),
                scenario2_instance(8, 4, case=case, seed=case),
            ):
                n = inst.params.n
                ref = oracles.pairwise_from_pmf(oracles.brute_pmf(inst.params), n)
                assert np.abs(dp_pairwise_probs(inst.params) - ref).max() <= 1e-10

    def test_complementarity_exact(self):
        rng = np.random.default_rng(7)
        p = oracles.random_params(rng, 7)
        P = dp_pairwise_probs(p)
        iu, ju = np.triu_indices(7, k=1)
        assert np.array_equal(P[iu, ju] + P[ju, iu], np.ones(iu.size))
        assert np.all(np.diagonal(P) == 0)

    def test_asymmetry_diagnostic_is_small(self):
        rng = np.random.default_rng(8)
        p = oracles.random_params(rng, 6)
        P, asym = dp_with_flag(p, with_asymmetry=True)
        assert asym <= 1e-10

    def test_soft_weight_scale_invariance(self):
        rng = np.random.default_rng(9)
        p = oracles.random_params(rng, 6)
        scaled = OrderParams(p.graph, SoftPriority(p.soft.lam * 7.7))
        assert np.abs(dp_pairwise_probs(p) - dp_pairwise_probs(scaled)).max() <= 1e-12

    def test_guard(self):
        with pytest.raises(SizeLimitError):
            dp_pairwise_probs(uniform_params(25))


class TestNormalizer:
    def test_single_player(self):
        assert dp_normalizer(uniform_params(1)) == pytest.approx(0.0, abs=1e-12)

    def test_uniform_total_mass(self):
        import math

        assert dp_normalizer(uniform_params(4)) == pytest.approx(math.log(24), rel=1e-12)

    def test_matches_enumeration_total(self):
        import itertools

        rng = np.random.default_rng(10)
        for _ in range(6):
            n = int(rng.integers(2, 8))
            p = oracles.random_params(rng, n, beta=float(rng.choice([0.0, 1.0, 5.0])))
            orders = np.array(list(itertools.permutations(range(n))))
            logs = log_unnormalized_pmf_batch(p, orders)
            m = logs.max()
            lse = m + np.log(np.exp(logs - m).sum())
            assert dp_normalizer(p) == pytest.approx(lse, rel=1e-10, abs=1e-10)

    def test_guard(self):
        with pytest.raises(SizeLimitError):
            dp_normalizer(uniform_params(25))
