"""Estimators: direct MC, SNIS reuse, coefficients, surrogates, two-stage."""

import math

import numpy as np
import pytest

import oracles
from priorder import (
    ChainConfig,
    OrderParams,
    PriorityGraph,
    SoftPriority,
    SumOfRaceGame,
    SumOfUnanimityGame,
    ValidationError,
    combine_replicates,
    direct_mc,
    dp_pairwise_probs,
    draw_proposal_subsets,
    ess,
    estimate_coefficients,
    exact_value,
    fit_surrogate,
    hybrid_estimate,
    marginal_contributions,
    run_chain,
    snis_estimate,
    snis_weights,
    surrogate_value,
    two_stage_estimate,
)
from priorder.games import singleton_linear_game
from priorder.sampler import SampleBatch


def cardinality_game(n):
    return singleton_linear_game(n, np.ones(n))


class TestMarginalContributions:
    def test_cardinality_game(self):
        rng = np.random.default_rng(0)
        game = cardinality_game(5)
        for _ in range(3):
            assert np.array_equal(marginal_contributions(rng.permutation(5), game), np.ones(5))

    def test_unanimity_pays_last(self):
        game = SumOfUnanimityGame(3, [([0, 1], 1.0)])
        assert np.array_equal(marginal_contributions([0, 1, 2], game), [0.0, 1.0, 0.0])

    def test_race_pays_first(self):
        game = SumOfRaceGame(3, [([0, 1], 1.0)])
        assert np.array_equal(marginal_contributions([0, 1, 2], game), [1.0, 0.0, 0.0])

    def test_telescoping(self):
        rng = np.random.default_rng(1)
        n = 6
        terms = [(list(rng.choice(n, size=2, replace=False)), 1.5) for _ in range(4)]
        game = SumOfUnanimityGame(n, terms)
        delta = marginal_contributions(rng.permutation(n), game)
        assert delta.sum() == pytest.approx(game.evaluate((1 << n) - 1), rel=1e-12)


class TestDirectMC:
    def test_exact_on_cardinality_game(self):
        rng = np.random.default_rng(2)
        p = oracles.random_params(rng, 5)
        batch = run_chain(p, ChainConfig(n_samples=50, burn_in=20, thinning=2, seed=3))
        est = direct_mc(batch, cardinality_game(5))
        assert np.array_equal(est.values, np.ones(5))

    def test_empty_batch_rejected(self):
        batch = SampleBatch(np.empty((0, 3), dtype=np.int64), np.empty(0), "")
        with pytest.raises(ValidationError):
            direct_mc(batch, cardinality_game(3))


class TestSnisWeights:
    def test_identical_targets_give_unit_weights(self):
        rng = np.random.default_rng(4)
        p = oracles.random_params(rng, 5)
        batch = run_chain(p, ChainConfig(n_samples=100, burn_in=50, thinning=1, seed=5))
        w = snis_weights(p, p, batch)
        assert np.all(w == 1.0)

    def test_common_scale_gives_equal_weights(self):
        rng = np.random.default_rng(6)
        p = oracles.random_params(rng, 5)
        scaled = OrderParams(p.graph, SoftPriority(p.soft.lam * 3.0))
        batch = run_chain(p, ChainConfig(n_samples=50, burn_in=20, thinning=1, seed=7))
        w = snis_weights(p, scaled, batch)
        assert np.allclose(w, w[0], rtol=1e-10)

    def test_dimension_mismatch(self):
        rng = np.random.default_rng(8)
        p5, p4 = oracles.random_params(rng, 5), oracles.random_params(rng, 4)
        batch = run_chain(p5, ChainConfig(n_samples=10, burn_in=5, thinning=1, seed=9))
        with pytest.raises(ValidationError, match="dimension mismatch"):
            snis_weights(p5, p4, batch)

    def test_wrong_origin_rejected(self):
        rng = np.random.default_rng(10)
        p, q = oracles.random_params(rng, 4), oracles.random_params(rng, 4)
        batch = run_chain(p, ChainConfig(n_samples=10, burn_in=5, thinning=1, seed=11))
        with pytest.raises(ValidationError, match="fingerprint"):
            snis_weights(q, p, batch)


class TestEss:
    def test_equal_weights(self):
        assert ess([1.0, 1.0, 1.0, 1.0]) == pytest.approx(4.0, rel=1e-12)

    def test_single_atom(self):
        assert ess([1.0, 0.0, 0.0]) == pytest.approx(1.0, rel=1e-12)

    def test_mixed(self):
        assert ess([1.0, 1.0, 2.0]) == pytest.approx(16 / 6, rel=1e-12)

    def test_all_zero_rejected(self):
        with pytest.raises(ValidationError):
            ess([0.0, 0.0])

    def test_scale_invariant(self):
        rng = np.random.default_rng(12)
        w = rng.uniform(0.1, 2.0, 50)
        assert ess(w) == pytest.approx(ess(w * 123.4), rel=1e-12)


class TestSnisEstimate:
    def test_equal_weights_reduce_to_direct(self):
        rng = np.random.default_rng(13)
        p = oracles.random_params(rng, 5)
        game = SumOfUnanimityGame(5, [([0, 4], 1.0)])
        batch = run_chain(p, ChainConfig(n_samples=200, burn_in=50, thinning=1, seed=14))
        w = snis_weights(p, p, batch)
        assert np.array_equal(snis_estimate(w, batch, game).values, direct_mc(batch, game).values)

    def test_weights_do_not_matter_for_cardinality_game(self):
        rng = np.random.default_rng(15)
        p = oracles.random_params(rng, 4)
        batch = run_chain(p, ChainConfig(n_samples=50, burn_in=20, thinning=1, seed=16))
        w = rng.uniform(0.1, 3.0, len(batch))
        assert np.allclose(snis_estimate(w, batch, cardinality_game(4)).values, 1.0, atol=1e-12)

    def test_small_step_matches_exact_within_3se(self):
        rng = np.random.default_rng(17)
        n = 8
        omega = np.where(rng.random((n, n)) < 0.4, rng.uniform(0.2, 1.5, (n, n)), 0.0)
        np.fill_diagonal(omega, 0.0)
        old = OrderParams(PriorityGraph(omega, 1.0), SoftPriority(np.ones(n)))
        new = OrderParams(PriorityGraph(omega, 1.2), SoftPriority(np.ones(n)))
        terms = [(list(rng.choice(n, size=3, replace=False)), 1.0) for _ in range(5)]
        game = SumOfUnanimityGame(n, terms)
        target = exact_value(new, game)
        reps = []
        for r in range(25):
            batch = run_chain(old, ChainConfig(n_samples=600, burn_in=400, thinning=2, seed=100 + r))
            w = snis_weights(old, new, batch)
            reps.append(snis_estimate(w, batch, game).values)
        reps = np.array(reps)
        se = reps.std(axis=0, ddof=1) / math.sqrt(len(reps))
        z = np.abs(reps.mean(axis=0) - target) / np.maximum(se, 1e-12)
        assert z.max() <= 3.0

    def test_rescaled_sums_recover_self_normalized_form(self):
        # scaling the plain weighted sums to total efficiency reproduces the
        # self-normalized estimate
        rng = np.random.default_rng(18)
        p = oracles.random_params(rng, 5)
        q = OrderParams(PriorityGraph(p.graph.omega, p.graph.beta + 0.3), p.soft)
        game = SumOfUnanimityGame(5, [([1, 2], 1.0), ([0], 0.5)])
        batch = run_chain(p, ChainConfig(n_samples=300, burn_in=100, thinning=1, seed=19))
        w = snis_weights(p, q, batch)
        from priorder.estimators import _delta_matrix

        deltas = _delta_matrix(batch.samples, game)
        unnormalized = (w @ deltas) / len(batch)
        total = game.evaluate(0b11111) - game.evaluate(0)
        rescaled = unnormalized * (total / unnormalized.sum())
        assert np.allclose(rescaled, snis_estimate(w, batch, game).values, rtol=1e-12)


class TestHybrid:
    def test_no_fresh_reduces_to_snis(self):
        rng = np.random.default_rng(20)
        p = oracles.random_params(rng, 4)
        game = SumOfUnanimityGame(4, [([0, 1], 1.0)])
        batch = run_chain(p, ChainConfig(n_samples=100, burn_in=50, thinning=1, seed=21))
        w = rng.uniform(0.5, 2.0, len(batch))
        est = hybrid_estimate((w, batch), None, game)
        assert np.array_equal(est.values, snis_estimate(w, batch, game).values)

    def test_no_reused_reduces_to_direct(self):
        rng = np.random.default_rng(22)
        p = oracles.random_params(rng, 4)
        game = SumOfUnanimityGame(4, [([2, 3], 1.0)])
        fresh = run_chain(p, ChainConfig(n_samples=100, burn_in=50, thinning=1, seed=23))
        est = hybrid_estimate(None, fresh, game)
        assert np.array_equal(est.values, direct_mc(fresh, game).values)

    def test_both_empty_rejected(self):
        with pytest.raises(ValidationError):
            hybrid_estimate(None, None, cardinality_game(3))

    def test_identical_targets_within_3se_of_exact(self):
        rng = np.random.default_rng(24)
        n = 6
        p = oracles.random_params(rng, n, beta=0.8)
        game = SumOfUnanimityGame(n, [([0, 1, 2], 1.0), ([3], 1.0)])
        target = exact_value(p, game)
        reps = []
        for r in range(20):
            reused = run_chain(p, ChainConfig(n_samples=300, burn_in=200, thinning=2, seed=300 + r))
            fresh = run_chain(p, ChainConfig(n_samples=300, burn_in=200, thinning=2, seed=900 + r))
            w = snis_weights(p, p, reused)
            reps.append(hybrid_estimate((w, reused), fresh, game).values)
        reps = np.array(reps)
        se = reps.std(axis=0, ddof=1) / math.sqrt(len(reps))
        z = np.abs(reps.mean(axis=0) - target) / np.maximum(se, 1e-12)
        assert z.max() <= 3.0


class TestEfficiency:
    def test_all_estimators_telescope(self):
        rng = np.random.default_rng(25)
        for _ in range(5):
            n = int(rng.integers(3, 7))
            p = oracles.random_params(rng, n)
            q = OrderParams(PriorityGraph(p.graph.omega, p.graph.beta + 0.2), p.soft)
            terms = [
                (list(rng.choice(n, size=int(rng.integers(1, n + 1)), replace=False)),
                 float(rng.uniform(0.5, 2)))
                for _ in range(5)
            ]
            game = SumOfUnanimityGame(n, terms)
            total = game.evaluate((1 << n) - 1) - game.evaluate(0)
            batch = run_chain(p, ChainConfig(n_samples=150, burn_in=80, thinning=1, seed=26))
            fresh = run_chain(q, ChainConfig(n_samples=80, burn_in=80, thinning=1, seed=27))
            w = snis_weights(p, q, batch)
            for est in (
                direct_mc(batch, game),
                snis_estimate(w, batch, game),
                hybrid_estimate((w, batch), fresh, game),
            ):
                assert est.values.sum() == pytest.approx(total, rel=1e-9)
            assert exact_value(p, game).sum() == pytest.approx(total, rel=1e-12)


class TestCoefficients:
    def test_two_player_hand_example(self):
        coeffs = estimate_coefficients(np.array([[0, 1], [1, 0]]))
        assert coeffs.rho_hat[(0, 0b01)] == pytest.approx(0.5)
        assert coeffs.rho_hat[(1, 0b01)] == pytest.approx(-0.5)
        assert coeffs.eta_hat[0, 1] == pytest.approx(0.5)

    def test_entries_bounded(self):
        rng = np.random.default_rng(28)
        orders = np.stack([rng.permutation(5) for _ in range(100)])
        coeffs = estimate_coefficients(orders)
        vals = np.array(list(coeffs.rho_hat.values()))
        assert np.all(np.abs(vals) <= 1.0)

    def test_positive_parts_are_prefix_frequencies(self):
        rng = np.random.default_rng(29)
        orders = np.stack([rng.permutation(4) for _ in range(200)])
        coeffs = estimate_coefficients(orders)
        for i in range(4):
            pos_sum = sum(v for (j, _), v in coeffs.rho_hat.items() if j == i and v > 0)
            neg_sum = sum(-v for (j, _), v in coeffs.rho_hat.items() if j == i and v < 0)
            assert pos_sum == pytest.approx(1.0, rel=1e-12)
            assert neg_sum == pytest.approx(1.0, rel=1e-12)

    def test_eta_complementary(self):
        rng = np.random.default_rng(30)
        orders = np.stack([rng.permutation(6) for _ in range(50)])
        eta = estimate_coefficients(orders).eta_hat
        iu, ju = np.triu_indices(6, k=1)
        assert np.allclose(eta[iu, ju] + eta[ju, iu], 1.0, atol=1e-12)
        assert np.all(np.diagonal(eta) == 0)

    def test_uniform_orders_approach_classical_weights(self):
        rng = np.random.default_rng(31)
        n = 4
        orders = np.argsort(rng.random((150000, n)), axis=1)
        coeffs = estimate_coefficients(orders)
        for (i, mask), v in coeffs.rho_hat.items():
            s = bin(mask).count("1")
            if (mask >> i) & 1:
                expected = math.factorial(s - 1) * math.factorial(n - s) / math.factorial(n)
            else:
                expected = -math.factorial(s) * math.factorial(n - s - 1) / math.factorial(n)
            assert v == pytest.approx(expected, abs=0.01)

    def test_support_is_observed_prefixes(self):
        orders = np.array([[2, 0, 1]])
        coeffs = estimate_coefficients(orders)
        assert set(coeffs.support) == {0, 0b100, 0b101, 0b111}


class TestSurrogate:
    def _coeffs(self, rng, n=4):
        orders = np.stack([rng.permutation(n) for _ in range(400)])
        return estimate_coefficients(orders)

    def test_linear_game_recovered_exactly(self):
        rng = np.random.default_rng(32)
        coeffs = self._coeffs(rng)
        a = np.array([1.0, 2.0, 3.0, 4.0])
        game = singleton_linear_game(4, a)
        train = [(m, game.evaluate(m)) for m in coeffs.support]
        model = fit_surrogate(train, coeffs, kind="linear")
        assert np.abs(model.a - a).max() <= 1e-8
        resid = max(abs(model.predict(m) - game.evaluate(m)) for m in coeffs.support)
        assert resid <= 1e-8

    def test_quadratic_recovers_interaction(self):
        rng = np.random.default_rng(33)
        coeffs = self._coeffs(rng, n=3)
        game = SumOfUnanimityGame(3, [([0, 1], 1.0)])
        train = [(m, game.evaluate(m)) for m in coeffs.support]
        model = fit_surrogate(train, coeffs, kind="quadratic", interactions=[(0, 1)])
        assert model.b[(0, 1)] == pytest.approx(1.0, abs=1e-6)
        assert np.abs(model.a).max() <= 1e-6

    def test_zero_interaction_fraction_equals_linear(self):
        rng = np.random.default_rng(34)
        coeffs = self._coeffs(rng)
        game = SumOfUnanimityGame(4, [([0, 1], 1.0)])
        train = [(m, game.evaluate(m)) for m in coeffs.support]
        lin = fit_surrogate(train, coeffs, kind="linear")
        quad = fit_surrogate(train, coeffs, kind="quadratic", interaction_fraction=0.0)
        assert np.array_equal(lin.a, quad.a)
        assert quad.b == {}

    def test_degenerate_design_reported(self):
        rng = np.random.default_rng(35)
        coeffs = self._coeffs(rng)
        train = [(0b0001, 1.0), (0b0001, 1.0)]
        model = fit_surrogate(train, coeffs, kind="linear")
        assert model.meta["rank_deficient"] is True

    def test_train_mask_outside_support_rejected(self):
        coeffs = estimate_coefficients(np.array([[0, 1, 2]]))
        with pytest.raises(ValidationError, match="support"):
            fit_surrogate([(0b110, 1.0)], coeffs, kind="linear")


class TestSurrogateValue:
    def test_linear_returns_additive_part(self):
        model_a = np.array([0.5, 1.5, -0.2])
        from priorder.estimators import SurrogateModel

        model = SurrogateModel("linear", model_a, {})
        assert np.array_equal(surrogate_value(model), model_a)

    def test_uniform_order_pair_interaction_splits(self):
        from priorder.estimators import SurrogateModel

        eta = np.full((4, 4), 0.5)
        np.fill_diagonal(eta, 0.0)
        model = SurrogateModel("quadratic", np.zeros(4), {(0, 1): 1.0})
        psi = surrogate_value(model, eta)
        assert np.allclose(psi, [0.5, 0.5, 0.0, 0.0])

    def test_quadratic_needs_eta(self):
        from priorder.estimators import SurrogateModel

        model = SurrogateModel("quadratic", np.zeros(3), {(0, 1): 1.0})
        with pytest.raises(ValidationError):
            surrogate_value(model)

    def test_quadratic_model_matches_exact_value(self):
        # random quadratic game, exact pairwise orders: closed form is exact
        rng = np.random.default_rng(36)
        n = 6
        p = oracles.random_params(rng, n, beta=0.7)
        a = rng.normal(size=n)
        pairs = {(i, j): float(rng.normal()) for i in range(n) for j in range(i + 1, n) if rng.random() < 0.4}

        class Quad:
            def __init__(self):
                self.n = n

            def evaluate(self, mask):
                val = sum(a[i] for i in range(n) if (mask >> i) & 1)
                for (i, j), b in pairs.items():
                    if (mask >> i) & 1 and (mask >> j) & 1:
                        val += b
                return val

        from priorder.estimators import SurrogateModel

        model = SurrogateModel("quadratic", a, pairs)
        eta = dp_pairwise_probs(p)
        assert np.abs(surrogate_value(model, eta) - exact_value(p, Quad())).max() <= 1e-8


class TestTwoStage:
    def test_realizable_game_needs_no_residual(self):
        rng = np.random.default_rng(37)
        p = oracles.random_params(rng, 4, beta=0.6)
        coeffs = oracles.exact_coefficients(p)
        a = np.array([0.3, 0.0, 1.1, 0.2])
        game = singleton_linear_game(4, a + 1e-12)  # strictly positive coefficients
        train = [(m, game.evaluate(m)) for m in coeffs.support]
        model = fit_surrogate(train, coeffs, kind="linear")
        est = two_stage_estimate(model, coeffs, [], game)
        assert np.abs(est.values - exact_value(p, game)).max() <= 1e-6

    def test_residual_draws_keep_exactness_on_realizable_games(self):
        rng = np.random.default_rng(38)
        p = oracles.random_params(rng, 5, beta=0.5)
        coeffs = oracles.exact_coefficients(p)
        game = SumOfUnanimityGame(5, [([1, 2], 1.5)])
        train = [(m, game.evaluate(m)) for m in coeffs.support]
        model = fit_surrogate(train, coeffs, kind="quadratic", interactions=[(1, 2)])
        draws = draw_proposal_subsets(coeffs, 200, np.random.default_rng(39))
        est = two_stage_estimate(model, coeffs, draws, game)
        assert np.abs(est.values - exact_value(p, game)).max() <= 1e-6

    def test_outside_support_rejected(self):
        coeffs = estimate_coefficients(np.array([[0, 1, 2]]))
        from priorder.estimators import SurrogateModel

        model = SurrogateModel("linear", np.zeros(3), {})
        with pytest.raises(ValidationError, match="support"):
            two_stage_estimate(model, coeffs, [0b010], cardinality_game(3))


class TestCombineReplicates:
    def test_mean_and_spread(self):
        from priorder.estimators import ValueEstimate

        reps = [ValueEstimate(np.array([1.0, 3.0])), ValueEstimate(np.array([3.0, 5.0]))]
        out = combine_replicates(reps)
        assert np.array_equal(out.values, [2.0, 4.0])
        assert np.allclose(out.std, np.sqrt(2.0))
