import numpy as np
import pytest

from conftest import random_market
from decongest.config import LearnerConfig
from decongest.errors import InvalidArgumentError
from decongest.learner import (
    FitResult,
    MarketBatch,
    deploy,
    fit,
    gumbel_noise,
    mean_welfare,
    sample_relaxed_mask,
    soft_proxy,
    topk_mask,
)
from decongest.market import expected_welfare
from decongest.models import Market, Mask, MaskDistribution, PredictorWeights


def _two_feature_market() -> Market:
    # showing feature 0 spreads the users; feature 1 alone sends both to item 0
    B = np.array([[0.9, 0.6], [0.2, 0.6]])
    return Market(
        item_features=np.array([[0.5, 0.5], [0.1, 0.0]]),
        prices=np.array([0.2, 0.01]),
        user_features=B,
        preferences=B,
    )


def test_sharp_relaxed_mask_picks_top_perturbed_scores():
    dist = MaskDistribution(np.zeros(5), temperature=1.0)
    soft = sample_relaxed_mask(dist, 2, tau_topk=1e-3, noise=np.array([3.0, 0.0, 2.0, -1.0, 1.0]))
    np.testing.assert_allclose(soft.weights, [1, 0, 1, 0, 0], atol=1e-6)
    assert soft.weights.sum() == pytest.approx(2.0, abs=1e-6)


def test_relaxed_mask_edge_cardinalities():
    dist = MaskDistribution(np.array([0.3, -0.2, 1.0]))
    np.testing.assert_array_equal(sample_relaxed_mask(dist, 3, 0.2, noise_seed=0).weights, np.ones(3))
    np.testing.assert_array_equal(sample_relaxed_mask(dist, 0, 0.2, noise_seed=0).weights, np.zeros(3))
    with pytest.raises(InvalidArgumentError):
        sample_relaxed_mask(dist, 4, 0.2, noise_seed=0)


def test_relaxed_mask_stays_in_unit_box_and_sums_to_k():
    dist = MaskDistribution(np.random.default_rng(3).normal(size=6), temperature=2.0)
    for tau_topk in (0.2, 0.5, 1.0):
        for seed in range(20):
            w = sample_relaxed_mask(dist, 3, tau_topk, noise_seed=seed).weights
            assert np.all(w >= 0.0) and np.all(w <= 1.0)
            assert w.sum() == pytest.approx(3.0, abs=1e-6)


@pytest.mark.parametrize("k", [1, 5, 6])
def test_relaxed_mask_invariants_across_cardinalities(k):
    rng = np.random.default_rng(k)
    for _ in range(25):
        dist = MaskDistribution(rng.normal(scale=2.0, size=6), temperature=2.0)
        soft = sample_relaxed_mask(dist, k, 0.2, noise_seed=rng)
        assert soft.k == k
        assert np.all((soft.weights >= 0.0) & (soft.weights <= 1.0))
        assert soft.weights.sum() == pytest.approx(k, abs=1e-6)


def test_relaxed_mask_hands_clipped_mass_to_spare_entries():
    # two close leaders above a far tail push both leaders past 1 before capping
    dist = MaskDistribution(np.zeros(4), temperature=1.0)
    soft = sample_relaxed_mask(dist, 3, 1.0, noise=np.array([4.0, 3.9, -3.0, -3.0]))
    assert soft.weights.sum() == pytest.approx(3.0, abs=1e-9)
    np.testing.assert_allclose(soft.weights[:2], 1.0)
    assert 0.0 < soft.weights[2] < 1.0
    assert soft.weights[2] == pytest.approx(soft.weights[3])


@pytest.mark.parametrize("seed", range(20))
def test_soft_proxy_gradient_matches_finite_differences(seed):
    rng = np.random.default_rng(100 + seed)
    n, m, d = (int(v) for v in rng.integers(3, 6, size=3))
    d_prime = int(rng.integers(1, d))
    k = int(rng.integers(1, d))
    market = random_market(rng, n=n, m=m, d=d, d_prime=d_prime)
    predictor = PredictorWeights(rng.normal(scale=0.3, size=(d_prime, d)))
    config = LearnerConfig(k=k, tau_f=0.1, tau_topk=0.5, n_masks=8)
    batch = MarketBatch.build([market], predictor)
    noise = gumbel_noise(np.random.default_rng(seed), 8, d)
    theta = rng.normal(size=d)

    _, grad = soft_proxy(theta, batch, None, config, noise)
    h = 1e-5
    numeric = np.zeros(d)
    for j in range(d):
        e = np.zeros(d)
        e[j] = h
        numeric[j] = (soft_proxy(theta + e, batch, None, config, noise)[0] - soft_proxy(theta - e, batch, None, config, noise)[0]) / (2 * h)
    np.testing.assert_allclose(grad, numeric, rtol=1e-4, atol=1e-7)


def test_soft_proxy_needs_a_predictor_for_raw_markets():
    market = _two_feature_market()
    with pytest.raises(InvalidArgumentError):
        soft_proxy(np.zeros(2), [market], None, LearnerConfig(k=1))


def test_fit_learns_the_decongesting_feature():
    market = _two_feature_market()
    assert expected_welfare(market, Mask.from_bits("10")) > expected_welfare(market, Mask.from_bits("01"))

    result = fit([market], PredictorWeights(np.eye(2)), LearnerConfig(k=1, lr=0.05, epochs=300))
    assert not result.inverted
    assert result.temperature == 2.0
    assert result.lam == pytest.approx(0.75)
    assert result.distribution.probabilities()[0] > 0.7
    assert topk_mask(result).to_bits() == "10"


def test_fit_history_and_determinism():
    rng = np.random.default_rng(11)
    markets = [random_market(rng, d=6, d_prime=2) for _ in range(3)]
    predictor = PredictorWeights(rng.normal(size=(2, 6)))
    config = LearnerConfig(k=2, epochs=5, eval_every=2, seed=4)

    a = fit(markets, predictor, config)
    b = fit(markets, predictor, config)
    np.testing.assert_array_equal(a.theta, b.theta)
    assert a.history == b.history
    assert a.history[0]["epoch"] == 0 and a.history[0]["objective"] is None
    assert [h["epoch"] for h in a.history] == list(range(6))
    assert a.history[-1]["eval_objective"] is not None


def test_fit_inverts_large_k():
    rng = np.random.default_rng(12)
    markets = [random_market(rng, d=6, d_prime=2)]
    result = fit(markets, PredictorWeights(np.zeros((2, 6))), LearnerConfig(k=5, epochs=2))
    assert result.inverted and result.learned_k == 1
    assert topk_mask(result).k == 5


def test_fit_rejects_k_above_d():
    market = _two_feature_market()
    with pytest.raises(InvalidArgumentError):
        fit([market], PredictorWeights(np.eye(2)), LearnerConfig(k=3, epochs=1))


def test_topk_mask_for_plain_and_inverted_results():
    theta = np.array([3.0, 2.0, 1.0, 0.0])
    plain = FitResult(theta, k=2, inverted=False, temperature=1.0, lam=0.5)
    inverted = FitResult(theta, k=3, inverted=True, temperature=1.0, lam=0.5)
    assert topk_mask(plain).to_bits() == "1100"
    assert topk_mask(inverted).to_bits() == "0111"


def test_fit_result_round_trips_through_dict():
    result = FitResult(np.array([0.5, -1.0]), k=1, inverted=False, temperature=2.0, lam=0.75, history=[{"epoch": 0}])
    again = FitResult.from_dict(result.to_dict())
    np.testing.assert_array_equal(again.theta, result.theta)
    assert (again.k, again.inverted, again.temperature, again.lam, again.history) == (1, False, 2.0, 0.75, [{"epoch": 0}])


def test_deploy_modes():
    rng = np.random.default_rng(13)
    markets = [random_market(rng, d=5) for _ in range(3)]
    result = FitResult(np.array([2.0, 1.5, 0.0, -1.0, 0.5]), k=2, inverted=False, temperature=1.0, lam=0.75)

    top = deploy(result, "topk", markets)
    assert [m.to_bits() for m in top.masks] == ["11000"]
    assert top.mean_welfare == pytest.approx(mean_welfare(top.masks[0], markets))

    policy = deploy(result, "policy", markets, samples=6, seed=0)
    assert len(policy.masks) == 6 and all(m.k == 2 for m in policy.masks)
    assert policy.mean_welfare == pytest.approx(np.mean([mean_welfare(m, markets) for m in policy.masks]))

    committed = deploy(result, "committed_sample", markets, train_markets=markets[:2], samples=4, seed=0)
    assert len(committed.masks) == 1 and committed.masks[0].k == 2
    assert committed.welfare[0] == pytest.approx(mean_welfare(committed.masks[0], markets))

    again = deploy(result, "policy", markets, samples=6, seed=0)
    assert [m.to_bits() for m in again.masks] == [m.to_bits() for m in policy.masks]


def test_deploy_rejects_unknown_mode_and_empty_markets():
    result = FitResult(np.zeros(2), k=1, inverted=False, temperature=1.0, lam=0.75)
    with pytest.raises(InvalidArgumentError):
        deploy(result, "topk", [])
    with pytest.raises(InvalidArgumentError):
        deploy(result, "bogus", [_two_feature_market()])  # type: ignore[arg-type]
