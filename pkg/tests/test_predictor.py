import numpy as np
import pytest
from conftest import random_market

from decongest.config import PredictorConfig
from decongest.errors import DataError, PropensityError, TrainingError
from decongest.market import choose
from decongest.models import ChoiceDataset, ChoiceSample, Market, Mask, MaskDistribution, PredictorWeights
from decongest.predictor import (
    accuracy,
    attach_propensity_weights,
    item_scores,
    predict_hard,
    predict_soft,
    propensity_ratio,
    scores,
    train,
)


def _separable_dataset(copies: int = 10) -> ChoiceDataset:
    market = Market(
        item_features=np.eye(2),
        prices=[0.1, 0.1],
        user_features=np.eye(2),
        preferences=[[0.9, 0.0], [0.0, 0.9]],
    )
    full = Mask.full(2)
    y = choose(market, full).choices
    return ChoiceDataset([market], [ChoiceSample(0, full, y) for _ in range(copies)])


def test_zero_weights_score_minus_price(rng):
    market = random_market(rng, d_prime=3)
    s = scores(PredictorWeights(np.zeros((3, market.d))), market, Mask.full(market.d), 0)
    assert s[0] == 0.0
    np.testing.assert_allclose(s[1:], -market.prices)


def test_identity_weights_read_first_feature():
    market = Market(item_features=[[0.3, 0.9], [0.6, 0.2]], prices=[0.1, 0.2], user_features=[[1.0, 0.0]])
    s = scores(PredictorWeights(np.eye(2)), market, Mask.full(2), 0)
    np.testing.assert_allclose(s, [0.0, 0.3 - 0.1, 0.6 - 0.2])


def test_masked_features_never_change_scores(rng):
    market = random_market(rng, d_prime=2)
    W = PredictorWeights(rng.normal(size=(2, market.d)))
    mask = Mask.from_bits("101010")
    bumped = Market(
        item_features=market.item_features + np.outer(np.ones(market.m), ~mask.bits),
        prices=market.prices,
        user_features=market.user_features,
    )
    np.testing.assert_allclose(item_scores(W, market, mask), item_scores(W, bumped, mask))


def test_soft_predictions_are_row_stochastic(rng):
    market = random_market(rng, d_prime=3)
    W = PredictorWeights(rng.normal(size=(3, market.d)))
    ybar = predict_soft(W, market, Mask(rng.integers(0, 2, size=market.d)), tau=0.3)
    assert ybar.shape == (market.n, market.m + 1)
    np.testing.assert_allclose(ybar.sum(axis=1), 1.0, atol=1e-9)


def test_uniform_scores_give_uniform_rows():
    market = Market(item_features=np.zeros((3, 2)), prices=np.zeros(3), user_features=np.ones((2, 1)))
    ybar = predict_soft(PredictorWeights(np.ones((1, 2))), market, Mask.full(2), tau=1.0)
    np.testing.assert_allclose(ybar, 0.25)


def test_cold_softmax_is_one_hot():
    market = Market(item_features=[[0.5], [0.2]], prices=[0.0, 0.0], user_features=[[1.0]])
    ybar = predict_soft(PredictorWeights(np.ones((1, 1))), market, Mask.full(1), tau=1e-4)
    assert ybar[0, 1] > 1 - 1e-6


def test_shifting_scores_leaves_soft_predictions_unchanged():
    market = Market(item_features=[[0.5], [0.2]], prices=[0.1, 0.1], user_features=[[1.0]])
    shifted = Market(item_features=[[0.5], [0.2]], prices=[0.0, 0.0], user_features=[[1.0]])
    W = PredictorWeights(np.ones((1, 1)))
    a = predict_soft(W, market, Mask.full(1), tau=0.5)[:, 1:]
    b = predict_soft(W, shifted, Mask.full(1), tau=0.5)[:, 1:]
    np.testing.assert_allclose(a / a.sum(), b / b.sum())


def test_training_reaches_perfect_accuracy_on_separable_data():
    dataset = _separable_dataset()
    history: list[float] = []
    weights = train(
        dataset,
        PredictorConfig(lr=0.05, epochs=50, batch=5),
        init=PredictorWeights(np.zeros((2, 2))),
        history=history,
    )
    assert accuracy(weights, dataset) == 1.0
    assert history[-1] <= history[0]


def test_unit_propensity_weights_do_not_change_training():
    dataset = _separable_dataset()
    config = PredictorConfig(lr=0.01, epochs=5, batch=3, seed=4)
    plain = train(dataset, config, ipw=False)
    weighted = train(dataset, config, ipw=True)
    np.testing.assert_array_equal(plain.W, weighted.W)


def test_training_needs_data():
    with pytest.raises(TrainingError):
        train(ChoiceDataset([], []))
    with pytest.raises(DataError):
        accuracy(PredictorWeights(np.zeros((1, 1))), ChoiceDataset([], []))


def test_perfect_weights_are_fully_accurate():
    dataset = _separable_dataset(copies=2)
    assert accuracy(PredictorWeights(np.eye(2)), dataset) == 1.0
    assert predict_hard(PredictorWeights(np.eye(2)), dataset.markets[0], Mask.full(2)).choices.tolist() == [1, 2]


def test_propensity_ratio_of_identical_policies_is_one():
    dist = MaskDistribution(np.array([0.3, 0.1, 0.0, 0.2]))
    mask = Mask.from_bits("1010")
    assert propensity_ratio(mask, dist, dist, mc_samples=20_000, seed=0) == pytest.approx(1.0, rel=0.1)


def test_full_mask_propensity_is_exact():
    a = MaskDistribution(np.array([2.0, 0.0, 0.0]))
    b = MaskDistribution(np.zeros(3))
    assert propensity_ratio(Mask.full(3), a, b) == 1.0


def test_single_feature_propensity_matches_softmax():
    target = MaskDistribution(np.array([1.0, 0.0, 0.0]))
    behavior = MaskDistribution(np.zeros(3))
    exact = target.probabilities()[0] / behavior.probabilities()[0]
    estimate = propensity_ratio(Mask.from_bits("100"), target, behavior, mc_samples=40_000, seed=1)
    assert estimate == pytest.approx(exact, rel=0.06)


def test_zero_behavior_probability_is_an_error():
    behavior = MaskDistribution(np.array([50.0, 0.0, 0.0]), temperature=0.01)
    target = MaskDistribution(np.zeros(3))
    with pytest.raises(PropensityError):
        propensity_ratio(Mask.from_bits("010"), target, behavior, mc_samples=100, seed=0)


def test_attached_weights_are_probability_ratios():
    dataset = _separable_dataset(copies=3)
    dist = MaskDistribution(np.zeros(2))
    weighted = attach_propensity_weights(dataset, dist, dist, mc_samples=10)
    assert all(s.weight == 1.0 and s.propensity == 1.0 for s in weighted.samples)
