import numpy as np
import pytest

from conftest import random_market
from decongest.data import (
    FactorizedPool,
    MixtureSpec,
    apply_dispersion,
    default_policy,
    factorize,
    ingest_ratings,
    kfold_splits,
    make_mixture_market,
    markets_from_dict,
    markets_to_dict,
    sample_dataset,
    sample_markets,
    synthetic_ratings,
    uniform_mask_dataset,
    write_ratings,
)
from decongest.data.mixture import circulant_values, fit_preferences, homogeneous_values
from decongest.data.nmf import masked_objective, nmf_masked
from decongest.data.policy import OFF_MASK_THETA, ON_MASK_THETA, POLICY_TEMPERATURE
from decongest.errors import DataError, InvalidArgumentError
from decongest.market import choose, kendalls_w
from decongest.models import Market, Mask


# --------------------------- Mixture markets ---------------------------

def test_circulant_values():
    np.testing.assert_allclose(
        circulant_values(3, 3),
        [[1.0, 2 / 3, 1 / 3], [1 / 3, 1.0, 2 / 3], [2 / 3, 1 / 3, 1.0]],
    )
    V = circulant_values(8, 8)
    np.testing.assert_array_equal(V.argmax(axis=1), np.arange(8))
    assert kendalls_w(V) == pytest.approx(0.0)
    assert kendalls_w(homogeneous_values(8, 8)) == pytest.approx(1.0)


def test_fit_preferences_is_non_negative_and_improves_on_zero():
    rng = np.random.default_rng(0)
    X = rng.uniform(size=(8, 14)) * 2
    V = circulant_values(8, 8)
    B = fit_preferences(X, V)
    assert np.all(B >= 0)
    assert np.linalg.norm(B @ X.T - V) < np.linalg.norm(V)


def test_mixture_market_heterogeneity_follows_alpha():
    het = make_mixture_market(MixtureSpec(alpha=0.0, seed=1))
    hom = make_mixture_market(MixtureSpec(alpha=1.0, seed=1))
    assert (het.n, het.m, het.d) == (8, 8, 14)
    assert het.values().max() <= 1.0 + 1e-9
    assert kendalls_w(hom.values()) == pytest.approx(1.0)
    assert kendalls_w(het.values()) < kendalls_w(hom.values())
    np.testing.assert_array_equal(het.item_features, hom.item_features)


def test_mixture_market_prices_are_mid_ce():
    from decongest.pricing import ce_prices

    market = make_mixture_market(MixtureSpec(n=4, m=4, d=6, alpha=0.5, seed=2))
    np.testing.assert_allclose(market.prices, ce_prices(market.values(), "mid").prices)
    unpriced = make_mixture_market(MixtureSpec(n=4, m=4, d=6, seed=2), price=False)
    np.testing.assert_array_equal(unpriced.prices, np.zeros(4))


def test_mixture_spec_validation():
    with pytest.raises(InvalidArgumentError):
        MixtureSpec(alpha=1.5)
    with pytest.raises(InvalidArgumentError):
        MixtureSpec(rho=0.0)
    with pytest.raises(InvalidArgumentError):
        MixtureSpec(d=0)


def test_dispersion_raises_values_to_power():
    market = Market(
        item_features=np.array([[1.0]]),
        prices=np.array([0.1]),
        user_features=np.zeros((1, 0)),
        preferences=np.array([[0.25]]),
    )
    dispersed = apply_dispersion(market, 0.5)
    assert dispersed.values()[0, 0] == pytest.approx(0.5)
    np.testing.assert_array_equal(dispersed.prices, market.prices)
    assert apply_dispersion(dispersed, 0.5).value_power == pytest.approx(0.25)
    with pytest.raises(InvalidArgumentError):
        apply_dispersion(market, 1.5)


# --------------------------- Ratings ---------------------------

def test_ingest_ratings_parses_triples(tmp_path):
    path = tmp_path / "u.data"
    path.write_text("1\t5\t4\t881250949\n2\t5\t3\t881250950\n\n1\t7\t5\t881250951\n")
    triples = ingest_ratings(path)
    assert len(triples) == 3
    assert triples.shape == (2, 2)
    assert triples.user_ids == ("1", "2") and triples.item_ids == ("5", "7")
    R, M = triples.to_matrix()
    np.testing.assert_array_equal(R, [[4.0, 5.0], [3.0, 0.0]])
    np.testing.assert_array_equal(M, [[1.0, 1.0], [1.0, 0.0]])
    assert triples.timestamps[0] == 881250949


@pytest.mark.parametrize(
    "content, message",
    [
        ("", "no ratings found"),
        ("1\t5\t4\n", "line 1"),
        ("1\t5\t4\t1\n1\t5\tfour\t2\n", "line 2"),
        ("1\t5\t6\t1\n", "outside"),
        ("\t5\t4\t1\n", "empty user or item"),
    ],
)
def test_ingest_ratings_rejects_bad_input(tmp_path, content, message):
    path = tmp_path / "bad.data"
    path.write_text(content)
    with pytest.raises(DataError, match=message):
        ingest_ratings(path)


def test_write_then_ingest_preserves_ratings(tmp_path):
    triples = synthetic_ratings(n_users=12, n_items=9, d=3, density=0.4, seed=5)
    path = tmp_path / "out" / "ratings.tsv"
    write_ratings(triples, path)
    again = ingest_ratings(path)
    assert len(again) == len(triples)
    R0, M0 = triples.to_matrix()
    R1, M1 = again.to_matrix()
    # ids are re-indexed in first-seen order, so compare by id
    order_u = [again.user_ids.index(u) for u in triples.user_ids]
    order_i = [again.item_ids.index(i) for i in triples.item_ids]
    np.testing.assert_array_equal(R1[np.ix_(order_u, order_i)], R0)
    np.testing.assert_array_equal(M1[np.ix_(order_u, order_i)], M0)


def test_synthetic_ratings_cover_every_user_and_item():
    triples = synthetic_ratings(n_users=30, n_items=20, d=4, density=0.05, seed=1)
    _, M = triples.to_matrix()
    assert np.all(M.sum(axis=1) >= 1) and np.all(M.sum(axis=0) >= 1)
    assert triples.ratings.min() >= 1.0 and triples.ratings.max() <= 5.0
    assert triples == synthetic_ratings(n_users=30, n_items=20, d=4, density=0.05, seed=1)


# --------------------------- Factorization ---------------------------

def test_nmf_recovers_rank_one_matrix():
    a = np.array([1.0, 2.0, 0.5, 1.5])
    b = np.array([0.4, 1.0, 0.8])
    R = np.outer(a, b)
    B, X = nmf_masked(R, np.ones_like(R), d=1, iters=1000, seed=0)
    assert np.abs(B @ X.T - R).max() < 1e-3
    assert np.all(B >= 0) and np.all(X >= 0)


def test_nmf_objective_never_increases():
    rng = np.random.default_rng(2)
    R = rng.uniform(size=(20, 4)) @ rng.uniform(size=(4, 20))
    M = (rng.uniform(size=R.shape) < 0.6).astype(float)
    history: list[float] = []
    B, X = nmf_masked(R, M, d=4, iters=200, seed=0, history=history)
    assert len(history) == 200
    for before, after in zip(history, history[1:]):
        assert after <= before * (1 + 1e-10) + 1e-12
    assert history[-1] == pytest.approx(masked_objective(R, M, B, X))


def test_nmf_rejects_rank_above_shape():
    with pytest.raises(DataError):
        nmf_masked(np.ones((3, 5)), np.ones((3, 5)), d=4)


def _small_pool() -> FactorizedPool:
    return factorize(synthetic_ratings(n_users=30, n_items=20, d=4, density=0.5, seed=3), d=3, iters=100)


def test_factorize_builds_bounded_pool():
    pool = _small_pool()
    assert pool.d == 3 and pool.d_prime == 1
    assert pool.X.shape == (20, 3) and pool.B.shape == (30, 3) and pool.U.shape == (30, 1)
    assert (pool.B @ pool.X.T).max() <= 1.0 + 1e-9
    again = FactorizedPool.from_dict(pool.to_dict())
    np.testing.assert_array_equal(again.T, pool.T)


def test_sample_markets_share_items_and_differ_in_users():
    pool = _small_pool()
    markets = sample_markets(pool, m=5, n=6, L=4, seed=0)
    assert len(markets) == 4
    for mk in markets:
        assert (mk.n, mk.m, mk.d, mk.user_features.shape[1]) == (6, 5, 3, 1)
        np.testing.assert_array_equal(mk.item_features, markets[0].item_features)
    assert not np.array_equal(markets[0].preferences, markets[1].preferences)

    again = sample_markets(pool, m=5, n=6, L=4, seed=0)
    np.testing.assert_array_equal(again[3].prices, markets[3].prices)


def test_sample_markets_rejects_small_pool():
    with pytest.raises(DataError, match="pool too small"):
        sample_markets(_small_pool(), m=21, n=5, L=2)


def test_markets_dict_round_trip_and_schema_check():
    rng = np.random.default_rng(4)
    markets = [random_market(rng) for _ in range(2)]
    again = markets_from_dict(markets_to_dict(markets))
    np.testing.assert_array_equal(again[1].preferences, markets[1].preferences)
    with pytest.raises(DataError):
        markets_from_dict({"schema_version": 99, "markets": []})
    with pytest.raises(DataError):
        markets_from_dict(markets_to_dict([]))


def test_kfold_splits_partition_the_markets():
    splits = kfold_splits(10, folds=3, seed=1)
    tests = np.concatenate([test for _, test in splits])
    np.testing.assert_array_equal(np.sort(tests), np.arange(10))
    for train, test in splits:
        assert not set(train) & set(test)
        assert len(train) + len(test) == 10
    with pytest.raises(InvalidArgumentError):
        kfold_splits(3, folds=4)


# --------------------------- Default policy ---------------------------

def test_default_policy_has_full_support_and_prefers_default_mask():
    mask = Mask.from_bits("110100")
    policy = default_policy(mask, d=6, k=3)
    probs = policy.distribution.probabilities()
    assert np.all(probs > 0)
    ratio = probs[0] / probs[2]
    assert ratio == pytest.approx(np.exp((ON_MASK_THETA - OFF_MASK_THETA) / POLICY_TEMPERATURE), rel=1e-6)


def test_default_policy_validation():
    with pytest.raises(InvalidArgumentError):
        default_policy(Mask.from_bits("11"), d=3, k=1)
    with pytest.raises(InvalidArgumentError):
        default_policy(Mask.from_bits("110"), d=3, k=0)


def test_sample_dataset_records_true_choices():
    rng = np.random.default_rng(5)
    markets = [random_market(rng, d=4) for _ in range(5)]
    policy = default_policy(Mask.from_bits("1100"), d=4, k=2)
    data = sample_dataset(markets, policy, k=2, seed=0)
    assert len(data.samples) == 5
    for sample in data.samples:
        assert sample.mask.k == 2
        # temperature is sharp enough that the default mask dominates
        assert sample.mask.to_bits() == "1100"
        np.testing.assert_array_equal(sample.choices, choose(markets[sample.market_index], sample.mask).choices)
        assert sample.propensity is None

    full = sample_dataset(markets, default_policy(Mask.full(4), d=4, k=4), k=4, seed=0)
    assert all(s.mask == Mask.full(4) for s in full.samples)


def test_uniform_mask_dataset_spreads_masks():
    rng = np.random.default_rng(6)
    markets = [random_market(rng, d=6) for _ in range(30)]
    data = uniform_mask_dataset(markets, k=2, seed=0)
    assert all(s.mask.k == 2 for s in data.samples)
    assert len({s.mask.to_bits() for s in data.samples}) > 5
