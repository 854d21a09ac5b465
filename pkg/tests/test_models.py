import numpy as np
import pytest

from decongest import RESULT_HEADER
from decongest.errors import DataError, InvalidArgumentError, PreferencesRequiredError
from decongest.models import ChoiceProfile, Market, Mask, MaskDistribution, ResultRow, SoftMask


def test_result_header_order_and_length():
    assert RESULT_HEADER[0] == "experiment"
    assert RESULT_HEADER[1] == "method"
    assert RESULT_HEADER[-3:] == ["master_seed", "config_hash", "runtime"]
    assert len(RESULT_HEADER) == 22


def test_result_row_length_matches_header():
    row = ResultRow(experiment="fig3", method="proxy").as_row()
    assert len(row) == len(RESULT_HEADER)
    assert row[:2] == ["fig3", "proxy"]


def test_mask_bits_and_complement():
    mask = Mask.from_bits("0110")
    assert mask.d == 4
    assert mask.k == 2
    assert mask.indices == (1, 2)
    assert mask.complement().to_bits() == "1001"
    assert Mask.from_indices([1, 2], 4) == mask
    assert Mask.full(3).to_bits() == "111"


def test_mask_rejects_non_binary():
    with pytest.raises(InvalidArgumentError):
        Mask(np.array([0, 2, 1]))


@pytest.mark.parametrize("text", ["1x1", "0120", "11 0", "", "  "])
def test_mask_bits_reject_stray_characters(text):
    with pytest.raises(InvalidArgumentError):
        Mask.from_bits(text)


def test_mask_bits_ignore_surrounding_whitespace():
    assert Mask.from_bits(" 0110\n") == Mask.from_bits("0110")


def test_soft_mask_validation():
    soft = SoftMask(np.array([1.0, 0.25, 0.75]), k=2)
    assert soft.d == 3
    with pytest.raises(InvalidArgumentError):
        SoftMask(np.array([1.2, -0.2, 1.0]))
    with pytest.raises(InvalidArgumentError):
        SoftMask(np.array([1.0, 0.5, 0.0]), k=2)
    with pytest.raises(InvalidArgumentError):
        SoftMask(np.array([np.nan, 1.0]))


def test_market_validation():
    X = np.eye(2)
    with pytest.raises(DataError):
        Market(item_features=X, prices=np.array([-0.1, 0.0]), user_features=np.zeros((1, 0)))
    with pytest.raises(DataError):
        Market(item_features=X, prices=np.zeros(2), user_features=np.zeros((1, 0)), preferences=[[1.5, 0.0]])
    with pytest.raises(DataError):
        Market(item_features=X, prices=np.zeros(3), user_features=np.zeros((1, 0)))


def test_market_without_preferences_refuses_values():
    market = Market(item_features=np.eye(2), prices=np.zeros(2), user_features=np.ones((3, 1)))
    assert market.n == 3
    with pytest.raises(PreferencesRequiredError):
        market.values()


def test_market_dict_round_trip_keeps_values():
    market = Market(
        item_features=[[0.2, 0.4], [0.6, 0.1]],
        prices=[0.1, 0.05],
        user_features=[[1.0], [0.5]],
        preferences=[[0.5, 0.5], [0.9, 0.1]],
        value_power=0.5,
    )
    again = Market.from_dict(market.to_dict())
    np.testing.assert_array_equal(again.values(), market.values())
    np.testing.assert_array_equal(again.user_features, market.user_features)


def test_with_prices_clips_at_zero():
    market = Market(item_features=np.eye(2), prices=np.zeros(2), user_features=np.zeros((1, 0)))
    np.testing.assert_array_equal(market.with_prices(np.array([-1.0, 0.3])).prices, [0.0, 0.3])


def test_choice_profile_counts():
    y = ChoiceProfile(np.array([1, 1, 0, 3]), m=3)
    np.testing.assert_array_equal(y.demand_counts, [2, 0, 1])
    assert y.no_choice_count == 1
    np.testing.assert_array_equal(y.indicator().sum(axis=0), [2, 0, 1])


def test_mask_distribution_draws_are_k_hot():
    dist = MaskDistribution(np.array([0.0, 1.0, 2.0, 3.0]), temperature=0.5)
    np.testing.assert_allclose(dist.probabilities().sum(), 1.0)
    draws = dist.sample_bits(2, np.random.default_rng(0), size=50)
    assert draws.shape == (50, 4)
    assert np.all(draws.sum(axis=1) == 2)
