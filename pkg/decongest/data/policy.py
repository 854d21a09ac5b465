# decongest/data/policy.py
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..errors import DataError, InvalidArgumentError
from ..market import choose
from ..models import ChoiceDataset, ChoiceSample, Market, Mask, MaskDistribution
from ..predictor import mask_probability

ON_MASK_THETA = 3.0
OFF_MASK_THETA = 1.0
POLICY_TEMPERATURE = 0.05


@dataclass(frozen=True)
class DefaultPolicy:
    """Logging policy π₀: concentrated on a default mask but with full support."""

    theta: np.ndarray
    k: int
    temperature: float = POLICY_TEMPERATURE

    @property
    def distribution(self) -> MaskDistribution:
        return MaskDistribution(self.theta, self.temperature)

    def check_support(self) -> None:
        probs = self.distribution.probabilities()
        if np.any(probs <= 0.0):
            raise DataError(f"default policy gives zero probability to features {np.flatnonzero(probs <= 0).tolist()}")


def default_policy(default_mask: Mask, d: int, k: int) -> DefaultPolicy:
    if default_mask.d != d:
        raise InvalidArgumentError(f"default mask has d={default_mask.d}, expected {d}")
    if not 1 <= k <= d:
        raise InvalidArgumentError(f"need 1 <= k <= d, got k={k}, d={d}")
    theta = np.where(default_mask.bits, ON_MASK_THETA, OFF_MASK_THETA)
    policy = DefaultPolicy(theta=theta, k=k)
    policy.check_support()
    return policy


def sample_dataset(
    markets: Sequence[Market],
    policy: DefaultPolicy,
    k: int,
    seed: int = 0,
    propensity_samples: int = 0,
) -> ChoiceDataset:
    """One π₀ mask per market, with the users' true choices under it."""
    policy.check_support()
    rng = np.random.default_rng(seed)
    dist = policy.distribution
    samples = []
    for index, market in enumerate(markets):
        mask = Mask(dist.sample_bits(k, rng)[0])
        propensity = mask_probability(mask, dist, propensity_samples, rng) if propensity_samples > 0 else None
        samples.append(ChoiceSample(index, mask, choose(market, mask).choices, propensity))
    return ChoiceDataset(list(markets), samples)


def uniform_mask_dataset(markets: Sequence[Market], k: int, seed: int = 0) -> ChoiceDataset:
    """Counterfactual evaluation data: masks drawn uniformly among all k-subsets."""
    rng = np.random.default_rng(seed)
    samples = []
    for index, market in enumerate(markets):
        mask = Mask.from_indices(rng.choice(market.d, size=k, replace=False), market.d)
        samples.append(ChoiceSample(index, mask, choose(market, mask).choices))
    return ChoiceDataset(list(markets), samples)
