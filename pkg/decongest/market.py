"""Ground-truth market mechanics: perceived values, the choice rule, random single-round
allocation, welfare and congestion statistics."""
from __future__ import annotations

import dataclasses
from typing import Literal, Optional

import numpy as np
from scipy.stats import rankdata

from .errors import InvalidArgumentError
from .models import Allocation, ChoiceProfile, Market, Mask, ValueView
from .utils import as_rng

Impute = Literal["zero", "mean"]


def masked_item_features(market: Market, mask: Mask, impute: Impute = "zero") -> np.ndarray:
    if mask.d != market.d:
        raise InvalidArgumentError(f"mask has d={mask.d}, market has d={market.d}")
    X = market.item_features
    if impute == "zero":
        return X * mask.as_float()
    if impute == "mean":
        return np.where(mask.bits, X, X.mean(axis=0, keepdims=True))
    raise InvalidArgumentError(f"unknown imputation mode: {impute!r}")


def perceived_values(market: Market, mask: Mask, impute: Impute = "zero") -> ValueView:
    B = market.require_preferences("perceived values")
    Xm = masked_item_features(market, mask, impute)
    perceived = np.clip(B @ Xm.T, 0.0, None)
    if market.value_power != 1.0:
        perceived = perceived**market.value_power
    return ValueView(true_values=market.values(), perceived_values=perceived)


def best_responses(utilities: np.ndarray) -> np.ndarray:
    """Choice indices (0 = none, j+1 = item j) from utilities of shape (..., m).

    Lowest index wins ties; a user abstains unless the best utility is strictly positive."""
    if utilities.shape[-1] == 0:
        return np.zeros(utilities.shape[:-1], dtype=np.int64)
    best = np.argmax(utilities, axis=-1)
    top = np.take_along_axis(utilities, best[..., None], axis=-1)[..., 0]
    return np.where(top > 0.0, best + 1, 0).astype(np.int64)


def choose(market: Market, mask: Mask, impute: Impute = "zero") -> ChoiceProfile:
    view = perceived_values(market, mask, impute)
    y = best_responses(view.perceived_values - market.prices[None, :])
    return ChoiceProfile(y, market.m)


def rational_choices(market: Market) -> ChoiceProfile:
    return ChoiceProfile(best_responses(market.values() - market.prices[None, :]), market.m)


def _supply_vector(m: int, supply: Optional[np.ndarray]) -> np.ndarray:
    if supply is None:
        return np.ones(m)
    c = np.asarray(supply, dtype=float)
    if c.shape != (m,) or np.any(c < 0):
        raise InvalidArgumentError(f"supply must be a non-negative length-{m} vector")
    return c


def allocate(
    choices: ChoiceProfile,
    mode: Literal["expected", "realized"] = "expected",
    rng_seed: int | np.random.Generator | None = None,
    supply: Optional[np.ndarray] = None,
) -> Allocation:
    y = choices.indicator()
    counts = choices.demand_counts
    c = _supply_vector(choices.m, supply)

    if mode == "expected":
        share = np.divide(c, counts, out=np.zeros(choices.m), where=counts > 0)
        return Allocation("expected", y * np.minimum(1.0, share)[None, :])

    if mode != "realized":
        raise InvalidArgumentError(f"unknown allocation mode: {mode!r}")
    rng = as_rng(rng_seed)
    a = np.zeros_like(y)
    for j in np.flatnonzero(counts):
        takers = np.flatnonzero(y[:, j])
        units = int(min(np.floor(c[j]), takers.size))
        if units == 0:
            continue
        winners = rng.choice(takers, size=units, replace=False)
        a[winners, j] = 1.0
    return Allocation("realized", a)


def welfare(alloc: Allocation, values: ValueView | np.ndarray) -> float:
    v = values.true_values if isinstance(values, ValueView) else np.asarray(values)
    if v.shape != alloc.matrix.shape:
        raise InvalidArgumentError(f"allocation {alloc.matrix.shape} vs values {v.shape}")
    return float(np.sum(alloc.matrix * v))


def expected_welfare(market: Market, mask: Mask, impute: Impute = "zero") -> float:
    """Expected welfare of the choices induced by a mask (shortcut used across modules)."""
    y = choose(market, mask, impute)
    return welfare(allocate(y, "expected"), market.values())


def congestion_count(choices: ChoiceProfile, supply: Optional[np.ndarray] = None) -> int:
    c = _supply_vector(choices.m, supply)
    return int(np.sum(np.maximum(0.0, choices.demand_counts - c)))


def allocated_items(choices: ChoiceProfile, supply: Optional[np.ndarray] = None) -> int:
    c = _supply_vector(choices.m, supply)
    return int(np.sum(np.minimum(choices.demand_counts, np.floor(c))))


def kendalls_w(perceived: ValueView | np.ndarray) -> float:
    """Kendall's coefficient of concordance of users' item rankings (average ranks on ties)."""
    v = perceived.perceived_values if isinstance(perceived, ValueView) else np.asarray(perceived)
    n, m = v.shape
    if n < 2 or m < 2:
        raise InvalidArgumentError(f"Kendall's W needs n >= 2 and m >= 2, got n={n}, m={m}")
    ranks = rankdata(v, method="average", axis=1)
    rank_sums = ranks.sum(axis=0)
    s = float(np.sum((rank_sums - n * (m + 1) / 2.0) ** 2))
    w = 12.0 * s / (n**2 * (m**3 - m))
    return float(min(1.0, max(0.0, w)))


def perceptive_distortion(
    market: Market,
    mask: Mask,
    pricer: Literal["mid", "buyer", "seller", "first_stage"] = "mid",
    impute: Impute = "zero",
    mode: Literal["ce", "pseudo"] = "ce",
) -> float:
    """Mean absolute gap between market prices and the prices the masked view supports."""
    from .pricing import ce_prices

    view = perceived_values(market, mask, impute)
    if mode == "ce":
        p_tilde = ce_prices(view.perceived_values, which=pricer).prices
    elif mode == "pseudo":
        B = market.require_preferences("pseudo-price distortion")
        hidden = B @ (market.item_features * (~mask.bits).astype(float)).T
        p_tilde = np.clip(market.prices - hidden.mean(axis=0), 0.0, None)
    else:
        raise InvalidArgumentError(f"unknown distortion mode: {mode!r}")
    return float(np.mean(np.abs(p_tilde - market.prices)))


def perturb_preferences(
    market: Market, magnitude: float = 1e-9, seed: int | np.random.Generator | None = None
) -> Market:
    """Add uniform noise in [0, magnitude] to every preference so best responses are generic."""
    B = market.require_preferences("preference perturbation")
    rng = as_rng(seed)
    B2 = B + rng.uniform(0.0, magnitude, size=B.shape)
    top = float((B2 @ market.item_features.T).max(initial=0.0))
    if top > 1.0:
        B2 = B2 / top
    return dataclasses.replace(market, preferences=B2)
