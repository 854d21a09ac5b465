from __future__ import annotations

from typing import Optional

import numpy as np

from .errors import InvalidArgumentError
from .market import Impute, allocate, choose, welfare
from .models import ChoiceProfile, Market, Mask, ProxyBreakdown, ValueView


def _check_lambda(lam: float) -> None:
    if not 0.0 <= lam <= 1.0:
        raise InvalidArgumentError(f"lambda must be in [0, 1], got {lam}")


def _supply(m: int, supply: Optional[np.ndarray]) -> np.ndarray:
    return np.ones(m) if supply is None else np.asarray(supply, dtype=float)


def welfare_decomposition(
    choices: ChoiceProfile,
    values: ValueView | np.ndarray,
    supply: Optional[np.ndarray] = None,
) -> tuple[float, float, float]:
    """(value of all choices, loss from congestion, expected welfare)."""
    v = values.true_values if isinstance(values, ValueView) else np.asarray(values, dtype=float)
    y = choices.indicator()
    counts = choices.demand_counts
    c = _supply(choices.m, supply)
    share = np.divide(c, counts, out=np.ones(choices.m), where=counts > 0)
    chosen_value = (y * v).sum(axis=0)
    term_i = float(chosen_value.sum())
    term_ii = float(np.sum((np.minimum(1.0, share) - 1.0) * chosen_value))
    return term_i, term_ii, term_i + term_ii


def proxy_welfare(
    choices: ChoiceProfile,
    prices: np.ndarray,
    lam: float = 0.5,
    with_no_choice_penalty: bool = True,
    supply: Optional[np.ndarray] = None,
) -> ProxyBreakdown:
    _check_lambda(lam)
    counts = choices.demand_counts
    c = _supply(choices.m, supply)
    selection = float(np.dot(counts, np.asarray(prices, dtype=float)))
    decongestion = float(np.sum(np.maximum(0.0, counts - c)))
    penalty = float(choices.no_choice_count) if with_no_choice_penalty else 0.0
    combined = (1.0 - lam) * selection - lam * (decongestion + penalty)
    return ProxyBreakdown(selection, decongestion, penalty, lam, combined)


def soft_proxy_terms(
    soft_choices: np.ndarray,
    prices: np.ndarray,
    lam: float = 0.5,
    with_no_choice_penalty: bool = True,
    supply: Optional[np.ndarray] = None,
) -> ProxyBreakdown:
    """Relaxed counterpart of proxy_welfare on an n×(m+1) row-stochastic matrix (column 0 = none)."""
    _check_lambda(lam)
    ybar = np.asarray(soft_choices, dtype=float)
    items = ybar[:, 1:]
    c = _supply(items.shape[1], supply)
    selection = float(np.sum(items * np.asarray(prices)[None, :]))
    decongestion = float(np.sum(np.maximum(0.0, items.sum(axis=0) - c)))
    penalty = float(ybar[:, 0].sum()) if with_no_choice_penalty else 0.0
    combined = (1.0 - lam) * selection - lam * (decongestion + penalty)
    return ProxyBreakdown(selection, decongestion, penalty, lam, combined)


def lower_bound_gap(market: Market, mask: Mask, impute: Impute = "zero") -> float:
    """W_M minus its value-free bound. Non-negative under zero imputation only."""
    v = market.values()
    y = choose(market, mask, impute)
    w = welfare(allocate(y, "expected"), v)
    bound = proxy_welfare(y, market.prices, 0.5, with_no_choice_penalty=False).lower_bound
    return w - bound


def default_lambda(k: int, d: int) -> float:
    if d < 1 or not 0 <= k <= d:
        raise InvalidArgumentError(f"need 0 <= k <= d and d >= 1, got k={k}, d={d}")
    return 1.0 - k / (2.0 * d)
