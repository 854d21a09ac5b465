# decongest/data/mixture.py
from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np
import structlog
from scipy.optimize import nnls

from ..errors import DataError, InvalidArgumentError
from ..models import Market
from ..pricing import ce_prices

log = structlog.get_logger()


@dataclass(frozen=True)
class MixtureSpec:
    n: int = 8
    m: int = 8
    d: int = 14
    alpha: float = 0.0
    rho: float = 1.0
    seed: int = 0

    def __post_init__(self) -> None:
        if min(self.n, self.m, self.d) < 1:
            raise InvalidArgumentError("n, m and d must be positive")
        if not 0.0 <= self.alpha <= 1.0:
            raise InvalidArgumentError(f"alpha must be in [0, 1], got {self.alpha}")
        if not 0.0 < self.rho <= 1.0:
            raise InvalidArgumentError(f"rho must be in (0, 1], got {self.rho}")


def circulant_values(n: int, m: int) -> np.ndarray:
    """User i ranks items starting from item i (mod m), values m/m, (m-1)/m, ..., 1/m."""
    base = np.arange(m, 0, -1) / m
    shift = (np.arange(m)[None, :] - (np.arange(n) % m)[:, None]) % m
    return base[shift]


def homogeneous_values(n: int, m: int) -> np.ndarray:
    return np.tile(np.arange(m, 0, -1) / m, (n, 1))


def fit_preferences(X: np.ndarray, V: np.ndarray) -> np.ndarray:
    """Row-wise non-negative least squares: min_{B >= 0} ||B Xᵀ - V||."""
    B = np.zeros((V.shape[0], X.shape[1]))
    for i, target in enumerate(V):
        try:
            B[i], residual = nnls(X, target)
        except RuntimeError as e:
            raise DataError(f"NNLS did not converge for user {i}: {e}") from e
        baseline = float(np.linalg.norm(target))
        if baseline > 0 and residual >= baseline:
            raise DataError(f"NNLS made no progress for user {i} (residual={residual:.3e})")
    return B


def make_mixture_market(spec: MixtureSpec, price: bool = True) -> Market:
    rng = np.random.default_rng(spec.seed)
    X = rng.uniform(0.0, 1.0, size=(spec.m, spec.d)) + rng.uniform(0.0, 1.0, size=(spec.m, spec.d))

    B_het = fit_preferences(X, circulant_values(spec.n, spec.m))
    B_hom = fit_preferences(X, homogeneous_values(spec.n, spec.m))
    B = (1.0 - spec.alpha) * B_het + spec.alpha * B_hom

    top = float((B @ X.T).max(initial=0.0))
    if top > 1.0:
        log.debug("mixture_values_rescaled", factor=top, alpha=spec.alpha, seed=spec.seed)
        B = B / top

    market = Market(
        item_features=X,
        prices=np.zeros(spec.m),
        user_features=np.zeros((spec.n, 0)),
        preferences=B,
    )
    market = apply_dispersion(market, spec.rho)
    if price:
        market = market.with_prices(ce_prices(market.values(), "mid").prices)
    return market


def apply_dispersion(market: Market, rho: float) -> Market:
    """Raise every true (and perceived) value to the power rho; prices are left as they are."""
    if not 0.0 < rho <= 1.0:
        raise InvalidArgumentError(f"rho must be in (0, 1], got {rho}")
    return dataclasses.replace(market, value_power=market.value_power * rho)
