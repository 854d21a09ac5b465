# decongest/baselines.py
"""Non-learned mask selectors the learning study compares against."""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Literal, Sequence

import numpy as np
import structlog
from joblib import Parallel, delayed
from sklearn.exceptions import ConvergenceWarning
from sklearn.linear_model import lasso_path

from .errors import InvalidArgumentError
from .market import Impute, expected_welfare
from .models import Market, Mask, PredictorWeights
from .predictor import mean_preferences
from .utils import as_rng

log = structlog.get_logger()

LASSO_ALPHAS = 100
LASSO_EPS = 1e-3


@dataclass(frozen=True)
class FeatureOrdering:
    permutation: tuple[int, ...]  # most important first
    source: Literal["lasso_path", "choice_pred"]

    def __post_init__(self) -> None:
        if sorted(self.permutation) != list(range(len(self.permutation))):
            raise InvalidArgumentError(f"not a permutation of 0..d-1: {self.permutation}")

    @property
    def d(self) -> int:
        return len(self.permutation)

    def top(self, k: int) -> Mask:
        if not 0 <= k <= self.d:
            raise InvalidArgumentError(f"k={k} outside 0..{self.d}")
        return Mask.from_indices(self.permutation[:k], self.d)


def _standardize(X: np.ndarray) -> np.ndarray:
    std = X.std(axis=0)
    return np.divide(X - X.mean(axis=0), std, out=np.zeros_like(X), where=std > 0)


def lasso_ordering(item_features: np.ndarray, prices: np.ndarray) -> FeatureOrdering:
    """Order features by when they enter the Lasso path of price ~ features.

    Features that never enter are ranked by final coefficient magnitude, then by index."""
    X = _standardize(np.asarray(item_features, dtype=float))
    y = np.asarray(prices, dtype=float)
    if X.shape[0] != y.shape[0]:
        raise InvalidArgumentError(f"{X.shape[0]} items but {y.shape[0]} prices")
    y = y - y.mean()
    d = X.shape[1]

    if not np.any(y) or not np.any(X):
        first = np.full(d, np.inf)
        final = np.zeros(d)
    else:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ConvergenceWarning)
            _, coefs, _ = lasso_path(X, y, eps=LASSO_EPS, n_alphas=LASSO_ALPHAS)
        active = np.abs(coefs) > 0
        first = np.where(active.any(axis=1), active.argmax(axis=1), np.inf)
        final = np.abs(coefs[:, -1])

    order = sorted(range(d), key=lambda f: (first[f], -final[f], f))
    return FeatureOrdering(tuple(order), "lasso_path")


def price_pred_mask(item_features: np.ndarray, prices: np.ndarray, k: int) -> Mask:
    return lasso_ordering(item_features, prices).top(k)


def choice_pred_mask(weights: PredictorWeights, user_features: np.ndarray, k: int) -> Mask:
    """Top-k coordinates of the users' average estimated preference vector."""
    beta = mean_preferences(weights, user_features)
    order = np.argsort(-beta, kind="stable")
    return FeatureOrdering(tuple(int(f) for f in order), "choice_pred").top(k)


@dataclass(frozen=True)
class RandomBaseline:
    mean: float
    std: float
    per_draw: np.ndarray  # mean welfare over markets, one entry per draw

    @property
    def draws(self) -> int:
        return int(self.per_draw.shape[0])

    @property
    def standard_error(self) -> float:
        return float(self.per_draw.std(ddof=1) / np.sqrt(self.draws)) if self.draws > 1 else 0.0


def _draw_welfare(markets: Sequence[Market], mask: Mask, impute: Impute) -> np.ndarray:
    return np.array([expected_welfare(market, mask, impute) for market in markets])


def random_baseline(
    markets: Sequence[Market],
    k: int,
    draws: int = 100,
    seed: int | np.random.Generator | None = 0,
    impute: Impute = "zero",
    jobs: int = 1,
) -> RandomBaseline:
    """True welfare of uniformly random k-subset masks, over draws × markets."""
    if not markets:
        raise InvalidArgumentError("random baseline needs at least one market")
    d = markets[0].d
    if not 0 <= k <= d:
        raise InvalidArgumentError(f"k={k} outside 0..{d}")
    if k == d:
        draws = 1
    rng = as_rng(seed)
    masks = [Mask.from_indices(rng.choice(d, size=k, replace=False), d) for _ in range(draws)]

    rows = Parallel(n_jobs=jobs)(delayed(_draw_welfare)(markets, mask, impute) for mask in masks)
    table = np.vstack(rows)
    log.debug("random_baseline", k=k, draws=draws, markets=len(markets), mean=float(table.mean()))
    return RandomBaseline(mean=float(table.mean()), std=float(table.std()), per_draw=table.mean(axis=1))
