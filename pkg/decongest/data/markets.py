# decongest/data/markets.py
from __future__ import annotations

from typing import Any, Optional, Sequence

import numpy as np
import structlog

from .. import SCHEMA_VERSION
from ..config import PriceScheme
from ..errors import DataError, InvalidArgumentError
from ..models import Market
from ..pricing import apply_scheme
from .nmf import FactorizedPool

log = structlog.get_logger()


def sample_markets(
    pool: FactorizedPool,
    m: int = 20,
    n: int = 20,
    L: int = 240,
    scheme: Optional[PriceScheme] = None,
    seed: int = 0,
) -> list[Market]:
    """One fixed item set, L independent user sets, per-market prices under `scheme`.

    Price noise uses its own stream per market, so changing the scheme never changes which
    users or items are drawn."""
    scheme = scheme or PriceScheme()
    n_total, m_total = pool.B.shape[0], pool.X.shape[0]
    if m > m_total or n > n_total:
        raise DataError(f"pool too small: need {n} users / {m} items, have {n_total} / {m_total}")

    root = np.random.SeedSequence(seed)
    draw_seq, price_seq = root.spawn(2)
    rng = np.random.default_rng(draw_seq)
    price_streams = price_seq.spawn(L)

    items = np.sort(rng.choice(m_total, size=m, replace=False))
    X = pool.X[items]
    markets = []
    for ell in range(L):
        users = rng.choice(n_total, size=n, replace=False)
        market = Market(
            item_features=X,
            prices=np.zeros(m),
            user_features=pool.U[users],
            preferences=pool.B[users],
        )
        prices = apply_scheme(market, scheme, rng=np.random.default_rng(price_streams[ell]))
        markets.append(market.with_prices(prices))
    log.debug("markets_sampled", L=L, n=n, m=m, scheme=scheme.kind)
    return markets


def kfold_splits(L: int, folds: int = 6, seed: int = 0) -> list[tuple[np.ndarray, np.ndarray]]:
    """Disjoint test folds covering range(L); train is the complement of each fold."""
    if folds < 2 or folds > L:
        raise InvalidArgumentError(f"need 2 <= folds <= L, got folds={folds}, L={L}")
    perm = np.random.default_rng(seed).permutation(L)
    out = []
    for chunk in np.array_split(perm, folds):
        test = np.sort(chunk)
        train = np.setdiff1d(np.arange(L), test)
        out.append((train, test))
    return out


def markets_to_dict(markets: Sequence[Market]) -> dict[str, Any]:
    return {"schema_version": SCHEMA_VERSION, "markets": [mk.to_dict() for mk in markets]}


def markets_from_dict(payload: dict[str, Any]) -> list[Market]:
    if payload.get("schema_version") != SCHEMA_VERSION:
        raise DataError(f"unsupported market-list schema_version {payload.get('schema_version')!r}")
    markets = [Market.from_dict(mk) for mk in payload.get("markets", [])]
    if not markets:
        raise DataError("market list is empty")
    return markets
