import numpy as np
import pytest

from decongest.models import Market
from decongest.pricing import ce_prices


def random_market(rng: np.random.Generator, n: int = 4, m: int = 4, d: int = 6, d_prime: int = 0) -> Market:
    """Bounded features and preferences (all values in [0, 1]) priced at mid CE prices."""
    X = rng.uniform(0.0, 1.0, size=(m, d))
    B = rng.uniform(0.0, 1.0, size=(n, d)) / d
    U = rng.uniform(0.0, 1.0, size=(n, d_prime))
    market = Market(item_features=X, prices=np.zeros(m), user_features=U, preferences=B)
    return market.with_prices(ce_prices(market.values(), "mid").prices)


def identity_market(values, prices=None) -> Market:
    """Market whose value matrix is exactly `values` (X = identity, B = values)."""
    V = np.asarray(values, dtype=float)
    n, m = V.shape
    p = np.zeros(m) if prices is None else np.asarray(prices, dtype=float)
    return Market(item_features=np.eye(m), prices=p, user_features=np.zeros((n, 0)), preferences=V)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(autouse=True)
def _isolated_settings(monkeypatch, tmp_path):
    monkeypatch.delenv("DECONGEST_RECORD_RUNTIME", raising=False)
    monkeypatch.delenv("DECONGEST_ENUM_CAP", raising=False)
    monkeypatch.setenv("DECONGEST_OUTPUT_ROOT", str(tmp_path / "results"))
