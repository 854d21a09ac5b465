"""Market and choice-data generation: synthetic mixture markets, ratings ingestion and
factorization, market sampling and the default masking policy."""
from .markets import kfold_splits, markets_from_dict, markets_to_dict, sample_markets
from .mixture import MixtureSpec, apply_dispersion, make_mixture_market
from .nmf import FactorizedPool, factorize
from .policy import DefaultPolicy, default_policy, sample_dataset, uniform_mask_dataset
from .ratings import RatingTriples, ingest_ratings, synthetic_ratings, write_ratings

__all__ = [
    "DefaultPolicy",
    "FactorizedPool",
    "MixtureSpec",
    "RatingTriples",
    "apply_dispersion",
    "default_policy",
    "factorize",
    "ingest_ratings",
    "kfold_splits",
    "make_mixture_market",
    "markets_from_dict",
    "markets_to_dict",
    "sample_dataset",
    "sample_markets",
    "synthetic_ratings",
    "uniform_mask_dataset",
    "write_ratings",
]
