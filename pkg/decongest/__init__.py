__all__ = ["RESULT_HEADER", "SCHEMA_VERSION", "__version__"]

__version__ = "0.1.0"

# Schema version written into every JSON artifact (markets, pools, datasets, weights)
SCHEMA_VERSION = 1

# Long-format result table, exact column order written to CSV
RESULT_HEADER = [
    "experiment",
    "method",
    "k",
    "alpha",
    "rho",
    "gamma",
    "epsilon",
    "lam",
    "seed",
    "fold",
    "welfare",
    "welfare_min",
    "welfare_max",
    "n_ties",
    "allocated_items",
    "congestion",
    "distortion",
    "kendalls_w",
    "mask",
    "master_seed",
    "config_hash",
    "runtime",
]
