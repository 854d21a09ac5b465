# decongest/data/nmf.py
from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Optional

import numpy as np
import structlog

from .. import SCHEMA_VERSION
from ..errors import DataError
from .ratings import RatingTriples

log = structlog.get_logger()

EPS = 1e-16
PREFERENCE_SCALE = 5.0


def masked_objective(R: np.ndarray, M: np.ndarray, B: np.ndarray, X: np.ndarray) -> float:
    return 0.5 * float(np.sum((M * (R - B @ X.T)) ** 2))


def nmf_masked(
    R: np.ndarray,
    M: np.ndarray,
    d: int,
    iters: int = 500,
    seed: int | None = 0,
    history: Optional[list[float]] = None,
) -> tuple[np.ndarray, np.ndarray]:
    """R ≈ B Xᵀ on observed entries (M=1) with B, X >= 0, by weighted multiplicative updates.

    `history`, when given, receives the objective after every iteration."""
    if d > min(R.shape):
        raise DataError(f"d={d} exceeds the rank bound min{R.shape}={min(R.shape)}")
    if np.any(R[M > 0] < 0):
        raise DataError("observed entries must be non-negative")
    rng = np.random.default_rng(seed)
    observed_mean = float(R[M > 0].mean()) if np.any(M > 0) else 1.0
    scale = np.sqrt(max(observed_mean, EPS) / d)
    B = rng.uniform(0.1, 1.0, size=(R.shape[0], d)) * scale
    X = rng.uniform(0.1, 1.0, size=(R.shape[1], d)) * scale
    MR = M * R

    for _ in range(iters):
        B *= (MR @ X) / ((M * (B @ X.T)) @ X + EPS)
        X *= (MR.T @ B) / ((M * (B @ X.T)).T @ B + EPS)
        if history is not None:
            history.append(masked_objective(R, M, B, X))
    return B, X


@dataclass(frozen=True, eq=False)
class FactorizedPool:
    X: np.ndarray  # items × d
    B: np.ndarray  # users × d
    U: np.ndarray  # users × d'
    T: np.ndarray  # d × d', U Tᵀ ≈ B

    @property
    def d(self) -> int:
        return int(self.X.shape[1])

    @property
    def d_prime(self) -> int:
        return int(self.U.shape[1])

    def to_dict(self) -> dict[str, Any]:
        return {
            "schema_version": SCHEMA_VERSION,
            "X": self.X.tolist(),
            "B": self.B.tolist(),
            "U": self.U.tolist(),
            "T": self.T.tolist(),
        }

    @classmethod
    def from_dict(cls, payload: dict[str, Any]) -> "FactorizedPool":
        if payload.get("schema_version") != SCHEMA_VERSION:
            raise DataError(f"unsupported pool schema_version {payload.get('schema_version')!r}")
        return cls(*(np.asarray(payload[key], dtype=float) for key in ("X", "B", "U", "T")))


def factorize(
    ratings: RatingTriples,
    d: int,
    iters: int = 500,
    d_prime: Optional[int] = None,
    seed: int = 0,
) -> FactorizedPool:
    """Item features X and preferences B from observed ratings, then B ≈ U Tᵀ."""
    d_prime = max(1, d // 2) if d_prime is None else d_prime
    R, M = ratings.to_matrix()
    B, X = nmf_masked(R, M, d, iters, seed)
    B = B / PREFERENCE_SCALE

    top = float((B @ X.T).max(initial=0.0))
    if top > 1.0:
        log.info("pool_values_rescaled", factor=top)
        B = B / top

    U, T = nmf_masked(B, np.ones_like(B), d_prime, iters, seed + 1)
    log.info(
        "pool_factorized",
        users=B.shape[0],
        items=X.shape[0],
        d=d,
        d_prime=d_prime,
        objective=masked_objective(R, M, B * PREFERENCE_SCALE, X),
    )
    return FactorizedPool(X=X, B=B, U=U, T=T)
