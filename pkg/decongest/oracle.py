# decongest/oracle.py
"""Exhaustive mask search on small markets."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Optional, Sequence

import numpy as np
import pandas as pd
import structlog
from joblib import Parallel, delayed

from .config import get_settings
from .errors import EnumerationCapError, InvalidArgumentError
from .market import (
    Impute,
    allocate,
    best_responses,
    choose,
    kendalls_w,
    perceived_values,
    perceptive_distortion,
    welfare,
)
from .models import Market, Mask, PredictorWeights
from .objectives import default_lambda, proxy_welfare

log = structlog.get_logger()

CHUNK = 2048
TIE_TOL = 1e-12


class ObjectiveKind(str, Enum):
    WELFARE_ORACLE = "welfare_oracle"
    PREDICTIVE_ORACLE = "predictive_oracle"
    SELECTION_ONLY = "selection_only"
    DECONGESTION_ONLY = "decongestion_only"
    LOWER_BOUND = "lower_bound"
    PROXY = "proxy"


ALL_KINDS: tuple[ObjectiveKind, ...] = tuple(ObjectiveKind)


def enumerate_masks(d: int, k: int) -> np.ndarray:
    """All k-subsets of d features as a boolean (C(d,k), d) matrix, lexicographic order."""
    if not 0 <= k <= d:
        raise InvalidArgumentError(f"need 0 <= k <= d, got k={k}, d={d}")
    combos = list(itertools.combinations(range(d), k))
    bits = np.zeros((len(combos), d), dtype=bool)
    for row, idx in enumerate(combos):
        bits[row, list(idx)] = True
    return bits


def check_cap(d: int, k: int, cap: Optional[int] = None) -> int:
    cap = get_settings().DECONGEST_ENUM_CAP if cap is None else cap
    count = math.comb(d, k)
    if count > cap:
        raise EnumerationCapError(count, cap)
    return count


def evaluate_mask(
    market: Market,
    mask: Mask,
    kind: ObjectiveKind | str,
    predictor: Optional[PredictorWeights] = None,
    lam: Optional[float] = None,
    impute: Impute = "zero",
) -> float:
    """Objective value of one mask; every kind is maximized."""
    kind = ObjectiveKind(kind)
    if predictor is not None:
        from .predictor import predict_hard

        y = predict_hard(predictor, market, mask)
    else:
        y = choose(market, mask, impute)

    if kind is ObjectiveKind.WELFARE_ORACLE:
        return welfare(allocate(y, "expected"), market.values())
    if kind is ObjectiveKind.PREDICTIVE_ORACLE:
        return float(np.sum(y.indicator() * market.values()))

    lam = default_lambda(mask.k, mask.d) if lam is None else lam
    breakdown = proxy_welfare(y, market.prices, lam, with_no_choice_penalty=True)
    if kind is ObjectiveKind.SELECTION_ONLY:
        return breakdown.selection
    if kind is ObjectiveKind.DECONGESTION_ONLY:
        return -breakdown.decongestion
    if kind is ObjectiveKind.LOWER_BOUND:
        return breakdown.lower_bound
    return breakdown.combined


# --------------------------- Batched evaluation ---------------------------

def _masked_features(X: np.ndarray, bits: np.ndarray, impute: Impute) -> np.ndarray:
    if impute == "zero":
        return X[None, :, :] * bits[:, None, :]
    return np.where(bits[:, None, :], X[None, :, :], X.mean(axis=0)[None, None, :])


def batch_choices(market: Market, bits: np.ndarray, impute: Impute = "zero") -> np.ndarray:
    """Choice indices for many masks at once: (S, n), same rule as market.choose."""
    B = market.require_preferences("mask sweeps")
    Xm = _masked_features(market.item_features, bits, impute)
    perceived = np.clip(np.einsum("nd,smd->snm", B, Xm), 0.0, None)
    if market.value_power != 1.0:
        perceived = perceived**market.value_power
    return best_responses(perceived - market.prices[None, None, :])


def _chunk_stats(market: Market, bits: np.ndarray, lam: float, impute: Impute) -> dict[str, np.ndarray]:
    y = batch_choices(market, bits, impute)
    v = market.values()
    onehot = (y[:, :, None] == np.arange(1, market.m + 1)[None, None, :]).astype(float)
    counts = onehot.sum(axis=1)
    share = np.divide(1.0, counts, out=np.zeros_like(counts), where=counts > 0)
    chosen_value = np.einsum("snm,nm->sm", onehot, v)

    selection = counts @ market.prices
    decongestion = np.maximum(0.0, counts - 1.0).sum(axis=1)
    no_choice = (y == 0).sum(axis=1).astype(float)
    return {
        ObjectiveKind.WELFARE_ORACLE.value: (chosen_value * share).sum(axis=1),
        ObjectiveKind.PREDICTIVE_ORACLE.value: chosen_value.sum(axis=1),
        ObjectiveKind.SELECTION_ONLY.value: selection,
        ObjectiveKind.DECONGESTION_ONLY.value: -decongestion,
        ObjectiveKind.LOWER_BOUND.value: selection - decongestion,
        ObjectiveKind.PROXY.value: (1.0 - lam) * selection - lam * (decongestion + no_choice),
        "congestion": decongestion,
        "allocated_items": np.minimum(counts, 1.0).sum(axis=1),
    }


def _chunks(bits: np.ndarray) -> Iterable[np.ndarray]:
    for start in range(0, bits.shape[0], CHUNK):
        yield bits[start : start + CHUNK]


def _run_chunks(market: Market, bits: np.ndarray, lam: float, impute: Impute, jobs: int) -> dict[str, np.ndarray]:
    if jobs > 1 and bits.shape[0] > CHUNK:
        parts = Parallel(n_jobs=jobs)(
            delayed(_chunk_stats)(market, chunk, lam, impute) for chunk in _chunks(bits)
        )
    else:
        parts = [_chunk_stats(market, chunk, lam, impute) for chunk in _chunks(bits)]
    return {key: np.concatenate([p[key] for p in parts]) for key in parts[0]}


# --------------------------- Sweep ---------------------------

@dataclass
class MaskSweepResult:
    masks: np.ndarray  # (S, d) bool
    objectives: dict[str, np.ndarray]
    welfare: np.ndarray
    congestion: np.ndarray
    allocated_items: np.ndarray
    diagnostics: dict[str, np.ndarray] = field(default_factory=dict)

    def __len__(self) -> int:
        return int(self.masks.shape[0])

    def argmax(self, kind: ObjectiveKind | str) -> np.ndarray:
        """Indices of every mask within TIE_TOL of the best value for `kind`."""
        values = self.objectives[ObjectiveKind(kind).value]
        return np.flatnonzero(values >= values.max() - TIE_TOL)

    def argmax_masks(self, kind: ObjectiveKind | str) -> list[Mask]:
        return [Mask(self.masks[i]) for i in self.argmax(kind)]

    def welfare_at(self, kind: ObjectiveKind | str) -> tuple[float, float, float, int]:
        """(mean, min, max, count) of true welfare over the argmax set."""
        w = self.welfare[self.argmax(kind)]
        return float(w.mean()), float(w.min()), float(w.max()), int(w.size)

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(
            {
                "mask": ["".join("1" if b else "0" for b in row) for row in self.masks],
                "welfare": self.welfare,
                "congestion": self.congestion,
                "allocated_items": self.allocated_items,
            }
        )
        for name, values in self.objectives.items():
            frame[f"objective_{name}"] = values
        for name, values in self.diagnostics.items():
            frame[name] = values
        return frame


def sweep(
    market: Market,
    k: int,
    kinds: Sequence[ObjectiveKind | str] = ALL_KINDS,
    lam: Optional[float] = None,
    impute: Impute = "zero",
    diagnostics: Sequence[str] = (),
    pricer: str = "mid",
    cap: Optional[int] = None,
    jobs: int = 1,
) -> MaskSweepResult:
    """Evaluate every k-sized mask of a market, in lexicographic order."""
    market.require_preferences("mask sweeps")
    count = check_cap(market.d, k, cap)
    lam = default_lambda(k, market.d) if lam is None else lam
    bits = enumerate_masks(market.d, k)
    stats = _run_chunks(market, bits, lam, impute, jobs)

    wanted = {ObjectiveKind(kd).value for kd in kinds}
    wanted.add(ObjectiveKind.WELFARE_ORACLE.value)
    objectives = {name: stats[name] for name in (kd.value for kd in ALL_KINDS) if name in wanted}

    extra: dict[str, np.ndarray] = {}
    if "distortion" in diagnostics:
        extra["distortion"] = np.array(
            [perceptive_distortion(market, Mask(b), pricer, impute) for b in bits]  # type: ignore[arg-type]
        )
    if "kendalls_w" in diagnostics:
        extra["kendalls_w"] = np.array(
            [kendalls_w(perceived_values(market, Mask(b), impute)) for b in bits]
        )
    log.debug("mask_sweep_done", d=market.d, k=k, masks=count)
    return MaskSweepResult(
        masks=bits,
        objectives=objectives,
        welfare=stats[ObjectiveKind.WELFARE_ORACLE.value],
        congestion=stats["congestion"],
        allocated_items=stats["allocated_items"],
        diagnostics=extra,
    )


def best_mask_by_welfare(
    markets: Sequence[Market],
    k: int,
    impute: Impute = "zero",
    cap: Optional[int] = None,
    jobs: int = 1,
) -> tuple[Mask, float]:
    """Mask with the highest mean expected welfare across markets (first in lexicographic order on ties)."""
    if not markets:
        raise InvalidArgumentError("need at least one market")
    d = markets[0].d
    check_cap(d, k, cap)
    bits = enumerate_masks(d, k)
    total = np.zeros(bits.shape[0])
    for market in markets:
        total += _run_chunks(market, bits, 0.5, impute, jobs)[ObjectiveKind.WELFARE_ORACLE.value]
    best = int(np.argmax(total))
    return Mask(bits[best]), float(total[best] / len(markets))

