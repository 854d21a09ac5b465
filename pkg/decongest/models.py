# decongest/models.py
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Any, List, Literal, Optional

import numpy as np

from . import RESULT_HEADER, SCHEMA_VERSION
from .errors import DataError, InvalidArgumentError, PreferencesRequiredError

VALUE_TOL = 1e-9
SOFT_SUM_TOL = 1e-6


def _frozen(a: Any, dtype: Any = float) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


# --------------------------- Market ---------------------------

@dataclass(frozen=True, eq=False)
class Market:
    """One sampled economy: m items (features X, prices p) and n users (features U,
    preferences B). True value of item j to user i is (β_iᵀx_j) ** value_power."""

    item_features: np.ndarray
    prices: np.ndarray
    user_features: np.ndarray
    preferences: Optional[np.ndarray] = None
    value_power: float = 1.0

    def __post_init__(self) -> None:
        X = _frozen(self.item_features)
        p = _frozen(self.prices)
        U = _frozen(self.user_features)
        if X.ndim != 2:
            raise DataError("item_features must be an m×d matrix")
        if p.shape != (X.shape[0],):
            raise DataError(f"prices must have length m={X.shape[0]}, got shape {p.shape}")
        if U.ndim != 2:
            raise DataError("user_features must be an n×d' matrix")
        if np.any(X < 0) or not np.all(np.isfinite(X)):
            raise DataError("item features must be finite and non-negative")
        if np.any(p < 0) or not np.all(np.isfinite(p)):
            raise DataError("prices must be finite and non-negative")
        if not 0.0 < self.value_power <= 1.0:
            raise DataError(f"value_power must be in (0, 1], got {self.value_power}")
        object.__setattr__(self, "item_features", X)
        object.__setattr__(self, "prices", p)
        object.__setattr__(self, "user_features", U)

        if self.preferences is not None:
            B = _frozen(self.preferences)
            if B.ndim != 2 or B.shape[1] != X.shape[1]:
                raise DataError(f"preferences must be n×{X.shape[1]}, got shape {B.shape}")
            if U.shape[0] not in (0, B.shape[0]):
                raise DataError("user_features and preferences disagree on n")
            if np.any(B < 0) or not np.all(np.isfinite(B)):
                raise DataError("preferences must be finite and non-negative")
            object.__setattr__(self, "preferences", B)
            v = self.values()
            if v.size and v.max() > 1.0 + VALUE_TOL:
                raise DataError(f"values must lie in [0, 1], max is {v.max():.6f}")

    @property
    def m(self) -> int:
        return int(self.item_features.shape[0])

    @property
    def d(self) -> int:
        return int(self.item_features.shape[1])

    @property
    def n(self) -> int:
        if self.preferences is not None:
            return int(self.preferences.shape[0])
        return int(self.user_features.shape[0])

    @property
    def has_preferences(self) -> bool:
        return self.preferences is not None

    def require_preferences(self, what: str = "this operation") -> np.ndarray:
        if self.preferences is None:
            raise PreferencesRequiredError(what)
        return self.preferences

    def values(self) -> np.ndarray:
        B = self.require_preferences("true values")
        raw = np.clip(B @ self.item_features.T, 0.0, None)
        return raw if self.value_power == 1.0 else raw**self.value_power

    def with_prices(self, prices: np.ndarray) -> "Market":
        return dataclasses.replace(self, prices=np.clip(np.asarray(prices, dtype=float), 0.0, None))

    def to_dict(self) -> dict[str, Any]:
        return {
            "schema_version": SCHEMA_VERSION,
            "item_features": self.item_features.tolist(),
            "prices": self.prices.tolist(),
            "user_features": self.user_features.tolist(),
            "preferences": None if self.preferences is None else self.preferences.tolist(),
            "value_power": self.value_power,
        }

    @classmethod
    def from_dict(cls, payload: dict[str, Any]) -> "Market":
        version = payload.get("schema_version")
        if version != SCHEMA_VERSION:
            raise DataError(f"unsupported market schema_version {version!r}")
        X = np.asarray(payload["item_features"], dtype=float)
        U = np.asarray(payload.get("user_features") or [], dtype=float)
        prefs = payload.get("preferences")
        n = len(prefs) if prefs is not None else len(U)
        return cls(
            item_features=X,
            prices=np.asarray(payload["prices"], dtype=float),
            user_features=U.reshape(n, -1) if U.size else np.zeros((n, 0)),
            preferences=None if prefs is None else np.asarray(prefs, dtype=float),
            value_power=float(payload.get("value_power", 1.0)),
        )


# --------------------------- Masks ---------------------------

@dataclass(frozen=True, eq=False)
class Mask:
    bits: np.ndarray

    def __post_init__(self) -> None:
        bits = np.asarray(self.bits)
        if bits.ndim != 1 or not np.all((bits == 0) | (bits == 1)):
            raise InvalidArgumentError("mask bits must be a 0/1 vector")
        object.__setattr__(self, "bits", _frozen(bits, dtype=bool))

    @property
    def d(self) -> int:
        return int(self.bits.shape[0])

    @property
    def k(self) -> int:
        return int(self.bits.sum())

    @property
    def indices(self) -> tuple[int, ...]:
        return tuple(int(i) for i in np.flatnonzero(self.bits))

    def as_float(self) -> np.ndarray:
        return self.bits.astype(float)

    def complement(self) -> "Mask":
        return Mask(~self.bits)

    def to_bits(self) -> str:
        return "".join("1" if b else "0" for b in self.bits)

    @classmethod
    def full(cls, d: int) -> "Mask":
        return cls(np.ones(d, dtype=bool))

    @classmethod
    def from_indices(cls, indices: Any, d: int) -> "Mask":
        bits = np.zeros(d, dtype=bool)
        bits[list(indices)] = True
        return cls(bits)

    @classmethod
    def from_bits(cls, text: str) -> "Mask":
        text = text.strip()
        if not text or set(text) - {"0", "1"}:
            raise InvalidArgumentError(f"mask bits must be a 0/1 string, got {text!r}")
        return cls(np.array([c == "1" for c in text], dtype=bool))

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Mask) and np.array_equal(self.bits, other.bits)

    def __hash__(self) -> int:
        return hash(self.bits.tobytes())

    def __repr__(self) -> str:
        return f"Mask({self.to_bits()})"


@dataclass(frozen=True, eq=False)
class SoftMask:
    """Relaxed k-subset: weights in [0, 1] summing to k (checked when k is given)."""

    weights: np.ndarray
    k: Optional[int] = None

    def __post_init__(self) -> None:
        w = _frozen(self.weights)
        if w.ndim != 1 or not np.all(np.isfinite(w)):
            raise InvalidArgumentError("soft mask weights must be a finite vector")
        if np.any(w < -VALUE_TOL) or np.any(w > 1.0 + VALUE_TOL):
            raise InvalidArgumentError("soft mask weights must lie in [0, 1]")
        if self.k is not None and abs(float(w.sum()) - self.k) > SOFT_SUM_TOL:
            raise InvalidArgumentError(f"soft mask weights sum to {w.sum():.9g}, expected k={self.k}")
        object.__setattr__(self, "weights", w)

    @property
    def d(self) -> int:
        return int(self.weights.shape[0])


@dataclass(frozen=True, eq=False)
class MaskDistribution:
    theta: np.ndarray
    temperature: float = 1.0

    def __post_init__(self) -> None:
        theta = _frozen(self.theta)
        if not np.all(np.isfinite(theta)):
            raise InvalidArgumentError("theta must be finite")
        if self.temperature <= 0:
            raise InvalidArgumentError("temperature must be positive")
        object.__setattr__(self, "theta", theta)

    @property
    def d(self) -> int:
        return int(self.theta.shape[0])

    def probabilities(self) -> np.ndarray:
        z = self.theta / self.temperature
        z = z - z.max()
        e = np.exp(z)
        return e / e.sum()

    def log_probabilities(self) -> np.ndarray:
        z = self.theta / self.temperature
        z = z - z.max()
        return z - np.log(np.exp(z).sum())

    def sample_bits(self, k: int, rng: np.random.Generator, size: int = 1) -> np.ndarray:
        """(size, d) boolean k-hot draws, sequential without replacement with probabilities
        proportional to softmax(θ/τ); implemented as Gumbel top-k on the log-probabilities."""
        if not 0 <= k <= self.d:
            raise InvalidArgumentError(f"need 0 <= k <= d, got k={k}, d={self.d}")
        keys = self.log_probabilities()[None, :] + rng.gumbel(size=(size, self.d))
        top = np.argsort(-keys, axis=1, kind="stable")[:, :k]
        bits = np.zeros((size, self.d), dtype=bool)
        np.put_along_axis(bits, top, True, axis=1)
        return bits


# --------------------------- Choices and allocations ---------------------------

@dataclass(frozen=True, eq=False)
class ChoiceProfile:
    """choices[i] in {0..m}; 0 is no-choice, j >= 1 is item j-1 (0-based column)."""

    choices: np.ndarray
    m: int

    def __post_init__(self) -> None:
        y = _frozen(self.choices, dtype=np.int64)
        if y.ndim != 1 or np.any(y < 0) or np.any(y > self.m):
            raise InvalidArgumentError(f"choices must be indices in 0..{self.m}")
        object.__setattr__(self, "choices", y)

    @property
    def n(self) -> int:
        return int(self.choices.shape[0])

    @property
    def demand_counts(self) -> np.ndarray:
        return np.bincount(self.choices, minlength=self.m + 1)[1:]

    @property
    def no_choice_count(self) -> int:
        return int(np.sum(self.choices == 0))

    def indicator(self) -> np.ndarray:
        """n×m matrix y_ij."""
        y = np.zeros((self.n, self.m))
        chosen = self.choices > 0
        y[np.flatnonzero(chosen), self.choices[chosen] - 1] = 1.0
        return y


@dataclass(frozen=True, eq=False)
class Allocation:
    kind: Literal["expected", "realized"]
    matrix: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "matrix", _frozen(self.matrix))

    def is_feasible(self, tol: float = 1e-12) -> bool:
        a = self.matrix
        return bool(
            np.all(a >= -tol)
            and np.all(a <= 1 + tol)
            and np.all(a.sum(axis=1) <= 1 + tol)
            and np.all(a.sum(axis=0) <= 1 + tol)
        )


@dataclass(frozen=True, eq=False)
class ValueView:
    true_values: np.ndarray
    perceived_values: np.ndarray

    @property
    def hidden_values(self) -> np.ndarray:
        return self.true_values - self.perceived_values


# --------------------------- Pricing / objectives ---------------------------

@dataclass(frozen=True, eq=False)
class PricingSolution:
    assignment: np.ndarray  # per user: item index or -1
    prices: np.ndarray
    profits: np.ndarray
    objective: float

    @property
    def n(self) -> int:
        return int(self.profits.shape[0])

    @property
    def m(self) -> int:
        return int(self.prices.shape[0])

    def allocation(self) -> Allocation:
        a = np.zeros((self.n, self.m))
        users = np.flatnonzero(self.assignment >= 0)
        a[users, self.assignment[users]] = 1.0
        return Allocation("realized", a)

    def dual_objective(self) -> float:
        return float(self.prices.sum() + self.profits.sum())

    def to_dict(self) -> dict[str, Any]:
        return {
            "assignment": self.assignment.tolist(),
            "prices": self.prices.tolist(),
            "profits": self.profits.tolist(),
            "objective": self.objective,
        }


@dataclass(frozen=True)
class ProxyBreakdown:
    selection: float
    decongestion: float
    no_choice_penalty: float
    lam: float
    combined: float

    @property
    def lower_bound(self) -> float:
        """Value-free welfare bound: selection minus decongestion."""
        return self.selection - self.decongestion


# --------------------------- Predictor data ---------------------------

@dataclass(frozen=True, eq=False)
class PredictorWeights:
    W: np.ndarray  # d'×d

    def __post_init__(self) -> None:
        W = _frozen(self.W)
        if W.ndim != 2 or not np.all(np.isfinite(W)):
            raise InvalidArgumentError("predictor weights must be a finite d'×d matrix")
        object.__setattr__(self, "W", W)

    def to_dict(self) -> dict[str, Any]:
        return {"schema_version": SCHEMA_VERSION, "shape": list(self.W.shape), "W": self.W.tolist()}

    @classmethod
    def from_dict(cls, payload: dict[str, Any]) -> "PredictorWeights":
        W = np.asarray(payload["W"], dtype=float).reshape(payload["shape"])
        return cls(W)


@dataclass(frozen=True, eq=False)
class ChoiceSample:
    market_index: int
    mask: Mask
    choices: np.ndarray
    propensity: Optional[float] = None
    weight: float = 1.0


@dataclass(frozen=True, eq=False)
class ChoiceDataset:
    markets: List[Market]
    samples: List[ChoiceSample]

    def __len__(self) -> int:
        return len(self.samples)

    def to_dict(self) -> dict[str, Any]:
        return {
            "schema_version": SCHEMA_VERSION,
            "markets": [mk.to_dict() for mk in self.markets],
            "samples": [
                {
                    "market_index": s.market_index,
                    "mask": s.mask.to_bits(),
                    "choices": np.asarray(s.choices).tolist(),
                    "propensity": s.propensity,
                    "weight": s.weight,
                }
                for s in self.samples
            ],
        }

    @classmethod
    def from_dict(cls, payload: dict[str, Any]) -> "ChoiceDataset":
        if payload.get("schema_version") != SCHEMA_VERSION:
            raise DataError(f"unsupported dataset schema_version {payload.get('schema_version')!r}")
        markets = [Market.from_dict(mk) for mk in payload["markets"]]
        samples = [
            ChoiceSample(
                market_index=int(s["market_index"]),
                mask=Mask.from_bits(s["mask"]),
                choices=np.asarray(s["choices"], dtype=np.int64),
                propensity=s.get("propensity"),
                weight=float(s.get("weight", 1.0)),
            )
            for s in payload["samples"]
        ]
        return cls(markets, samples)


# --------------------------- Theory ---------------------------

@dataclass(frozen=True)
class RandomizedAllocation:
    """Product-structure allocation: item j goes uniformly to one agent of competitors[j]."""

    competitors: dict[int, tuple[int, ...]]

    def __post_init__(self) -> None:
        seen: set[int] = set()
        for j, agents in self.competitors.items():
            if not agents:
                raise InvalidArgumentError(f"item {j} has an empty competitor set")
            if seen & set(agents):
                raise InvalidArgumentError("competitor sets must be pairwise disjoint")
            seen |= set(agents)

    @property
    def items(self) -> frozenset[int]:
        return frozenset(self.competitors)

    def win_probability(self, agent: int) -> float:
        for agents in self.competitors.values():
            if agent in agents:
                return 1.0 / len(agents)
        return 0.0


@dataclass
class ConditionReport:
    margin: float
    holds: dict[str, bool] = field(default_factory=dict)
    slack: dict[str, float] = field(default_factory=dict)
    bounded_inputs: bool = True

    def any_condition(self) -> bool:
        return any(self.holds.get(f"condition_{i}", False) for i in range(1, 6))

    def to_dict(self) -> dict[str, Any]:
        return {
            "margin": self.margin,
            "holds": dict(self.holds),
            "slack": dict(self.slack),
            "bounded_inputs": self.bounded_inputs,
        }


# --------------------------- Results ---------------------------

@dataclass
class ResultRow:
    experiment: str
    method: str
    k: Optional[int] = None
    alpha: Optional[float] = None
    rho: Optional[float] = None
    gamma: Optional[float] = None
    epsilon: Optional[float] = None
    lam: Optional[float] = None
    seed: Optional[int] = None
    fold: Optional[int] = None
    welfare: Optional[float] = None
    welfare_min: Optional[float] = None
    welfare_max: Optional[float] = None
    n_ties: Optional[int] = None
    allocated_items: Optional[float] = None
    congestion: Optional[float] = None
    distortion: Optional[float] = None
    kendalls_w: Optional[float] = None
    mask: Optional[str] = None
    master_seed: Optional[int] = None
    config_hash: Optional[str] = None
    runtime: Optional[float] = None

    @staticmethod
    def headers() -> List[str]:
        return RESULT_HEADER

    def as_row(self) -> List[Any]:
        # order must match headers()
        return [getattr(self, name) for name in RESULT_HEADER]
