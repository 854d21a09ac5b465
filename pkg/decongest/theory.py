# decongest/theory.py
"""Executable checks of the congestion-monotonicity and restricted-optimality results on
concrete instances.

An admissible allocation assigns each allocated agent its perceived best response and gives
every item to at most one agent; `allocate(choices, "realized")` always produces one."""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Iterator, Optional

import numpy as np
import pandas as pd
import structlog
from joblib import Parallel, delayed

from .errors import AdmissibilityError, HypothesesNotMet, InvalidArgumentError
from .market import Impute, allocate, choose, perceived_values
from .models import Allocation, ConditionReport, Market, Mask, RandomizedAllocation
from .pricing import ce_prices, solve_assignment
from .utils import task_rng

log = structlog.get_logger()

MARGIN_CAP = 1e6
TOL = 1e-12
OPT_TOL = 1e-9
MAX_BRUTE_FORCE = 6
MAX_SUPPORT = 100_000


# --------------------------- Congestion monotonicity ---------------------------

def prop1_condition(values: np.ndarray) -> bool:
    """(v_max - v_min) / v_min <= 1/(m-1); vacuous for a single item."""
    V = np.asarray(values, dtype=float)
    v_min = float(V.min())
    if v_min <= 0:
        raise InvalidArgumentError("the value-spread condition needs strictly positive values")
    m = V.shape[1]
    if m == 1:
        return True
    return (float(V.max()) - v_min) / v_min <= 1.0 / (m - 1) + TOL


def _partial_matchings(n: int, m: int) -> Iterator[tuple[int, ...]]:
    """Every feasible partial allocation as a per-agent item index (-1 = none)."""

    def extend(agent: int, used: frozenset[int], acc: tuple[int, ...]) -> Iterator[tuple[int, ...]]:
        if agent == n:
            yield acc
            return
        yield from extend(agent + 1, used, acc + (-1,))
        for j in range(m):
            if j not in used:
                yield from extend(agent + 1, used | {j}, acc + (j,))

    yield from extend(0, frozenset(), ())


def brute_force_monotone(values: np.ndarray) -> bool:
    """Every allocation of s items is at least as good as any allocation of fewer items."""
    V = np.asarray(values, dtype=float)
    n, m = V.shape
    if max(n, m) > MAX_BRUTE_FORCE:
        raise InvalidArgumentError(f"brute force limited to n, m <= {MAX_BRUTE_FORCE}, got {n}×{m}")

    size = min(n, m)
    lo = np.full(size + 1, np.inf)
    hi = np.full(size + 1, -np.inf)
    for match in _partial_matchings(n, m):
        s = sum(1 for j in match if j >= 0)
        w = sum(V[i, j] for i, j in enumerate(match) if j >= 0)
        lo[s] = min(lo[s], w)
        hi[s] = max(hi[s], w)
    return bool(np.all(lo[1:] >= hi[:-1] - TOL))


# --------------------------- Admissibility and margin ---------------------------

def _assignment(alloc: Allocation) -> np.ndarray:
    """Per-agent allocated item (-1 = none) of an integral allocation."""
    a = alloc.matrix
    if not alloc.is_feasible() or not np.all(np.isin(a, (0.0, 1.0))):
        raise AdmissibilityError("allocation must be a feasible 0/1 matrix")
    return np.where(a.any(axis=1), a.argmax(axis=1), -1)


def is_admissible(market: Market, mask: Mask, alloc: Allocation, impute: Impute = "zero") -> bool:
    if alloc.matrix.shape != (market.n, market.m):
        return False
    try:
        assigned = _assignment(alloc)
    except AdmissibilityError:
        return False
    best = choose(market, mask, impute).choices - 1
    agents = assigned >= 0
    return bool(np.all(assigned[agents] == best[agents]))


def admissible_allocation(
    market: Market, mask: Mask, seed: int | np.random.Generator | None = 0, impute: Impute = "zero"
) -> Allocation:
    """One realized draw of the congested market: an admissible allocation."""
    return allocate(choose(market, mask, impute), "realized", rng_seed=seed)


def _require_admissible(market: Market, mask: Mask, alloc: Allocation, impute: Impute) -> np.ndarray:
    if not is_admissible(market, mask, alloc, impute):
        raise AdmissibilityError("agents may only be allocated their perceived best-response item")
    return _assignment(alloc)


def margin(
    market: Market,
    mask: Mask,
    alloc: Allocation,
    impute: Impute = "zero",
    cap: float = MARGIN_CAP,
) -> float:
    """Smallest perceived-utility lead of an allocated agent's item over the other allocated
    items, floored at 0; capped when no agent faces a competing allocated item."""
    assigned = _require_admissible(market, mask, alloc, impute)
    agents = np.flatnonzero(assigned >= 0)
    items = assigned[agents]
    utility = perceived_values(market, mask, impute).perceived_values - market.prices[None, :]

    delta = cap
    for i, own in zip(agents, items):
        others = items[items != own]
        if others.size:
            delta = min(delta, float(utility[i, own] - utility[i, others].max()))
    return max(delta, 0.0)


# --------------------------- Restricted optimality ---------------------------

def _restricted_optimal(values: np.ndarray, alloc: Allocation, tol: float) -> bool:
    assigned = _assignment(alloc)
    agents = np.flatnonzero(assigned >= 0)
    if agents.size == 0:
        return True
    items = assigned[agents]
    achieved = float(values[agents, items].sum())
    return solve_assignment(values[np.ix_(agents, items)]).objective <= achieved + tol


def restricted_optimal(market: Market, alloc: Allocation, tol: float = OPT_TOL) -> bool:
    """Welfare-optimal at true values among the allocated agents and items."""
    return _restricted_optimal(market.values(), alloc, tol)


def _max_pairwise_l1(rows: np.ndarray) -> float:
    if rows.shape[0] < 2:
        return 0.0
    return float(np.abs(rows[:, None, :] - rows[None, :, :]).sum(axis=-1).max())


_CONDITION_KEYS = (
    "condition_1",
    "condition_2",
    "condition_3",
    "condition_3_top_item",
    "condition_3_price_variation",
    "condition_4",
    "condition_5",
    "lemma2",
    "column_dominance",
    "pointing_consistency",
    "pointing_consistency_all_items",
)


def check_conditions(
    market: Market,
    mask: Mask,
    alloc: Allocation,
    delta: Optional[float] = None,
    impute: Impute = "zero",
) -> ConditionReport:
    """Evaluate the sufficient conditions for restricted optimality with margin `delta`.

    Each entry of `slack` is (bound - observed); a condition holds when its slack is >= 0."""
    assigned = _require_admissible(market, mask, alloc, impute)
    delta = margin(market, mask, alloc, impute) if delta is None else delta
    if delta < 0:
        raise InvalidArgumentError(f"margin must be non-negative, got {delta}")

    agents = np.flatnonzero(assigned >= 0)
    items = assigned[agents]
    B = market.require_preferences("condition checks")
    X = market.item_features
    p = market.prices
    hidden = 1.0 - mask.as_float()
    view = perceived_values(market, mask, impute)
    v_true, v_seen, v_hid = view.true_values, view.perceived_values, view.hidden_values

    slack: dict[str, float] = {}
    if agents.size == 0:
        report = ConditionReport(margin=delta, bounded_inputs=True)
        for key in _CONDITION_KEYS:
            report.holds[key] = True
            report.slack[key] = delta
        return report

    XG = X[items] * hidden
    BN = B[agents] * hidden
    slack["condition_1"] = delta - _max_pairwise_l1(XG)
    slack["condition_2"] = delta - float(np.abs(BN).sum(axis=1).max())

    seen_G = v_seen[np.ix_(agents, items)]
    hid_G = v_hid[np.ix_(agents, items)]
    is_top = seen_G >= seen_G.max(axis=1, keepdims=True) - TOL
    top_gap = hid_G + delta - hid_G.max(axis=1, keepdims=True)
    slack["condition_3_top_item"] = float(top_gap[is_top].min())
    slack["condition_3_price_variation"] = delta - float(np.ptp(p[items]))
    slack["condition_3"] = min(slack["condition_3_top_item"], slack["condition_3_price_variation"])

    slack["condition_4"] = delta - float(np.abs(XG).sum(axis=1).max())
    slack["condition_5"] = delta - _max_pairwise_l1(BN)

    own = np.arange(agents.size)
    slack["lemma2"] = float((hid_G[own, own][:, None] - hid_G + delta).min())
    slack["column_dominance"] = float((hid_G[own, own][None, :] - hid_G + delta).min())

    true_util = v_true - p[None, :]
    own_util = true_util[agents, items]
    slack["pointing_consistency"] = float((own_util - true_util[np.ix_(agents, items)].max(axis=1)).min())
    best_anywhere = np.maximum(true_util[agents].max(axis=1), 0.0)
    slack["pointing_consistency_all_items"] = float((own_util - best_anywhere).min())

    bounded = bool(
        np.all((X >= 0) & (X <= 1))
        and np.all((B >= 0) & (B <= 1))
        and market.value_power == 1.0
        and impute == "zero"
    )
    report = ConditionReport(margin=delta, slack=slack, bounded_inputs=bounded)
    report.holds = {key: value >= -TOL for key, value in slack.items()}
    return report


# --------------------------- Randomized allocations ---------------------------

def _support(alloc: RandomizedAllocation) -> Iterator[dict[int, int]]:
    """Every deterministic allocation (item -> agent) in the support, equally likely."""
    items = sorted(alloc.competitors)
    for winners in itertools.product(*(alloc.competitors[j] for j in items)):
        yield dict(zip(items, winners))


def _support_size(alloc: RandomizedAllocation) -> int:
    return int(np.prod([len(a) for a in alloc.competitors.values()], dtype=np.int64))


def randomized_welfare(alloc: RandomizedAllocation, values: np.ndarray) -> float:
    """Exact expected welfare, by enumerating the product-structure support."""
    V = np.asarray(values, dtype=float)
    if _support_size(alloc) > MAX_SUPPORT:
        raise InvalidArgumentError(f"support of {_support_size(alloc)} allocations exceeds {MAX_SUPPORT}")
    total, count = 0.0, 0
    for outcome in _support(alloc):
        total += sum(V[i, j] for j, i in outcome.items())
        count += 1
    return total / count if count else 0.0


def _outcome_allocation(outcome: dict[int, int], shape: tuple[int, int]) -> Allocation:
    a = np.zeros(shape)
    for j, i in outcome.items():
        a[i, j] = 1.0
    return Allocation("realized", a)


@dataclass(frozen=True)
class Theorem1Verdict:
    welfare_a: float
    welfare_b: float
    strict_expected: bool

    @property
    def holds(self) -> bool:
        return self.welfare_b >= self.welfare_a - TOL

    @property
    def strict(self) -> bool:
        return self.welfare_b > self.welfare_a + TOL

    def to_dict(self) -> dict[str, object]:
        return {
            "welfare_a": self.welfare_a,
            "welfare_b": self.welfare_b,
            "holds": self.holds,
            "strict": self.strict,
            "strict_expected": self.strict_expected,
        }


def extends(b: RandomizedAllocation, a: RandomizedAllocation, n: int) -> bool:
    """B allocates every item A does and no agent wins less often under B."""
    if not a.items <= b.items:
        return False
    return all(b.win_probability(i) >= a.win_probability(i) - TOL for i in range(n))


def theorem1_check(a: RandomizedAllocation, b: RandomizedAllocation, values: np.ndarray) -> Theorem1Verdict:
    """W(B) >= W(A) when B extends A and every allocation B can realize is restricted optimal."""
    V = np.asarray(values, dtype=float)
    n, m = V.shape
    for alloc in (a, b):
        agents = [i for group in alloc.competitors.values() for i in group]
        if any(not 0 <= i < n for i in agents) or any(not 0 <= j < m for j in alloc.items):
            raise InvalidArgumentError("randomized allocation refers to agents or items outside the market")
    if not a.items <= b.items:
        raise HypothesesNotMet(f"B drops items {sorted(a.items - b.items)}")
    if not extends(b, a, n):
        raise HypothesesNotMet("some agent wins less often under B")
    if _support_size(b) > MAX_SUPPORT:
        raise InvalidArgumentError(f"support of {_support_size(b)} allocations exceeds {MAX_SUPPORT}")

    for outcome in _support(b):
        if not _restricted_optimal(V, _outcome_allocation(outcome, (n, m)), OPT_TOL):
            raise HypothesesNotMet(f"B's realization {outcome} is not restricted optimal")

    strict_expected = bool(np.all(V > 0) and len(b.items) > len(a.items))
    return Theorem1Verdict(randomized_welfare(a, V), randomized_welfare(b, V), strict_expected)


# --------------------------- Randomized sweeps ---------------------------

def random_condition_instance(
    rng: np.random.Generator, n: int = 4, m: int = 4, d: int = 6
) -> tuple[Market, Mask, Allocation]:
    """Bounded features and preferences, CE prices, a random mask and one admissible draw."""
    X = rng.uniform(0.0, 1.0, size=(m, d))
    B = rng.uniform(0.0, 1.0, size=(n, d)) / d
    market = Market(item_features=X, prices=np.zeros(m), user_features=np.zeros((n, 0)), preferences=B)
    market = market.with_prices(ce_prices(market.values(), "mid").prices)
    k = int(rng.integers(0, d + 1))
    mask = Mask.from_indices(rng.choice(d, size=k, replace=False), d)
    return market, mask, admissible_allocation(market, mask, rng)


def _condition_row(master_seed: int, index: int, n: int, m: int, d: int) -> dict[str, object]:
    rng = task_rng(master_seed, "conditions", index)
    market, mask, alloc = random_condition_instance(rng, n, m, d)
    report = check_conditions(market, mask, alloc)
    row: dict[str, object] = {"instance": index, "k": mask.k, "mask": mask.to_bits(), "margin": report.margin}
    row.update(report.holds)
    row["restricted_optimal"] = restricted_optimal(market, alloc)
    return row


def condition_sweep(
    instances: int = 500, seed: int = 0, n: int = 4, m: int = 4, d: int = 6, jobs: int = 1
) -> pd.DataFrame:
    """One row per random instance: which conditions held and whether the draw was restricted optimal."""
    rows = Parallel(n_jobs=jobs)(delayed(_condition_row)(seed, i, n, m, d) for i in range(instances))
    frame = pd.DataFrame(rows)
    log.info(
        "condition_sweep_done",
        instances=instances,
        any_condition=int(frame[[f"condition_{c}" for c in range(1, 6)]].any(axis=1).sum()),
        restricted_optimal=int(frame["restricted_optimal"].sum()),
    )
    return frame


def condition_counterexamples(frame: pd.DataFrame) -> pd.DataFrame:
    held = frame[[f"condition_{c}" for c in range(1, 6)]].any(axis=1)
    return frame[held & ~frame["restricted_optimal"]]


def monotonicity_sweep(instances: int = 500, seed: int = 0, max_size: int = 4) -> pd.DataFrame:
    """Random positive-valued markets: does the value-spread condition imply monotonicity?"""
    rows = []
    for index in range(instances):
        rng = task_rng(seed, "monotone", index)
        n, m = (int(x) for x in rng.integers(1, max_size + 1, size=2))
        # narrow spreads so the condition holds on a fair share of draws
        V = rng.uniform(1.0, 1.0 + rng.uniform(0.0, 2.0 / m), size=(n, m))
        rows.append(
            {
                "instance": index,
                "n": n,
                "m": m,
                "prop1": prop1_condition(V),
                "monotone": brute_force_monotone(V),
            }
        )
    return pd.DataFrame(rows)


def random_theorem1_pair(
    rng: np.random.Generator, n: int = 4, m: int = 4
) -> tuple[RandomizedAllocation, RandomizedAllocation, np.ndarray]:
    """A congested A and a B that extends it and realizes only the optimal restricted matching."""
    V = rng.uniform(0.05, 1.0, size=(n, m))
    optimum = solve_assignment(V)
    matched = [(int(i), int(j)) for i, j in enumerate(optimum.assignment) if j >= 0]
    b = RandomizedAllocation({j: (i,) for i, j in matched})

    keep = rng.choice(len(matched), size=int(rng.integers(1, len(matched) + 1)), replace=False)
    kept = [matched[t] for t in sorted(keep)]
    # A: a subset of B's items, optionally with two of B's winners contesting one item
    groups = {j: (i,) for i, j in kept}
    if len(kept) >= 2 and rng.uniform() < 0.5:
        (i1, j1), (i2, j2) = kept[0], kept[1]
        groups.pop(j2)
        groups[j1] = (i1, i2)
    return RandomizedAllocation(groups), b, V
