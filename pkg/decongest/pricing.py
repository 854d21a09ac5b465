# decongest/pricing.py
"""Optimal assignment, competitive-equilibrium price lattice and the price schemes used
by the experiments."""
from __future__ import annotations

from typing import Literal, Optional

import numpy as np
import structlog
from scipy.sparse.csgraph import NegativeCycleError, csgraph_from_dense, floyd_warshall

from .config import PriceScheme
from .errors import InvalidArgumentError, PricingError
from .models import Market, PricingSolution

log = structlog.get_logger()

PriceLevel = Literal["buyer", "mid", "seller", "first_stage"]

EDGE_SLACK = 1e-12

# --------------------------- Hungarian (first stage) ---------------------------

def _hungarian_min(cost: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Square min-cost assignment with row/column potentials (1-indexed internally).

    Returns (col_of_row, u, v) with u_i + v_j <= cost_ij and equality on the assignment."""
    n = cost.shape[0]
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    p = np.zeros(n + 1, dtype=np.int64)  # p[j] = row assigned to column j
    way = np.zeros(n + 1, dtype=np.int64)

    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(n + 1, np.inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = p[j0]
            free = np.flatnonzero(~used[1:]) + 1
            cur = cost[i0 - 1, free - 1] - u[i0] - v[free]
            better = cur < minv[free]
            minv[free[better]] = cur[better]
            way[free[better]] = j0
            j1 = int(free[np.argmin(minv[free])])
            delta = minv[j1]

            used_cols = np.flatnonzero(used)
            u[p[used_cols]] += delta
            v[used_cols] -= delta
            minv[free] -= delta

            j0 = j1
            if p[j0] == 0:
                break

        while True:
            j1 = int(way[j0])
            p[j0] = p[j1]
            j0 = j1
            if j0 == 0:
                break

    col_of_row = np.empty(n, dtype=np.int64)
    col_of_row[p[1:] - 1] = np.arange(n)
    return col_of_row, u[1:], v[1:]


def _check_values(values: np.ndarray) -> np.ndarray:
    V = np.asarray(values, dtype=float)
    if V.ndim != 2:
        raise PricingError("values must be an n×m matrix")
    if not np.all(np.isfinite(V)):
        raise PricingError("values must be finite")
    if np.any(V < 0):
        raise PricingError("values must be non-negative")
    return V


def solve_assignment(values: np.ndarray) -> PricingSolution:
    """Welfare-maximizing assignment plus non-negative complementary duals (p, π)."""
    V = _check_values(values)
    n, m = V.shape
    if n == 0 or m == 0:
        return PricingSolution(np.full(n, -1, dtype=np.int64), np.zeros(m), np.zeros(n), 0.0)

    size = max(n, m)
    padded = np.zeros((size, size))
    padded[:n, :m] = V
    col_of_row, u, v = _hungarian_min(-padded)

    profits = -u
    prices = -v
    # shift so the cheapest column is free; keeps duals feasible and non-negative
    shift = prices.min()
    prices = prices - shift
    profits = profits + shift
    prices = np.maximum(prices, 0.0)
    profits = np.maximum(profits, 0.0)

    assignment = col_of_row[:n].copy()
    assignment[assignment >= m] = -1
    objective = float(V[np.flatnonzero(assignment >= 0), assignment[assignment >= 0]].sum())
    log.debug("assignment_solved", n=n, m=m, objective=objective)
    return PricingSolution(assignment, prices[:m].copy(), profits[:n].copy(), objective)


# --------------------------- Price lattice (second stage) ---------------------------

def _difference_constraints(V: np.ndarray, assignment: np.ndarray) -> np.ndarray:
    """Edge weights over nodes {0: zero price, 1..m: items}. Constraint p_a - p_b <= w is the
    edge b -> a with weight w; a missing edge is +inf."""
    n, m = V.shape
    W = np.full((m + 1, m + 1), np.inf)

    def tighten(b: int, a: int, w: float) -> None:
        if w < W[b, a]:
            W[b, a] = w

    sold = np.zeros(m, dtype=bool)
    for i in range(n):
        s = int(assignment[i])
        if s >= 0:
            sold[s] = True
            tighten(0, s + 1, V[i, s])
            for k in range(m):
                if k != s:
                    tighten(k + 1, s + 1, V[i, s] - V[i, k])
        else:
            for k in range(m):
                tighten(k + 1, 0, -V[i, k])
    for j in range(m):
        tighten(j + 1, 0, 0.0)
        if not sold[j]:
            tighten(0, j + 1, 0.0)
    np.fill_diagonal(W, np.inf)
    return W


def _profits_for(V: np.ndarray, assignment: np.ndarray, prices: np.ndarray) -> np.ndarray:
    profits = np.zeros(V.shape[0])
    users = np.flatnonzero(assignment >= 0)
    profits[users] = V[users, assignment[users]] - prices[assignment[users]]
    return np.maximum(profits, 0.0)


def _negative_cycle_depth(W: np.ndarray) -> float:
    D = W.copy()
    np.fill_diagonal(D, 0.0)
    for k in range(D.shape[0]):
        D = np.minimum(D, D[:, k : k + 1] + D[k : k + 1, :])
    return float(-min(np.diag(D).min(), 0.0))


def _price_bounds(V: np.ndarray, first: PricingSolution) -> tuple[np.ndarray, np.ndarray]:
    m = V.shape[1]
    if m == 0:
        return np.zeros(0), np.zeros(0)
    W = _difference_constraints(V, first.assignment)
    finite = np.isfinite(W)
    W = np.where(finite, W + EDGE_SLACK, np.inf)
    graph = csgraph_from_dense(W, null_value=np.inf)
    try:
        dist = floyd_warshall(graph, directed=True)
    except NegativeCycleError as e:
        residual = _negative_cycle_depth(np.where(finite, W - EDGE_SLACK, np.inf))
        raise PricingError("infeasible second stage: CE constraints contain a negative cycle", residual) from e

    seller = dist[0, 1:]
    buyer = -dist[1:, 0]
    if not (np.all(np.isfinite(seller)) and np.all(np.isfinite(buyer))):
        raise PricingError("infeasible second stage: unbounded price extremization")
    buyer = np.clip(buyer, 0.0, None)
    seller = np.clip(seller, 0.0, None)
    gap = float(np.max(buyer - seller, initial=0.0))
    if gap > 1e-7:
        raise PricingError("infeasible second stage: buyer prices exceed seller prices", gap)
    return buyer, np.maximum(seller, buyer)


def ce_prices(values: np.ndarray, which: PriceLevel = "mid") -> PricingSolution:
    """Competitive-equilibrium prices at a chosen point of the price lattice."""
    V = _check_values(values)
    first = solve_assignment(V)
    if which == "first_stage":
        return first
    buyer, seller = _price_bounds(V, first)
    if which == "buyer":
        prices = buyer
    elif which == "seller":
        prices = seller
    elif which == "mid":
        prices = 0.5 * (buyer + seller)
    else:
        raise InvalidArgumentError(f"unknown price level: {which!r}")
    return PricingSolution(first.assignment, prices, _profits_for(V, first.assignment, prices), first.objective)


def buyer_optimal_prices(values: np.ndarray) -> PricingSolution:
    return ce_prices(values, "buyer")


def seller_optimal_prices(values: np.ndarray) -> PricingSolution:
    return ce_prices(values, "seller")


def interpolate_ce(values: np.ndarray, gamma: float) -> np.ndarray:
    """γ=0 buyer-optimal, γ=0.5 lattice midpoint, γ=1 seller-optimal, linear in between."""
    if not 0.0 <= gamma <= 1.0:
        raise InvalidArgumentError(f"gamma must be in [0, 1], got {gamma}")
    V = _check_values(values)
    buyer, seller = _price_bounds(V, solve_assignment(V))
    mid = 0.5 * (buyer + seller)
    if gamma <= 0.5:
        t = gamma / 0.5
        return (1.0 - t) * buyer + t * mid
    t = (gamma - 0.5) / 0.5
    return (1.0 - t) * mid + t * seller


def is_competitive_equilibrium(
    values: np.ndarray, assignment: np.ndarray, prices: np.ndarray, tol: float = 1e-9
) -> bool:
    V = np.asarray(values, dtype=float)
    p = np.asarray(prices, dtype=float)
    if np.any(p < -tol):
        return False
    utilities = V - p[None, :]
    best = np.maximum(utilities.max(axis=1, initial=0.0), 0.0)
    sold = np.zeros(V.shape[1], dtype=bool)
    for i, j in enumerate(np.asarray(assignment)):
        if j >= 0:
            sold[j] = True
            if utilities[i, j] < best[i] - tol:
                return False
        elif best[i] > tol:
            return False
    return bool(np.all(sold | (p <= tol)))


# --------------------------- Schemes ---------------------------

def heuristic_prices(values: np.ndarray) -> np.ndarray:
    return np.asarray(values, dtype=float).mean(axis=0)


def apply_scheme(
    market: Market, scheme: PriceScheme, rng: Optional[np.random.Generator] = None
) -> np.ndarray:
    """Prices for a market under a scheme; noise comes from `rng` (defaults to scheme.seed)."""
    rng = rng if rng is not None else np.random.default_rng(scheme.seed)
    V = market.values()

    if scheme.kind == "ce_mid":
        prices = ce_prices(V, "mid").prices
    elif scheme.kind == "ce_interpolated":
        prices = interpolate_ce(V, scheme.gamma)
    elif scheme.kind == "ce_noisy_values":
        noisy = V + scheme.epsilon * rng.uniform(0.0, 1.0, size=V.shape)
        prices = ce_prices(noisy, "mid").prices
    elif scheme.kind == "ce_noisy_prices":
        base = ce_prices(V, "mid").prices
        prices = base + scheme.epsilon * rng.uniform(0.0, 1.0, size=base.shape)
    elif scheme.kind == "heuristic_avg_value":
        prices = heuristic_prices(V)
    elif scheme.kind == "interpolate_to_heuristic":
        base = ce_prices(V, "mid").prices
        prices = (1.0 - scheme.weight) * base + scheme.weight * heuristic_prices(V)
    else:
        raise InvalidArgumentError(f"unknown price scheme: {scheme.kind!r}")
    return np.clip(prices, 0.0, None)
