# decongest/experiments/learning.py
"""Learning study on factorized ratings data: predictor on default-policy data, mask
learner, deployed masks versus baselines and the enumeration oracle, on held-out folds."""
from __future__ import annotations

import time
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np
import pandas as pd
import structlog
from joblib import Parallel, delayed

from ..baselines import choice_pred_mask, price_pred_mask, random_baseline
from ..config import ExperimentConfig, PriceScheme, get_settings
from ..data import (
    FactorizedPool,
    default_policy,
    factorize,
    ingest_ratings,
    kfold_splits,
    sample_dataset,
    sample_markets,
    synthetic_ratings,
    uniform_mask_dataset,
)
from ..errors import ConfigError
from ..learner import deploy, fit
from ..market import Impute, allocated_items, choose, congestion_count, expected_welfare
from ..models import Market, Mask, ResultRow
from ..oracle import best_mask_by_welfare
from ..predictor import accuracy, train
from ..utils import read_json, task_seed
from .results import ResultTable, normalize, summarize

log = structlog.get_logger()


# --------------------------- Data ---------------------------

def load_pool(config: ExperimentConfig) -> FactorizedPool:
    data = config.data
    if data.kind == "pool":
        assert data.path is not None
        return FactorizedPool.from_dict(read_json(data.path))
    if data.kind == "ratings":
        assert data.path is not None
        ratings = ingest_ratings(data.path)
    elif data.kind == "synthetic_ratings":
        ratings = synthetic_ratings(
            data.synthetic_users,
            data.synthetic_items,
            config.d,
            data.synthetic_density,
            seed=task_seed(config.seed, "ratings"),
        )
    else:
        raise ConfigError(f"learning experiments need ratings, synthetic_ratings or pool data, got {data.kind}")
    return factorize(
        ratings, config.d, data.nmf_iters, config.effective_d_prime, seed=task_seed(config.seed, "nmf")
    )


def scheme_for(base: PriceScheme, gamma: Optional[float], epsilon: Optional[float]) -> PriceScheme:
    """Price scheme of one robustness grid point (None, None gives the configured scheme)."""
    if epsilon is not None:
        return PriceScheme(kind="ce_noisy_prices", epsilon=epsilon, seed=base.seed)
    if gamma is not None:
        return PriceScheme(kind="ce_interpolated", gamma=gamma, seed=base.seed)
    return base


def sample_set_markets(
    config: ExperimentConfig, pool: FactorizedPool, sample_set: int, scheme: PriceScheme
) -> list[Market]:
    return sample_markets(
        pool, config.m, config.n, config.markets, scheme, seed=task_seed(config.seed, "markets", sample_set)
    )


def fold_indices(config: ExperimentConfig, sample_set: int) -> list[tuple[np.ndarray, np.ndarray]]:
    splits = kfold_splits(config.markets, config.folds, seed=task_seed(config.seed, "folds", sample_set))
    return splits[: config.effective_splits]


# --------------------------- Per-fold pipeline ---------------------------

@dataclass(frozen=True)
class GridPoint:
    """Row labels of one sweep point; the fields double as the row's γ/ε/λ columns."""

    gamma: Optional[float] = None
    epsilon: Optional[float] = None
    lams: tuple[Optional[float], ...] = (None,)


def mask_row(
    method: str, mask: Mask, markets: Sequence[Market], impute: Impute, **labels: object
) -> ResultRow:
    welfare, items, congestion = [], [], []
    for market in markets:
        y = choose(market, mask, impute)
        welfare.append(expected_welfare(market, mask, impute))
        items.append(allocated_items(y))
        congestion.append(congestion_count(y))
    return ResultRow(
        experiment=str(labels.pop("experiment")),
        method=method,
        welfare=float(np.mean(welfare)),
        allocated_items=float(np.mean(items)),
        congestion=float(np.mean(congestion)),
        mask=mask.to_bits(),
        **labels,  # type: ignore[arg-type]
    )


def _fold_task(
    config: ExperimentConfig,
    pool: FactorizedPool,
    point: GridPoint,
    sample_set: int,
    fold: int,
) -> tuple[list[ResultRow], list[dict[str, object]]]:
    started = time.perf_counter()
    scheme = scheme_for(config.pricing, point.gamma, point.epsilon)
    markets = sample_set_markets(config, pool, sample_set, scheme)
    train_idx, test_idx = fold_indices(config, sample_set)[fold]
    train_markets = [markets[i] for i in train_idx]
    test_markets = [markets[i] for i in test_idx]
    d = pool.d
    oracle_ok = d <= config.oracle_max_d
    impute = config.impute
    master = config.seed

    rows: list[ResultRow] = []
    diagnostics: list[dict[str, object]] = []
    for k in config.k_values:
        labels = dict(experiment=config.experiment, k=k, gamma=point.gamma, epsilon=point.epsilon,
                      seed=sample_set, fold=fold)

        mean_prices = np.mean([mk.prices for mk in train_markets], axis=0)
        default_mask = price_pred_mask(train_markets[0].item_features, mean_prices, k)
        policy = default_policy(default_mask, d, k)
        dataset = sample_dataset(train_markets, policy, k, seed=task_seed(master, "policy", sample_set, fold, k))
        predictor_config = config.predictor.model_copy(
            update={"seed": task_seed(master, "predictor", sample_set, fold, k)}
        )
        predictor = train(dataset, predictor_config)
        counterfactual = uniform_mask_dataset(
            test_markets, k, seed=task_seed(master, "counterfactual", sample_set, fold, k)
        )
        diagnostics.append(
            {
                **{key: labels[key] for key in ("k", "gamma", "epsilon", "seed", "fold")},
                "train_accuracy": accuracy(predictor, dataset),
                "counterfactual_accuracy": accuracy(predictor, counterfactual),
            }
        )

        for lam in point.lams:
            learner_config = config.learner.model_copy(
                update={"k": k, "lam": lam, "seed": task_seed(master, "learner", sample_set, fold, k)}
            )
            result = fit(train_markets, predictor, learner_config)
            lam_labels = dict(labels, lam=result.lam)
            deploy_seed = task_seed(master, "deploy", sample_set, fold, k)

            topk = deploy(result, "topk", test_markets, impute=impute)
            rows.append(mask_row("dbr_topk", topk.masks[0], test_markets, impute, **lam_labels))
            committed = deploy(
                result, "committed_sample", test_markets, predictor, train_markets,
                samples=config.committed_draws, seed=deploy_seed, impute=impute,
            )
            rows.append(mask_row("dbr_committed", committed.masks[0], test_markets, impute, **lam_labels))
            policy_report = deploy(
                result, "policy", test_markets, samples=config.policy_draws, seed=deploy_seed, impute=impute
            )
            rows.append(
                ResultRow(
                    method="dbr_policy",
                    welfare=policy_report.mean_welfare,
                    welfare_min=float(np.min(policy_report.welfare)),
                    welfare_max=float(np.max(policy_report.welfare)),
                    mask="",
                    **lam_labels,  # type: ignore[arg-type]
                )
            )

        rows.append(mask_row("price_pred", default_mask, test_markets, impute, **labels))
        users = np.vstack([mk.user_features for mk in train_markets])
        rows.append(mask_row("choice_pred", choice_pred_mask(predictor, users, k), test_markets, impute, **labels))
        baseline = random_baseline(
            test_markets, k, config.random_draws, seed=task_seed(master, "random", sample_set, fold, k), impute=impute
        )
        rows.append(ResultRow(method="random", welfare=baseline.mean, mask="", **labels))  # type: ignore[arg-type]
        if oracle_ok:
            best, _ = best_mask_by_welfare(test_markets, k, impute, cap=get_settings().DECONGEST_ENUM_CAP)
            rows.append(mask_row("oracle", best, test_markets, impute, **labels))

    elapsed = time.perf_counter() - started
    for row in rows:
        row.runtime = elapsed
    log.info("fold_done", sample_set=sample_set, fold=fold, gamma=point.gamma, epsilon=point.epsilon, rows=len(rows))
    return rows, diagnostics


def _learning_study(config: ExperimentConfig, points: Sequence[GridPoint], jobs: int) -> ResultTable:
    pool = load_pool(config)
    if pool.d != config.d:
        raise ConfigError(f"pool has d={pool.d}, config expects d={config.d}")

    table = ResultTable.for_config(config)
    tasks = [
        (point, s, f)
        for point in points
        for s in range(config.sample_sets)
        for f in range(config.effective_splits)
    ]
    outputs = Parallel(n_jobs=jobs)(delayed(_fold_task)(config, pool, p, s, f) for p, s, f in tasks)
    predictor_rows: list[dict[str, object]] = []
    for rows, diagnostics in outputs:
        table.extend(rows)
        predictor_rows.extend(diagnostics)

    frame = table.to_frame()
    by = ("method", "k", "gamma", "epsilon", "lam")
    table.extras["summary"] = normalize(summarize(frame, by=by), by=("k", "gamma", "epsilon"))
    table.extras["predictor"] = pd.DataFrame(predictor_rows)
    log.info("learning_study_done", experiment=config.experiment, rows=len(table), replicates=len(tasks))
    return table


# --------------------------- Experiments ---------------------------

def run_fig4(config: ExperimentConfig, jobs: int = 1) -> ResultTable:
    return _learning_study(config, [GridPoint(lams=(config.learner.lam,))], jobs)


def run_price_robustness(config: ExperimentConfig, jobs: int = 1) -> ResultTable:
    """γ grid (buyer- to seller-optimal CE prices) and ε grid (additive price noise)."""
    points = [GridPoint(gamma=g, lams=(config.learner.lam,)) for g in config.gamma_grid]
    points += [GridPoint(epsilon=e, lams=(config.learner.lam,)) for e in config.epsilon_grid]
    return _learning_study(config, points, jobs)


def run_lambda_sweep(config: ExperimentConfig, jobs: int = 1) -> ResultTable:
    """Every λ of the grid plus the default 1 - k/(2d)."""
    lams: tuple[Optional[float], ...] = (*config.lambda_grid, None)
    return _learning_study(config, [GridPoint(lams=lams)], jobs)


# --------------------------- Recomputation ---------------------------

@lru_cache(maxsize=4)
def _cached_pool(config_json: str) -> FactorizedPool:
    return load_pool(ExperimentConfig.model_validate_json(config_json))


def learning_row_welfare(config: ExperimentConfig, row: pd.Series) -> float:
    """True welfare of the row's stored mask on the regenerated held-out markets."""
    pool = _cached_pool(config.model_dump_json())
    gamma = None if pd.isna(row["gamma"]) else float(row["gamma"])
    epsilon = None if pd.isna(row["epsilon"]) else float(row["epsilon"])
    scheme = scheme_for(config.pricing, gamma, epsilon)
    sample_set, fold = int(row["seed"]), int(row["fold"])
    markets = sample_set_markets(config, pool, sample_set, scheme)
    _, test_idx = fold_indices(config, sample_set)[fold]
    mask = Mask.from_bits(str(row["mask"]))
    return float(np.mean([expected_welfare(markets[i], mask, config.impute) for i in test_idx]))
