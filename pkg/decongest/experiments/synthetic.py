# decongest/experiments/synthetic.py
"""Enumeration study on mixture markets: every objective's best mask across the
heterogeneity grid, the dispersion grid, and per-mask distortion correlations."""
from __future__ import annotations

import time
import warnings
from typing import Optional

import pandas as pd
import structlog
from joblib import Parallel, delayed
from scipy.stats import spearmanr

from ..config import ExperimentConfig, get_settings
from ..data.mixture import MixtureSpec, make_mixture_market
from ..market import expected_welfare
from ..models import Market, Mask, ResultRow
from ..oracle import ALL_KINDS, MaskSweepResult, sweep
from ..utils import task_seed
from .results import ResultTable

log = structlog.get_logger()


def instance_seed(master_seed: int, instance: int) -> int:
    """Market seed of one replicate; shared across the α and ρ grids so points are paired."""
    return task_seed(master_seed, "mixture", instance)


def mixture_market(config: ExperimentConfig, instance: int, alpha: float, rho: float = 1.0) -> Market:
    spec = MixtureSpec(
        n=config.n, m=config.m, d=config.d, alpha=alpha, rho=rho, seed=instance_seed(config.seed, instance)
    )
    return make_mixture_market(spec)


def _rows_for_sweep(
    result: MaskSweepResult, k: int, instance: int, alpha: float, rho: Optional[float], runtime: float
) -> list[ResultRow]:
    rows = []
    for kind in ALL_KINDS:
        mean, lo, hi, ties = result.welfare_at(kind)
        best = result.argmax(kind)
        rows.append(
            ResultRow(
                experiment="fig3",
                method=kind.value,
                k=k,
                alpha=alpha,
                rho=rho,
                seed=instance,
                welfare=mean,
                welfare_min=lo,
                welfare_max=hi,
                n_ties=ties,
                allocated_items=float(result.allocated_items[best].mean()),
                congestion=float(result.congestion[best].mean()),
                mask=Mask(result.masks[best[0]]).to_bits(),
                runtime=runtime,
            )
        )
    return rows


def _grid_task(
    config: ExperimentConfig, k: int, instance: int, alpha: float, rho: Optional[float], cap: int
) -> list[ResultRow]:
    started = time.perf_counter()
    market = mixture_market(config, instance, alpha, 1.0 if rho is None else rho)
    result = sweep(market, k, ALL_KINDS, impute=config.impute, cap=cap)
    return _rows_for_sweep(result, k, instance, alpha, rho, time.perf_counter() - started)


def _per_mask_task(config: ExperimentConfig, k: int, instance: int, cap: int) -> pd.DataFrame:
    market = mixture_market(config, instance, config.correlation_alpha)
    result = sweep(market, k, ALL_KINDS, impute=config.impute, diagnostics=("distortion", "kendalls_w"), cap=cap)
    frame = result.to_frame()
    frame.insert(0, "instance", instance)
    frame.insert(1, "k", k)
    return frame


def _spearman(a: pd.Series, b: pd.Series) -> float:
    if a.nunique() < 2 or b.nunique() < 2:
        return float("nan")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return float(spearmanr(a, b).statistic)


def correlations(per_mask: pd.DataFrame) -> pd.DataFrame:
    """Per-instance rank correlations between distortion, preference concordance and welfare."""
    rows = []
    for (instance, k), group in per_mask.groupby(["instance", "k"], sort=True):
        rows.append(
            {
                "instance": instance,
                "k": k,
                "distortion_vs_welfare": _spearman(group["distortion"], group["welfare"]),
                "kendalls_w_vs_welfare": _spearman(group["kendalls_w"], group["welfare"]),
                "distortion_vs_kendalls_w": _spearman(group["distortion"], group["kendalls_w"]),
            }
        )
    return pd.DataFrame(rows)


def run_fig3(config: ExperimentConfig, jobs: int = 1, per_mask: bool = True) -> ResultTable:
    """Heterogeneity sweep (main table), dispersion sweep and per-mask diagnostics (extras)."""
    cap = get_settings().DECONGEST_ENUM_CAP
    table = ResultTable.for_config(config)
    parallel = Parallel(n_jobs=jobs)

    tasks = [(k, i, a) for k in config.k_values for a in config.alpha_grid for i in range(config.instances)]
    for rows in parallel(delayed(_grid_task)(config, k, i, a, None, cap) for k, i, a in tasks):
        table.extend(rows)
    log.info("heterogeneity_sweep_done", rows=len(table), instances=config.instances)

    dispersion = ResultTable.for_config(config)
    tasks_rho = [(k, i, r) for k in config.k_values for r in config.rho_grid for i in range(config.instances)]
    for rows in parallel(
        delayed(_grid_task)(config, k, i, config.dispersion_alpha, r, cap) for k, i, r in tasks_rho
    ):
        dispersion.extend(rows)
    table.extras["dispersion"] = dispersion.to_frame()
    log.info("dispersion_sweep_done", rows=len(dispersion))

    if per_mask:
        frames = parallel(
            delayed(_per_mask_task)(config, k, i, cap) for k in config.k_values for i in range(config.instances)
        )
        masks = pd.concat(frames, ignore_index=True)
        table.extras["per_mask"] = masks
        table.extras["correlations"] = correlations(masks)
        log.info("per_mask_diagnostics_done", masks=len(masks))
    return table


def oracle_dominates(frame: pd.DataFrame, tol: float = 1e-9) -> bool:
    """The welfare oracle's welfare is at least every other objective's, per (k, α, ρ, instance)."""
    keys = ["k", "alpha", "rho", "seed"]
    for _, group in frame.groupby(keys, dropna=False):
        oracle = group.loc[group["method"] == "welfare_oracle", "welfare"]
        if oracle.empty:
            continue
        if (group["welfare"] > float(oracle.iloc[0]) + tol).any():
            return False
    return True


def fig3_row_welfare(config: ExperimentConfig, row: pd.Series) -> float:
    """True expected welfare of the row's stored mask on its regenerated market."""
    rho = 1.0 if pd.isna(row["rho"]) else float(row["rho"])
    market = mixture_market(config, int(row["seed"]), float(row["alpha"]), rho)
    return expected_welfare(market, Mask.from_bits(str(row["mask"])), config.impute)

