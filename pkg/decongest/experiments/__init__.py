from __future__ import annotations

from typing import Callable

from ..config import ExperimentConfig
from .learning import run_fig4, run_lambda_sweep, run_price_robustness
from .results import ResultTable, read_table, summarize
from .synthetic import run_fig3
from .verify import verify

RUNNERS: dict[str, Callable[..., ResultTable]] = {
    "fig3": run_fig3,
    "fig4": run_fig4,
    "prices": run_price_robustness,
    "lambda": run_lambda_sweep,
}


def run_experiment(config: ExperimentConfig, jobs: int = 1) -> ResultTable:
    return RUNNERS[config.experiment](config, jobs=jobs)


__all__ = [
    "RUNNERS",
    "ResultTable",
    "read_table",
    "run_experiment",
    "run_fig3",
    "run_fig4",
    "run_lambda_sweep",
    "run_price_robustness",
    "summarize",
    "verify",
]
