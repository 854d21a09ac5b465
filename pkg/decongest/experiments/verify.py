# decongest/experiments/verify.py
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd
import structlog

from ..config import ExperimentConfig
from ..errors import DataError, InvalidArgumentError
from ..models import Mask
from .learning import learning_row_welfare
from .results import read_provenance, read_table
from .synthetic import fig3_row_welfare

log = structlog.get_logger()

TOL = 1e-9


@dataclass(frozen=True)
class RowCheck:
    index: int
    method: str
    stored: float
    recomputed: float
    ok: bool


def _recomputable(frame: pd.DataFrame) -> pd.DataFrame:
    """Rows carrying a deterministic mask (policy and random rows store none)."""
    has_mask = frame["mask"].fillna("").astype(str).str.len() > 0
    return frame[has_mask]


def _check_row(config: ExperimentConfig, index: int, row: pd.Series) -> RowCheck:
    try:
        Mask.from_bits(str(row["mask"]))
    except InvalidArgumentError as e:
        raise DataError(f"row {index} has a malformed mask: {e}") from e
    if config.experiment == "fig3":
        recomputed = fig3_row_welfare(config, row)
        # ties: the stored mask is one of several optima, all within [min, max]
        lo, hi = float(row["welfare_min"]), float(row["welfare_max"])
        ok = lo - TOL <= recomputed <= hi + TOL
    else:
        recomputed = learning_row_welfare(config, row)
        ok = abs(recomputed - float(row["welfare"])) <= TOL
    return RowCheck(index, str(row["method"]), float(row["welfare"]), recomputed, ok)


def verify(table_path: Path, rows: int = 1, seed: int = 0) -> list[RowCheck]:
    """Re-derive sampled rows of a written table from its provenance config."""
    provenance = read_provenance(table_path)
    config = ExperimentConfig.model_validate(provenance["config"])
    frame = read_table(table_path)
    if frame.empty:
        raise DataError(f"{table_path} has no rows")
    if (frame["master_seed"] != provenance["master_seed"]).any():
        raise DataError("rows disagree with the provenance master seed")

    candidates = _recomputable(frame)
    if candidates.empty:
        raise DataError(f"{table_path} has no rows with stored masks")
    picked = np.random.default_rng(seed).choice(candidates.index, size=min(rows, len(candidates)), replace=False)

    checks = [_check_row(config, int(i), frame.loc[i]) for i in sorted(picked)]
    for check in checks:
        log.info("row_verified", **check.__dict__)
    return checks
