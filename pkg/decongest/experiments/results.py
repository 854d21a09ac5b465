# decongest/experiments/results.py
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Optional, Sequence

import numpy as np
import pandas as pd
import structlog

from .. import RESULT_HEADER, SCHEMA_VERSION, __version__
from ..config import ExperimentConfig, get_settings
from ..errors import DataError
from ..models import ResultRow
from ..utils import config_hash, read_json, write_json

log = structlog.get_logger()

# Keep in sync with ResultRow so CSV columns never shift
HEADER = ResultRow.headers()
Z95 = 1.96


def experiment_hash(config: ExperimentConfig) -> str:
    """Hash of everything that determines the numbers (the output location does not)."""
    return config_hash(config.model_dump(mode="json", exclude={"output_dir"}))


def _pad_row(row: list[object]) -> list[object]:
    padded = list(row)
    missing = len(HEADER) - len(padded)
    if missing > 0:
        padded.extend([None] * missing)
    return padded[: len(HEADER)]


@dataclass
class ResultTable:
    experiment: str
    master_seed: int
    config_hash: str
    config: dict[str, Any] = field(default_factory=dict)
    rows: list[ResultRow] = field(default_factory=list)
    extras: dict[str, pd.DataFrame] = field(default_factory=dict)
    record_runtime: bool = False

    @classmethod
    def for_config(cls, config: ExperimentConfig) -> "ResultTable":
        return cls(
            experiment=config.experiment,
            master_seed=config.seed,
            config_hash=experiment_hash(config),
            config=config.model_dump(mode="json"),
            record_runtime=get_settings().DECONGEST_RECORD_RUNTIME,
        )

    def add(self, row: ResultRow) -> None:
        row.master_seed = self.master_seed
        row.config_hash = self.config_hash
        if not self.record_runtime:
            row.runtime = None
        self.rows.append(row)

    def extend(self, rows: Iterable[ResultRow]) -> None:
        for row in rows:
            self.add(row)

    def __len__(self) -> int:
        return len(self.rows)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([_pad_row(r.as_row()) for r in self.rows], columns=HEADER)

    def provenance(self) -> dict[str, Any]:
        return {
            "schema_version": SCHEMA_VERSION,
            "version": __version__,
            "experiment": self.experiment,
            "master_seed": self.master_seed,
            "config_hash": self.config_hash,
            "columns": HEADER,
            "rows": len(self.rows),
            "extras": sorted(self.extras),
            "config": self.config,
        }

    def write(self, out_dir: Path) -> Path:
        """<experiment>.csv, <experiment>.provenance.json and one CSV per extra table."""
        out_dir.mkdir(parents=True, exist_ok=True)
        path = out_dir / f"{self.experiment}.csv"
        _write_csv(self.to_frame(), path)
        for name, frame in sorted(self.extras.items()):
            _write_csv(frame, out_dir / f"{self.experiment}_{name}.csv")
        write_json(provenance_path(path), self.provenance())
        log.info("results_written", path=str(path), rows=len(self.rows), extras=len(self.extras))
        return path


def _write_csv(frame: pd.DataFrame, path: Path) -> None:
    frame.to_csv(path, index=False, float_format="%.12g", lineterminator="\n")


def provenance_path(table_path: Path) -> Path:
    return table_path.with_suffix(".provenance.json")


def read_table(path: Path) -> pd.DataFrame:
    try:
        frame = pd.read_csv(path, dtype={"mask": str, "method": str, "experiment": str, "config_hash": str})
    except (OSError, pd.errors.ParserError) as e:
        raise DataError(f"cannot read result table {path}: {e}") from e
    if list(frame.columns) != HEADER:
        raise DataError(f"{path} does not have the result-table columns")
    return frame


def read_provenance(table_path: Path) -> dict[str, Any]:
    path = provenance_path(table_path)
    if not path.exists():
        raise DataError(f"missing provenance file {path}")
    payload = read_json(path)
    if payload.get("schema_version") != SCHEMA_VERSION:
        raise DataError(f"unsupported provenance schema_version {payload.get('schema_version')!r}")
    return dict(payload)


# --------------------------- Summaries ---------------------------

def summarize(
    frame: pd.DataFrame,
    by: Sequence[str] = ("method", "k"),
    value: str = "welfare",
) -> pd.DataFrame:
    """Mean, 95% standard error and replicate count of `value` per group."""
    keys = [c for c in by if c in frame.columns and frame[c].notna().any()]
    grouped = frame.groupby(keys, dropna=False)[value]
    out = grouped.agg(["mean", "std", "count"]).reset_index()
    out["se95"] = Z95 * out["std"].fillna(0.0) / np.sqrt(out["count"])
    return out.drop(columns="std")


def normalize(
    summary: pd.DataFrame,
    baseline: str = "random",
    oracle: Optional[str] = "oracle",
    by: Sequence[str] = ("k",),
) -> pd.DataFrame:
    """Add welfare relative to the random baseline and, when the oracle is present,
    normalized welfare with random at 0 and oracle at 1."""
    keys = [c for c in by if c in summary.columns]
    out = summary.copy()
    ref = summary[summary["method"] == baseline].set_index(keys)["mean"] if keys else None
    top = summary[summary["method"] == oracle].set_index(keys)["mean"] if keys and oracle else None

    relative, normalized = [], []
    for _, row in out.iterrows():
        key = tuple(row[c] for c in keys) if len(keys) > 1 else row[keys[0]] if keys else None
        base = ref.get(key) if ref is not None else None
        best = top.get(key) if top is not None else None
        relative.append(row["mean"] / base if base else np.nan)
        spread = (best - base) if best is not None and base is not None else None
        normalized.append((row["mean"] - base) / spread if spread else np.nan)
    out["relative_to_random"] = relative
    out["normalized"] = normalized
    return out
