from __future__ import annotations

import hashlib
import json
import logging
import zlib
from pathlib import Path
from typing import Any, Optional

import numpy as np
import structlog

from .config import get_settings

logger = structlog.get_logger()


def configure_logging(level: Optional[str] = None, json_logs: Optional[bool] = None) -> None:
    settings = get_settings()
    level = (level or settings.DECONGEST_LOG_LEVEL).upper()
    json_logs = settings.DECONGEST_LOG_JSON if json_logs is None else json_logs

    renderer: Any = structlog.processors.JSONRenderer() if json_logs else structlog.dev.ConsoleRenderer()
    structlog.configure(
        processors=[
            structlog.contextvars.merge_contextvars,
            structlog.processors.add_log_level,
            structlog.processors.TimeStamper(fmt="iso"),
            renderer,
        ],
        wrapper_class=structlog.make_filtering_bound_logger(logging.getLevelName(level)),
        cache_logger_on_first_use=False,
    )


# --------------------------- Seeds ---------------------------

def stable_key(name: str) -> int:
    """Deterministic integer for a string key (used in seed spawn keys)."""
    return zlib.crc32(name.encode("utf-8"))


def task_seed_sequence(master_seed: int, *keys: int | str) -> np.random.SeedSequence:
    """Counter-based fan-out: the same (master, keys) always yields the same stream,
    independent of execution order or worker count."""
    spawn_key = tuple(stable_key(k) if isinstance(k, str) else int(k) for k in keys)
    return np.random.SeedSequence(entropy=master_seed, spawn_key=spawn_key)


def task_rng(master_seed: int, *keys: int | str) -> np.random.Generator:
    return np.random.default_rng(task_seed_sequence(master_seed, *keys))


def task_seed(master_seed: int, *keys: int | str) -> int:
    return int(task_seed_sequence(master_seed, *keys).generate_state(1, dtype=np.uint32)[0])


def as_rng(seed: int | np.random.Generator | None) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


# --------------------------- IO ---------------------------

def config_hash(payload: dict[str, Any]) -> str:
    canonical = json.dumps(payload, sort_keys=True, default=str, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


def write_json(path: Path, payload: Any) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, default=_json_default) + "\n", encoding="utf-8")


def read_json(path: Path) -> Any:
    return json.loads(path.read_text(encoding="utf-8"))


def _json_default(value: Any) -> Any:
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, Path):
        return str(value)
    raise TypeError(f"not JSON serializable: {type(value).__name__}")

