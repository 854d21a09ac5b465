# scripts/run_all_experiments.py
from __future__ import annotations
import os
from dotenv import load_dotenv, find_dotenv

load_dotenv(find_dotenv(), override=True)

# --- project root on sys.path before importing the package ---
import sys, pathlib
CURR = pathlib.Path(__file__).resolve()
ROOT = next((p for p in CURR.parents if (p / "decongest").exists()), None)
if ROOT and str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

import structlog

from decongest.config import ExperimentConfig, get_settings
from decongest.experiments import RUNNERS, run_experiment, verify
from decongest.utils import configure_logging

EXPERIMENTS = [e.strip() for e in os.getenv("DECONGEST_EXPERIMENTS", "fig3,fig4,prices,lambda").split(",") if e.strip()]
VERIFY_ROWS = int(os.getenv("DECONGEST_VERIFY_ROWS", "3"))

log = structlog.get_logger()


def main() -> int:
    configure_logging()
    settings = get_settings()
    failures = 0
    for name in EXPERIMENTS:
        if name not in RUNNERS:
            log.error("unknown_experiment", experiment=name)
            failures += 1
            continue
        config = ExperimentConfig.for_experiment(name).model_copy(update={"seed": settings.DECONGEST_SEED})  # type: ignore[arg-type]
        table = run_experiment(config, jobs=settings.DECONGEST_JOBS)
        path = table.write(settings.DECONGEST_OUTPUT_ROOT / name)
        checks = verify(path, rows=VERIFY_ROWS, seed=settings.DECONGEST_SEED)
        bad = [c for c in checks if not c.ok]
        log.info("experiment_done", experiment=name, rows=len(table), verified=len(checks), mismatches=len(bad))
        failures += len(bad)
    return 1 if failures else 0


if __name__ == "__main__":
    raise SystemExit(main())
