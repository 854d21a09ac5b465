from __future__ import annotations
from dotenv import load_dotenv, find_dotenv; load_dotenv(find_dotenv(usecwd=True), override=True)

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path
from typing import Literal, Optional

from pydantic import BaseModel, Field, ValidationError, field_validator, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from .errors import ConfigError


class Settings(BaseSettings):
    model_config = SettingsConfigDict(
        env_file=".env",
        env_file_encoding="utf-8",
        extra="ignore",
    )

    # General
    DECONGEST_OUTPUT_ROOT: Path = Field(
        default=Path("./results"),
        description="Root directory for experiment outputs",
    )
    DECONGEST_SEED: int = Field(default=0, description="Master seed when --seed is not given")
    DECONGEST_JOBS: int = Field(default=1, description="Parallel workers when --jobs is not given")

    # Logging
    DECONGEST_LOG_LEVEL: str = Field(default="INFO")
    DECONGEST_LOG_JSON: bool = Field(default=False, description="Render logs as JSON lines")

    # Enumeration / reporting
    DECONGEST_ENUM_CAP: int = Field(default=1_000_000, description="Max masks an oracle sweep may enumerate")
    DECONGEST_RECORD_RUNTIME: bool = Field(
        default=False,
        description="Fill the runtime column (tables are then no longer byte-identical across runs)",
    )


def get_settings() -> Settings:
    return Settings()  # type: ignore[call-arg]


# --------------------------- Pricing ---------------------------

PriceKind = Literal[
    "ce_mid",
    "ce_interpolated",
    "ce_noisy_values",
    "ce_noisy_prices",
    "heuristic_avg_value",
    "interpolate_to_heuristic",
]


class PriceScheme(BaseModel):
    kind: PriceKind = "ce_mid"
    gamma: float = Field(default=0.5, ge=0.0, le=1.0, description="0 buyer-optimal, 0.5 mid, 1 seller-optimal")
    epsilon: float = Field(default=0.0, ge=0.0, description="Noise magnitude for the noisy schemes")
    weight: float = Field(default=0.0, ge=0.0, le=1.0, description="Weight on heuristic prices")
    seed: int = 0


# --------------------------- Models ---------------------------

class PredictorConfig(BaseModel):
    lr: float = Field(default=1e-3, gt=0.0)
    epochs: int = Field(default=150, ge=1)
    batch: int = Field(default=20, ge=1, description="Markets per mini-batch")
    tau: float = Field(default=5e-4, gt=0.0, description="Softmax temperature during training")
    ipw: bool = False
    seed: int = 0


class LearnerConfig(BaseModel):
    k: int = Field(default=6, ge=1)
    lam: Optional[float] = Field(default=None, ge=0.0, le=1.0, description="None means 1 - k/(2d)")
    n_masks: int = Field(default=20, ge=1)
    tau_gumbel: float = Field(default=2.0, gt=0.0)
    tau_topk: float = Field(default=0.2, gt=0.0)
    tau_f: float = Field(default=0.01, gt=0.0)
    lr: float = Field(default=1e-2, gt=0.0)
    epochs: int = Field(default=300, ge=0)
    batch_markets: Optional[int] = Field(default=None, ge=1, description="None uses every market each step")
    invert_when_k_large: bool = True
    with_no_choice_penalty: bool = True
    eval_draws: int = Field(default=64, ge=1)
    eval_every: int = Field(default=25, ge=1)
    seed: int = 0


# --------------------------- Experiments ---------------------------

class DataSpec(BaseModel):
    kind: Literal["mixture", "ratings", "synthetic_ratings", "pool"] = "mixture"
    path: Optional[Path] = None
    synthetic_users: int = Field(default=400, ge=1)
    synthetic_items: int = Field(default=200, ge=1)
    synthetic_density: float = Field(default=0.3, gt=0.0, le=1.0)
    nmf_iters: int = Field(default=500, ge=1)

    @model_validator(mode="after")
    def _path_exists(self) -> "DataSpec":
        if self.kind in {"ratings", "pool"}:
            if self.path is None:
                raise ValueError(f"data.path is required for data.kind={self.kind}")
            if not self.path.exists():
                raise ValueError(f"data.path does not exist: {self.path}")
        return self


ExperimentId = Literal["fig3", "fig4", "prices", "lambda"]


class ExperimentConfig(BaseModel):
    experiment: ExperimentId = "fig3"
    data: DataSpec = Field(default_factory=DataSpec)
    impute: Literal["zero", "mean"] = "zero"

    # dims
    n: int = Field(default=8, ge=1)
    m: int = Field(default=8, ge=1)
    d: int = Field(default=14, ge=1)
    d_prime: Optional[int] = Field(default=None, ge=1, description="None means d // 2")
    k_values: list[int] = Field(default_factory=lambda: [6])

    # synthetic study
    instances: int = Field(default=10, ge=1)
    alpha_grid: list[float] = Field(default_factory=lambda: [0.0, 0.2, 0.4, 0.6, 0.8, 1.0])
    rho_grid: list[float] = Field(default_factory=lambda: [1.0, 0.8, 0.6, 0.4, 0.2])
    dispersion_alpha: float = Field(default=0.2, ge=0.0, le=1.0)
    correlation_alpha: float = Field(default=0.2, ge=0.0, le=1.0)

    # learning study
    markets: int = Field(default=240, ge=2, description="Markets per sample set (L)")
    sample_sets: int = Field(default=6, ge=1)
    folds: int = Field(default=6, ge=2)
    splits: Optional[int] = Field(default=None, ge=1, description="Folds evaluated per sample set")
    random_draws: int = Field(default=100, ge=1)
    committed_draws: int = Field(default=20, ge=1)
    policy_draws: int = Field(default=50, ge=1)
    oracle_max_d: int = Field(default=14, ge=1, description="Enumerate the oracle only up to this d")
    gamma_grid: list[float] = Field(default_factory=lambda: [0.0, 0.25, 0.5, 0.75, 1.0])
    epsilon_grid: list[float] = Field(default_factory=lambda: [0.0, 0.05, 0.1, 0.2])
    lambda_grid: list[float] = Field(default_factory=lambda: [0.0, 0.25, 0.5, 0.75, 1.0])

    pricing: PriceScheme = Field(default_factory=PriceScheme)
    predictor: PredictorConfig = Field(default_factory=PredictorConfig)
    learner: LearnerConfig = Field(default_factory=LearnerConfig)

    seed: int = 0
    output_dir: Optional[Path] = None

    @field_validator("alpha_grid", "gamma_grid", "lambda_grid")
    @classmethod
    def _unit_interval(cls, values: list[float]) -> list[float]:
        for v in values:
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"grid value {v} outside [0, 1]")
        return values

    @field_validator("rho_grid")
    @classmethod
    def _rho_range(cls, values: list[float]) -> list[float]:
        for v in values:
            if not 0.0 < v <= 1.0:
                raise ValueError(f"rho {v} outside (0, 1]")
        return values

    @model_validator(mode="after")
    def _check_dims(self) -> "ExperimentConfig":
        if not self.k_values:
            raise ValueError("k_values must not be empty")
        for k in self.k_values:
            if not 1 <= k <= self.d:
                raise ValueError(f"k={k} must satisfy 1 <= k <= d={self.d}")
        if self.splits is not None and self.splits > self.folds:
            raise ValueError("splits cannot exceed folds")
        return self

    @property
    def effective_d_prime(self) -> int:
        return self.d_prime if self.d_prime is not None else max(1, self.d // 2)

    @property
    def effective_splits(self) -> int:
        return self.splits if self.splits is not None else self.folds

    @classmethod
    def for_experiment(cls, experiment: ExperimentId) -> "ExperimentConfig":
        """Desk-scale defaults for each experiment id."""
        if experiment == "fig3":
            return cls(experiment="fig3")
        learning = dict(
            data=DataSpec(kind="synthetic_ratings"),
            n=20,
            m=20,
            d=12,
            markets=60,
            sample_sets=3,
            folds=6,
            splits=3,
        )
        if experiment == "fig4":
            return cls(experiment="fig4", k_values=[4, 6, 8], **learning)  # type: ignore[arg-type]
        return cls(experiment=experiment, k_values=[6], **learning)  # type: ignore[arg-type]


def load_experiment_config(path: Path) -> ExperimentConfig:
    """Read a TOML experiment file; missing keys fall back to the experiment's defaults."""
    try:
        raw = tomllib.loads(path.read_text(encoding="utf-8"))
    except (OSError, tomllib.TOMLDecodeError) as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e

    experiment = raw.get("experiment", "fig3")
    if experiment not in {"fig3", "fig4", "prices", "lambda"}:
        raise ConfigError(f"unknown experiment id: {experiment!r}")
    base = ExperimentConfig.for_experiment(experiment).model_dump()
    merged = _deep_merge(base, raw)
    try:
        return ExperimentConfig.model_validate(merged)
    except ValidationError as e:
        raise ConfigError(f"invalid config {path}:\n{e}") from e


def _deep_merge(base: dict[str, object], override: dict[str, object]) -> dict[str, object]:
    out = dict(base)
    for key, value in override.items():
        current = out.get(key)
        if isinstance(current, dict) and isinstance(value, dict):
            out[key] = _deep_merge(current, value)
        else:
            out[key] = value
    return out
