# decongest/learner.py
"""Learning mask distributions end to end.

A mask distribution π_θ puts softmax(θ/τ) weights on features. Relaxed k-subsets are drawn
with the Gumbel top-k trick (k rounds of tempered softmax with suppression of selected
mass), pushed through the frozen choice predictor, and scored by the λ-weighted soft proxy.
Gradients come from the reverse-mode tape in `autodiff` with the Gumbel noise held fixed.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Literal, Optional, Sequence

import numpy as np
import structlog

from . import autodiff as ad
from .config import LearnerConfig
from .errors import InvalidArgumentError, TrainingError
from .market import Impute, choose, expected_welfare
from .models import Market, Mask, MaskDistribution, PredictorWeights, SoftMask
from .objectives import default_lambda, proxy_welfare
from .optim import Adam
from .predictor import predict_hard
from .utils import as_rng

log = structlog.get_logger()

ALPHA_MAX = 1.0 - 1e-12
DeployMode = Literal["topk", "committed_sample", "policy"]


def feature_probabilities(dist: MaskDistribution) -> np.ndarray:
    return dist.probabilities()


def sample_mask(dist: MaskDistribution, k: int, rng: np.random.Generator) -> Mask:
    return Mask(dist.sample_bits(k, rng)[0])


def gumbel_noise(rng: np.random.Generator, draws: int, d: int) -> np.ndarray:
    return rng.gumbel(size=(draws, d))


# --------------------------- Relaxation ---------------------------

def _relaxed_topk(theta: ad.Var, noise: np.ndarray, k: int, tau_gumbel: float, tau_topk: float) -> ad.Var:
    """(N, d) soft k-hot masks for N noise rows."""
    d = theta.shape[0]
    tape = theta.tape
    if k == 0:
        return tape.constant(np.zeros(noise.shape))
    if k == d:
        return tape.constant(np.ones(noise.shape))
    r = ad.log_softmax(theta / tau_gumbel) + noise
    total: Optional[ad.Var] = None
    for t in range(k):
        alpha = ad.softmax(r / tau_topk)
        total = alpha if total is None else total + alpha
        if t < k - 1:
            r = r + ad.log(1.0 - ad.clamp_max(alpha, ALPHA_MAX))
    assert total is not None
    # entries are capped at 1; the cut mass goes to the unsaturated entries in proportion
    # to their spare capacity, so every row still sums to k
    clipped = ad.clamp_max(total, 1.0)
    excess = ad.sum(ad.relu(total - 1.0), axis=-1)
    spare = 1.0 - clipped
    scale = excess * ad.reciprocal(ad.sum(spare, axis=-1))
    return clipped + spare * ad.reshape(scale, scale.shape + (1,))


def sample_relaxed_mask(
    dist: MaskDistribution,
    k: int,
    tau_topk: float,
    noise: Optional[np.ndarray] = None,
    tau_gumbel: Optional[float] = None,
    noise_seed: int | np.random.Generator | None = None,
) -> SoftMask:
    """One relaxed k-subset. The Gumbel temperature defaults to the distribution's own."""
    if not 0 <= k <= dist.d:
        raise InvalidArgumentError(f"need 0 <= k <= d, got k={k}, d={dist.d}")
    if noise is None:
        noise = gumbel_noise(as_rng(noise_seed), 1, dist.d)
    tape = ad.Tape()
    theta = tape.constant(dist.theta)
    tau_g = dist.temperature if tau_gumbel is None else tau_gumbel
    soft = _relaxed_topk(theta, np.atleast_2d(noise), k, tau_g, tau_topk)
    return SoftMask(soft.value[0], k=k)


# --------------------------- Soft proxy ---------------------------

@dataclass(frozen=True)
class MarketBatch:
    """Markets stacked for the frozen predictor: A = U W is precomputed per market."""

    A: np.ndarray  # (L, n, d)
    XT: np.ndarray  # (L, d, m)
    P: np.ndarray  # (L, m)

    @classmethod
    def build(cls, markets: Sequence[Market], predictor: PredictorWeights) -> "MarketBatch":
        if not markets:
            raise TrainingError("empty market list")
        shapes = {(mk.n, mk.m, mk.d) for mk in markets}
        if len(shapes) != 1:
            raise TrainingError("markets must share (n, m, d)", shapes=sorted(shapes))
        return cls(
            A=np.stack([mk.user_features @ predictor.W for mk in markets]),
            XT=np.stack([mk.item_features.T for mk in markets]),
            P=np.stack([mk.prices for mk in markets]),
        )

    def take(self, idx: np.ndarray) -> "MarketBatch":
        return MarketBatch(self.A[idx], self.XT[idx], self.P[idx])

    @property
    def size(self) -> int:
        return int(self.A.shape[0])


def _learn_k(k: int, d: int, config: LearnerConfig) -> tuple[int, bool]:
    if config.invert_when_k_large and k > d / 2:
        return d - k, True
    return k, False


def _objective(theta: ad.Var, batch: MarketBatch, noise: np.ndarray, config: LearnerConfig, d: int) -> ad.Var:
    k_learn, inverted = _learn_k(config.k, d, config)
    lam = default_lambda(config.k, d) if config.lam is None else config.lam
    soft = _relaxed_topk(theta, noise, k_learn, config.tau_gumbel, config.tau_topk)
    mu = 1.0 - soft if inverted else soft
    n_draws = noise.shape[0]
    mu4 = ad.reshape(mu, (n_draws, 1, 1, d))

    weighted = mu4 * batch.A[None, :, :, :]  # (N, L, n, d)
    item = ad.matmul(weighted, batch.XT[None, :, :, :]) - batch.P[None, :, None, :]
    ybar = ad.softmax(ad.prepend_column(item, 0.0) / config.tau_f)  # (N, L, n, m+1)
    chosen = ad.columns(ybar, 1)
    selection = ad.sum(chosen * batch.P[None, :, None, :], axis=(2, 3))
    demand = ad.sum(chosen, axis=2)
    decongestion = ad.sum(ad.relu(demand - 1.0), axis=2)
    combined = (1.0 - lam) * selection - lam * decongestion
    if config.with_no_choice_penalty:
        combined = combined - lam * ad.sum(ad.columns(ybar, 0, 1), axis=(2, 3))
    return ad.mean(combined)


def soft_proxy(
    theta: np.ndarray,
    markets: Sequence[Market] | MarketBatch,
    predictor: Optional[PredictorWeights],
    config: LearnerConfig,
    noise: Optional[np.ndarray] = None,
) -> tuple[float, np.ndarray]:
    """Monte Carlo soft proxy at θ and its exact gradient for the given (frozen) noise."""
    if isinstance(markets, MarketBatch):
        batch = markets
    else:
        if predictor is None:
            raise InvalidArgumentError("a frozen predictor is required")
        batch = MarketBatch.build(markets, predictor)
    d = batch.A.shape[2]
    if noise is None:
        noise = gumbel_noise(np.random.default_rng(config.seed), config.n_masks, d)
    tape = ad.Tape()
    th = tape.variable(np.asarray(theta, dtype=float))
    out = _objective(th, batch, noise, config, d)
    value = float(out.value)
    if not np.isfinite(value):
        raise TrainingError("non-finite soft proxy", theta=np.round(theta, 4).tolist())
    if not out.requires_grad:
        return value, np.zeros(d)
    tape.backward(out)
    grad = th.grad if th.grad is not None else np.zeros(d)
    return value, grad


def evaluate_objective(
    theta: np.ndarray, batch: MarketBatch, config: LearnerConfig, noise: np.ndarray
) -> float:
    tape = ad.Tape()
    return float(_objective(tape.constant(np.asarray(theta, dtype=float)), batch, noise, config, batch.A.shape[2]).value)


# --------------------------- Fit ---------------------------

@dataclass
class FitResult:
    theta: np.ndarray
    k: int
    inverted: bool
    temperature: float
    lam: float
    history: list[dict[str, Any]] = field(default_factory=list)

    @property
    def learned_k(self) -> int:
        return self.theta.shape[0] - self.k if self.inverted else self.k

    @property
    def distribution(self) -> MaskDistribution:
        return MaskDistribution(self.theta, self.temperature)

    def to_dict(self) -> dict[str, Any]:
        return {
            "theta": self.theta.tolist(),
            "k": self.k,
            "inverted": self.inverted,
            "temperature": self.temperature,
            "lam": self.lam,
            "history": self.history,
        }

    @classmethod
    def from_dict(cls, payload: dict[str, Any]) -> "FitResult":
        return cls(
            theta=np.asarray(payload["theta"], dtype=float),
            k=int(payload["k"]),
            inverted=bool(payload["inverted"]),
            temperature=float(payload["temperature"]),
            lam=float(payload["lam"]),
            history=list(payload.get("history", [])),
        )


def fit(markets: Sequence[Market], predictor: PredictorWeights, config: LearnerConfig) -> FitResult:
    """Adam ascent on the soft proxy; noise is redrawn every step from config.seed."""
    batch = MarketBatch.build(markets, predictor)
    d = batch.A.shape[2]
    if config.k > d:
        raise InvalidArgumentError(f"k={config.k} exceeds d={d}")
    _, inverted = _learn_k(config.k, d, config)
    lam = default_lambda(config.k, d) if config.lam is None else config.lam

    seeds = np.random.SeedSequence(config.seed).spawn(2)
    rng = np.random.default_rng(seeds[0])
    eval_noise = gumbel_noise(np.random.default_rng(seeds[1]), config.eval_draws, d)

    theta = np.zeros(d)
    opt = Adam(lr=config.lr, maximize=True)
    step_size = config.batch_markets or batch.size
    history: list[dict[str, Any]] = [
        {"epoch": 0, "objective": None, "eval_objective": evaluate_objective(theta, batch, config, eval_noise)}
    ]

    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(batch.size)
        values = []
        for start in range(0, batch.size, step_size):
            idx = order[start : start + step_size]
            noise = gumbel_noise(rng, config.n_masks, d)
            value, grad = soft_proxy(theta, batch.take(idx), None, config, noise)
            if not np.all(np.isfinite(grad)):
                raise TrainingError("non-finite gradient", epoch=epoch, batch_start=start)
            theta = opt.step({"theta": theta}, {"theta": grad})["theta"]
            values.append(value * idx.size)
        entry: dict[str, Any] = {"epoch": epoch, "objective": float(np.sum(values) / batch.size), "eval_objective": None}
        if epoch % config.eval_every == 0 or epoch == config.epochs:
            entry["eval_objective"] = evaluate_objective(theta, batch, config, eval_noise)
        history.append(entry)
        log.debug("learner_epoch", **entry)

    log.info(
        "mask_learner_fitted",
        k=config.k,
        inverted=inverted,
        epochs=config.epochs,
        eval_objective=history[-1]["eval_objective"],
    )
    return FitResult(theta, config.k, inverted, config.tau_gumbel, lam, history)


# --------------------------- Deploy ---------------------------

@dataclass
class DeployReport:
    mode: str
    masks: list[Mask]
    welfare: list[float]

    @property
    def mean_welfare(self) -> float:
        return float(np.mean(self.welfare))


def _draw_masks(result: FitResult, count: int, rng: np.random.Generator) -> list[Mask]:
    bits = result.distribution.sample_bits(result.learned_k, rng, size=count)
    if result.inverted:
        bits = ~bits
    return [Mask(b) for b in bits]


def topk_mask(result: FitResult) -> Mask:
    order = np.argsort(-result.theta, kind="stable")[: result.learned_k]
    mask = Mask.from_indices(order, result.theta.shape[0])
    return mask.complement() if result.inverted else mask


def mean_welfare(mask: Mask, markets: Sequence[Market], impute: Impute = "zero") -> float:
    return float(np.mean([expected_welfare(mk, mask, impute) for mk in markets]))


def training_proxy(
    mask: Mask,
    markets: Sequence[Market],
    lam: float,
    predictor: Optional[PredictorWeights] = None,
    impute: Impute = "zero",
) -> float:
    total = 0.0
    for mk in markets:
        y = predict_hard(predictor, mk, mask) if predictor is not None else choose(mk, mask, impute)
        total += proxy_welfare(y, mk.prices, lam, with_no_choice_penalty=True).combined
    return total / len(markets)


def deploy(
    result: FitResult,
    mode: DeployMode,
    eval_markets: Sequence[Market],
    predictor: Optional[PredictorWeights] = None,
    train_markets: Optional[Sequence[Market]] = None,
    samples: Optional[int] = None,
    seed: int | np.random.Generator | None = None,
    impute: Impute = "zero",
) -> DeployReport:
    """Turn learned θ̂ into deployed mask(s) and report true welfare on eval markets."""
    if not eval_markets:
        raise InvalidArgumentError("need at least one evaluation market")
    rng = as_rng(seed)

    if mode == "topk":
        masks = [topk_mask(result)]
    elif mode == "committed_sample":
        candidates = _draw_masks(result, samples or 20, rng)
        scoring = train_markets if train_markets else eval_markets
        scores = [training_proxy(m, scoring, result.lam, predictor, impute) for m in candidates]
        masks = [candidates[int(np.argmax(scores))]]
    elif mode == "policy":
        masks = _draw_masks(result, samples or 50, rng)
    else:
        raise InvalidArgumentError(f"unknown deploy mode: {mode!r}")

    report = DeployReport(mode, masks, [mean_welfare(m, eval_markets, impute) for m in masks])
    log.debug("mask_deployed", mode=mode, masks=len(masks), welfare=report.mean_welfare)
    return report
