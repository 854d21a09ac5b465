# decongest/predictor.py
"""Bilinear choice model: score of item j for user i is u_iᵀ W (x_j ⊙ μ) − p_j, the
no-choice option scores 0. Index 0 of every score row is the no-choice option."""
from __future__ import annotations

import dataclasses
from typing import Optional, Sequence

import numpy as np
import structlog

from . import autodiff as ad
from .config import PredictorConfig
from .errors import DataError, PropensityError, TrainingError
from .market import best_responses
from .models import ChoiceDataset, ChoiceProfile, Market, Mask, MaskDistribution, PredictorWeights
from .optim import Adam
from .utils import as_rng

log = structlog.get_logger()


def init_weights(d_prime: int, d: int, seed: int | np.random.Generator | None = None) -> PredictorWeights:
    scale = (d * d_prime) ** -0.5
    return PredictorWeights(as_rng(seed).uniform(-scale, scale, size=(d_prime, d)))


def item_scores(weights: PredictorWeights, market: Market, mask: Mask) -> np.ndarray:
    """n×m item scores (without the no-choice column)."""
    if market.user_features.shape[1] != weights.W.shape[0]:
        raise DataError(
            f"user features have d'={market.user_features.shape[1]}, weights expect {weights.W.shape[0]}"
        )
    A = market.user_features @ weights.W
    return A @ (market.item_features * mask.as_float()).T - market.prices[None, :]


def scores(weights: PredictorWeights, market: Market, mask: Mask, user_index: int) -> np.ndarray:
    return np.concatenate([[0.0], item_scores(weights, market, mask)[user_index]])


def _softmax_rows(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def predict_soft(weights: PredictorWeights, market: Market, mask: Mask, tau: float) -> np.ndarray:
    s = item_scores(weights, market, mask)
    full = np.concatenate([np.zeros((s.shape[0], 1)), s], axis=1)
    return _softmax_rows(full / tau)


def predict_hard(weights: PredictorWeights, market: Market, mask: Mask) -> ChoiceProfile:
    return ChoiceProfile(best_responses(item_scores(weights, market, mask)), market.m)


# --------------------------- Training ---------------------------

@dataclasses.dataclass
class _Stacked:
    U: np.ndarray  # (S, n, d')
    X: np.ndarray  # (S, m, d)
    P: np.ndarray  # (S, m)
    M: np.ndarray  # (S, d)
    Y: np.ndarray  # (S, n)
    w: np.ndarray  # (S,)


def _stack(dataset: ChoiceDataset) -> _Stacked:
    if len(dataset) == 0:
        raise TrainingError("empty dataset")
    markets = [dataset.markets[s.market_index] for s in dataset.samples]
    shapes = {(mk.n, mk.m, mk.d, mk.user_features.shape[1]) for mk in markets}
    if len(shapes) != 1:
        raise DataError(f"all markets in a dataset must share (n, m, d, d'), found {sorted(shapes)}")
    return _Stacked(
        U=np.stack([mk.user_features for mk in markets]),
        X=np.stack([mk.item_features for mk in markets]),
        P=np.stack([mk.prices for mk in markets]),
        M=np.stack([s.mask.as_float() for s in dataset.samples]),
        Y=np.stack([np.asarray(s.choices, dtype=np.int64) for s in dataset.samples]),
        w=np.array([s.weight for s in dataset.samples], dtype=float),
    )


def _batch_loss(W: np.ndarray, data: _Stacked, idx: np.ndarray, tau: float, weighted: bool) -> tuple[float, np.ndarray]:
    tape = ad.Tape()
    Wv = tape.variable(W)
    A = ad.matmul(data.U[idx], Wv)  # (B, n, d)
    XmT = np.swapaxes(data.X[idx] * data.M[idx][:, None, :], 1, 2)  # (B, d, m)
    item = ad.matmul(A, XmT) - data.P[idx][:, None, :]
    logits = ad.prepend_column(item, 0.0) / tau
    logp = ad.log_softmax(logits)
    m = data.X.shape[1]
    onehot = (data.Y[idx][:, :, None] == np.arange(m + 1)[None, None, :]).astype(float)
    nll = -ad.sum(logp * onehot, axis=2)  # (B, n)
    if weighted:
        nll = nll * data.w[idx][:, None]
    loss = ad.mean(nll)
    tape.backward(loss)
    assert Wv.grad is not None
    return float(loss.value), Wv.grad


def train(
    dataset: ChoiceDataset,
    config: Optional[PredictorConfig] = None,
    ipw: Optional[bool] = None,
    init: Optional[PredictorWeights] = None,
    history: Optional[list[float]] = None,
) -> PredictorWeights:
    """Fit W by Adam on (optionally propensity-weighted) softmax cross-entropy.

    `history`, when given, receives the mean training loss of every epoch."""
    config = config or PredictorConfig()
    ipw = config.ipw if ipw is None else ipw
    data = _stack(dataset)
    rng = np.random.default_rng(config.seed)
    d_prime, d = data.U.shape[2], data.X.shape[2]
    W = (init or init_weights(d_prime, d, rng)).W.copy()
    opt = Adam(lr=config.lr)
    total = data.Y.shape[0]

    for epoch in range(config.epochs):
        order = rng.permutation(total)
        losses = []
        for start in range(0, total, config.batch):
            idx = order[start : start + config.batch]
            loss, grad = _batch_loss(W, data, idx, config.tau, ipw)
            if not np.isfinite(loss) or not np.all(np.isfinite(grad)):
                raise TrainingError("non-finite predictor loss", epoch=epoch, batch_start=start, loss=loss)
            W = opt.step({"W": W}, {"W": grad})["W"]
            losses.append(loss * idx.size)
        epoch_loss = float(np.sum(losses) / total)
        if history is not None:
            history.append(epoch_loss)
        log.debug("predictor_epoch", epoch=epoch, loss=epoch_loss)

    log.info("predictor_trained", epochs=config.epochs, samples=total, ipw=ipw)
    return PredictorWeights(W)


def accuracy(weights: PredictorWeights, dataset: ChoiceDataset) -> float:
    """Fraction of users whose predicted choice (no-choice included as a class) matches."""
    if len(dataset) == 0:
        raise DataError("accuracy of an empty dataset is undefined")
    hits = 0
    total = 0
    for sample in dataset.samples:
        market = dataset.markets[sample.market_index]
        predicted = predict_hard(weights, market, sample.mask).choices
        hits += int(np.sum(predicted == np.asarray(sample.choices)))
        total += predicted.size
    return hits / total


# --------------------------- Propensities ---------------------------

def mask_probability(
    mask: Mask, dist: MaskDistribution, mc_samples: int, rng: np.random.Generator
) -> float:
    """Monte Carlo frequency of drawing exactly `mask` from `dist`."""
    if mask.k == dist.d:
        return 1.0
    draws = dist.sample_bits(mask.k, rng, size=mc_samples)
    return float(np.mean(np.all(draws == mask.bits[None, :], axis=1)))


def propensity_ratio(
    mask: Mask,
    target: MaskDistribution,
    behavior: MaskDistribution,
    mc_samples: int = 10_000,
    seed: int | np.random.Generator | None = None,
) -> float:
    if mask.k == mask.d:
        return 1.0
    rng = as_rng(seed)
    p_behavior = mask_probability(mask, behavior, mc_samples, rng)
    if p_behavior == 0.0:
        raise PropensityError(
            f"behavior policy never produced mask {mask.to_bits()} in {mc_samples} draws; "
            "the logging policy must have full support"
        )
    return mask_probability(mask, target, mc_samples, rng) / p_behavior


def attach_propensity_weights(
    dataset: ChoiceDataset,
    target: MaskDistribution,
    behavior: MaskDistribution,
    mc_samples: int = 10_000,
    seed: int | np.random.Generator | None = None,
) -> ChoiceDataset:
    rng = as_rng(seed)
    cache: dict[Mask, tuple[float, float]] = {}
    samples = []
    for sample in dataset.samples:
        if sample.mask not in cache:
            p_b = mask_probability(sample.mask, behavior, mc_samples, rng)
            if p_b == 0.0:
                raise PropensityError(f"zero behavior probability for mask {sample.mask.to_bits()}")
            p_t = mask_probability(sample.mask, target, mc_samples, rng)
            cache[sample.mask] = (p_b, p_t / p_b)
        p_b, ratio = cache[sample.mask]
        samples.append(dataclasses.replace(sample, propensity=p_b, weight=ratio))
    return ChoiceDataset(dataset.markets, samples)


def mean_preferences(weights: PredictorWeights, user_features: Sequence[np.ndarray] | np.ndarray) -> np.ndarray:
    """Average estimated preference vector mean_i(u_i W)."""
    U = np.asarray(user_features, dtype=float)
    return (U @ weights.W).mean(axis=0)
