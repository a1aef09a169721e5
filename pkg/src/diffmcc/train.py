"""AdamW with decoupled weight decay, per-epoch cosine schedule, mini-batch loop."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import autodiff as ad
from . import metrics
from .data import one_hot
from .losses import LossSpec, loss_function
from .model import ModelConfig, ModelParams, forward, init, predict_proba

logger = logging.getLogger(__name__)

BETA1, BETA2, ADAM_EPS = 0.9, 0.999, 1e-8


class TrainingError(RuntimeError):
    pass


class NonFiniteGradientError(TrainingError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 70
    lr: float = 1e-3
    weight_decay: float = 0.0
    batch_size: int = 128
    loss: LossSpec = field(default_factory=lambda: LossSpec.weighted_ce(20.0))
    seed: int = 0
    shuffle: bool = True
    clip_norm: float | None = None

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2")
        if not self.lr > 0:
            raise ValueError("lr must be > 0")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")


@dataclass
class OptimizerState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0

    @classmethod
    def fresh(cls, arrays: Sequence[np.ndarray]) -> "OptimizerState":
        return cls([np.zeros_like(a) for a in arrays], [np.zeros_like(a) for a in arrays], 0)


@dataclass
class EpochLog:
    epoch: int
    lr: float
    train_loss: float
    val_f1: float = float("nan")
    val_mcc: float = float("nan")


def cosine_lr(epoch: int, config: TrainConfig) -> float:
    """Learning rate for ``epoch``: ``0.5*lr*(1 + cos(pi*epoch/epochs))``."""
    if not 0 <= epoch < config.epochs:
        raise ValueError(f"epoch {epoch} outside [0, {config.epochs})")
    return 0.5 * config.lr * (1.0 + math.cos(math.pi * epoch / config.epochs))


def adamw_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray], state: OptimizerState, lr: float, weight_decay: float) -> None:
    """One in-place AdamW update; decay is applied to the weights, not folded into the gradient."""
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError("non-finite gradient")
    state.step += 1
    t = state.step
    bc1 = 1.0 - BETA1**t
    bc2 = 1.0 - BETA2**t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if weight_decay:
            p *= 1.0 - lr * weight_decay
        m *= BETA1
        m += (1.0 - BETA1) * g
        v *= BETA2
        v += (1.0 - BETA2) * g * g
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + ADAM_EPS)


def _batches(n: int, batch_size: int, order: np.ndarray) -> list[np.ndarray]:
    chunks = [order[i : i + batch_size] for i in range(0, n, batch_size)]
    if len(chunks) > 1 and len(chunks[-1]) < 2:
        tail = chunks.pop()
        chunks[-1] = np.concatenate([chunks[-1], tail])
    return chunks


def _clip(grads: list[np.ndarray], max_norm: float) -> None:
    norm = math.sqrt(sum(float((g * g).sum()) for g in grads))
    if norm > max_norm:
        for g in grads:
            g *= max_norm / norm


def validation_point(params: ModelParams, tokens: np.ndarray, labels: np.ndarray, thresholds=None) -> metrics.MetricPoint:
    probs = predict_proba(params, one_hot(tokens))
    curve = metrics.sweep(probs, labels, thresholds if thresholds is not None else metrics.DEFAULT_THRESHOLDS)
    return curve.best_point


def train(
    model_config: ModelConfig,
    train_config: TrainConfig,
    tokens: np.ndarray,
    labels: np.ndarray,
    validation: tuple[np.ndarray, np.ndarray] | None = None,
    params: ModelParams | None = None,
) -> tuple[ModelParams, list[EpochLog]]:
    """Fit a model on integer-token windows; returns the parameters and the epoch log.

    ``params`` continues from existing weights (copied) with a fresh optimizer.
    """
    tokens = np.asarray(tokens)
    labels = np.asarray(labels, dtype=np.float64)
    if len(tokens) == 0 or len(tokens) != len(labels):
        raise TrainingError("training data is empty or misaligned")
    if labels.min() == labels.max():
        raise TrainingError("training data holds a single class; refusing to train")
    params = init(model_config, train_config.seed) if params is None else params.copy()
    if params.config != model_config:
        raise TrainingError(f"params were built for {params.config}, not {model_config}")
    tensors = list(params)
    state = OptimizerState.fresh([t.data for t in tensors])
    loss_fn = loss_function(train_config.loss)
    log: list[EpochLog] = []
    n = len(tokens)
    for epoch in range(train_config.epochs):
        lr = cosine_lr(epoch, train_config)
        if train_config.shuffle:
            order = np.random.default_rng([train_config.seed, epoch]).permutation(n)
        else:
            order = np.arange(n)
        total, seen = 0.0, 0
        for b, idx in enumerate(_batches(n, train_config.batch_size, order)):
            x = one_hot(tokens[idx])
            with ad.Tape() as tape:
                loss = loss_fn(forward(params, x), labels[idx])
            tape.backward(loss)
            grads = [t.grad if t.grad is not None else np.zeros_like(t.data) for t in tensors]
            if train_config.clip_norm:
                _clip(grads, train_config.clip_norm)
            try:
                adamw_step([t.data for t in tensors], grads, state, lr, train_config.weight_decay)
            except NonFiniteGradientError as exc:
                raise NonFiniteGradientError(f"epoch {epoch}, batch {b}: {exc}; loss was {loss.item()!r}") from None
            params.zero_grad()
            total += loss.item() * len(idx)
            seen += len(idx)
        entry = EpochLog(epoch, lr, total / seen)
        if validation is not None:
            point = validation_point(params, *validation)
            entry.val_f1, entry.val_mcc = point.f1, point.mcc
        logger.debug("epoch %d lr %.3g loss %.6f", epoch, lr, entry.train_loss)
        log.append(entry)
    return params, log


def fine_tune(
    params: ModelParams,
    new_loss: LossSpec,
    new_lr: float,
    epochs: int,
    tokens: np.ndarray,
    labels: np.ndarray,
    base: TrainConfig | None = None,
    validation: tuple[np.ndarray, np.ndarray] | None = None,
) -> tuple[ModelParams, list[EpochLog]]:
    """Continue training ``params`` under a new loss and learning rate, fresh optimizer state."""
    if epochs == 0:
        return params.copy(), []
    cfg = replace(base or TrainConfig(), loss=new_loss, lr=new_lr, epochs=epochs)
    return train(params.config, cfg, tokens, labels, validation, params=params)


def write_epoch_log(log: Sequence[EpochLog], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "lr", "train_loss", "val_f1", "val_mcc"])
        for e in log:
            w.writerow([e.epoch, f"{e.lr:.10g}", f"{e.train_loss:.10g}", f"{e.val_f1:.6f}", f"{e.val_mcc:.6f}"])
