"""Batch losses over predicted probabilities: weighted CE, focal, and soft-count F1/MCC."""

from __future__ import annotations

import logging
import re
from collections import Counter
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import ContractError, Tensor

logger = logging.getLogger(__name__)

EPS = ad.EPS
PROB_CLAMP = 1e-7
KINDS = ("weighted_ce", "focal", "diff_f1", "diff_mcc")
_FIELDS = {"weighted_ce": ("w_pos",), "focal": ("alpha", "gamma"), "diff_f1": ("W", "gamma"), "diff_mcc": ("W", "gamma")}

# Incremented each time a soft-count loss sees a batch with one class only.
diagnostics: Counter = Counter()


class LossSpecError(ValueError):
    pass


@dataclass(frozen=True)
class LossSpec:
    """Which loss to train with, plus the hyperparameters that loss reads."""

    kind: str
    w_pos: float = 1.0
    alpha: float = 0.5
    gamma: float = 1.0
    W: float = 1.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise LossSpecError(f"unknown loss kind {self.kind!r}; expected one of {KINDS}")
        if self.kind == "weighted_ce" and not self.w_pos > 0:
            raise LossSpecError("w_pos must be > 0")
        if self.kind == "focal":
            if not 0 < self.alpha < 1:
                raise LossSpecError("focal alpha must lie in (0, 1)")
            if not self.gamma >= 0:
                raise LossSpecError("focal gamma must be >= 0")
        if self.kind in ("diff_f1", "diff_mcc"):
            if not self.W > 0:
                raise LossSpecError("W must be > 0")
            if not self.gamma >= 1:
                raise LossSpecError("soft-count losses take gamma >= 1")

    @classmethod
    def weighted_ce(cls, w_pos: float = 1.0) -> "LossSpec":
        return cls("weighted_ce", w_pos=w_pos)

    @classmethod
    def focal(cls, alpha: float, gamma: float) -> "LossSpec":
        return cls("focal", alpha=alpha, gamma=gamma)

    @classmethod
    def diff_f1(cls, W: float = 1.0, gamma: float = 1.0) -> "LossSpec":
        return cls("diff_f1", W=W, gamma=gamma)

    @classmethod
    def diff_mcc(cls, W: float = 1.0, gamma: float = 1.0) -> "LossSpec":
        return cls("diff_mcc", W=W, gamma=gamma)

    def params(self) -> dict[str, float]:
        return {f: getattr(self, f) for f in _FIELDS[self.kind]}

    def __str__(self) -> str:
        inner = ",".join(f"{k}={v:g}" for k, v in self.params().items())
        return f"{self.kind}({inner})"

    @classmethod
    def parse(cls, text: str) -> "LossSpec":
        """Inverse of ``str``: ``diff_mcc(W=2,gamma=2)``; bare ``kind`` takes defaults."""
        m = re.fullmatch(r"\s*(\w+)\s*(?:\((.*)\))?\s*", text)
        if not m:
            raise LossSpecError(f"cannot parse loss spec {text!r}")
        kind, body = m.group(1), m.group(2) or ""
        if kind not in KINDS:
            raise LossSpecError(f"unknown loss kind {kind!r}; expected one of {KINDS}")
        kwargs = {}
        for part in filter(None, (p.strip() for p in body.split(","))):
            key, sep, value = part.partition("=")
            key = key.strip()
            if not sep or key not in _FIELDS[kind]:
                raise LossSpecError(f"{kind} does not take {part!r}; it reads {_FIELDS[kind]}")
            try:
                kwargs[key] = float(value)
            except ValueError:
                raise LossSpecError(f"{key} must be a number, got {value!r}") from None
        return cls(kind, **kwargs)


@dataclass
class SoftConfusion:
    tp: Tensor
    fn: Tensor
    fp: Tensor
    tn: Tensor

    def values(self) -> tuple[float, float, float, float]:
        return self.tp.item(), self.fn.item(), self.fp.item(), self.tn.item()


def _operands(pred, y) -> tuple[Tensor, Tensor]:
    pred = ad.as_tensor(pred)
    y_arr = np.asarray(y.data if isinstance(y, Tensor) else y, dtype=np.float64)
    if pred.ndim != 1 or y_arr.shape != pred.shape:
        raise ad.DimensionError(f"pred {pred.shape} and targets {y_arr.shape} must be matching 1-d batches")
    if pred.size == 0:
        raise ContractError("empty batch")
    return pred, Tensor(y_arr)


def weighted_ce(pred, y, w_pos: float = 1.0) -> Tensor:
    """``-mean(w_pos*y*log p + (1-y)*log(1-p))`` with p clamped away from 0 and 1."""
    pred, y = _operands(pred, y)
    p = ad.clamp(pred, PROB_CLAMP, 1.0 - PROB_CLAMP)
    ll = w_pos * (y * ad.log(p)) + (1.0 - y) * ad.log(1.0 - p)
    return -ad.reduce_mean(ll)


def focal(pred, y, alpha: float, gamma: float) -> Tensor:
    """``-mean(alpha_t * (1-p_t)^gamma * log p_t)``."""
    pred, y = _operands(pred, y)
    p = ad.clamp(pred, PROB_CLAMP, 1.0 - PROB_CLAMP)
    p_t = p * y + (1.0 - p) * (1.0 - y)
    alpha_t = Tensor(alpha * y.data + (1.0 - alpha) * (1.0 - y.data))
    return -ad.reduce_mean(alpha_t * ad.power(1.0 - p_t, gamma) * ad.log(p_t))


def soft_confusion(pred, y, W: float = 1.0, gamma: float = 1.0) -> SoftConfusion:
    """Probability-weighted confusion counts; W scales the positive-class counts only."""
    pred, y = _operands(pred, y)
    p_t = pred * y + (1.0 - pred) * (1.0 - y)
    hit = ad.power(p_t, gamma)
    miss = ad.power(1.0 - p_t, gamma)
    neg = 1.0 - y
    return SoftConfusion(
        tp=ad.reduce_sum(hit * y) * W,
        fn=ad.reduce_sum(miss * y) * W,
        fp=ad.reduce_sum(miss * neg),
        tn=ad.reduce_sum(hit * neg),
    )


def _flag_single_class(y) -> None:
    y = np.asarray(y.data if isinstance(y, Tensor) else y)
    if y.size and (y.min() == y.max()):
        diagnostics["single_class_batch"] += 1
        logger.debug("soft-count loss evaluated on a single-class batch")


def diff_mcc_loss(pred, y, W: float = 1.0, gamma: float = 1.0) -> Tensor:
    """Negative MCC of the weighted, focal soft confusion counts."""
    _flag_single_class(y)
    c = soft_confusion(pred, y, W, gamma)
    num = c.tp * c.tn - c.fp * c.fn
    den = ad.sqrt((c.tp + c.fp) * (c.tp + c.fn) * (c.tn + c.fp) * (c.tn + c.fn) + EPS)
    return -(num / den)


def diff_f1_loss(pred, y, W: float = 1.0, gamma: float = 1.0) -> Tensor:
    _flag_single_class(y)
    c = soft_confusion(pred, y, W, gamma)
    return -(2.0 * c.tp) / (2.0 * c.tp + c.fp + c.fn + EPS)


def loss_function(spec: LossSpec) -> Callable[[Tensor, np.ndarray], Tensor]:
    if spec.kind == "weighted_ce":
        return lambda p, y: weighted_ce(p, y, spec.w_pos)
    if spec.kind == "focal":
        return lambda p, y: focal(p, y, spec.alpha, spec.gamma)
    if spec.kind == "diff_f1":
        return lambda p, y: diff_f1_loss(p, y, spec.W, spec.gamma)
    return lambda p, y: diff_mcc_loss(p, y, spec.W, spec.gamma)


def compute_loss(spec: LossSpec, pred, y) -> Tensor:
    return loss_function(spec)(pred, y)
