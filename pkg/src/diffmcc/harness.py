"""Grid search with k-fold cross-validation, held-out testing and nested validation.

Every job receives only the index sets it may train on; those sets are written
to an :class:`IndexAudit` so a run can prove test indices never reached training.
"""

from __future__ import annotations

import csv
import itertools
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from . import metrics
from .data import DatasetSplit, SiteDataset, make_nested_splits, one_hot
from .losses import LossSpec
from .metrics import MetricPoint, PRCurve
from .model import ModelConfig, ModelParams, predict_proba
from .train import EpochLog, TrainConfig, TrainingError, fine_tune, train

logger = logging.getLogger(__name__)


class GridError(ValueError):
    pass


class RunConfigError(ValueError):
    pass


def derive_seed(seed: int, *keys: int) -> int:
    """Reproducible child seed for (seed, keys...)."""
    return int(np.random.SeedSequence([seed, *keys]).generate_state(1)[0])


@dataclass(frozen=True)
class FineTuneSpec:
    loss: LossSpec
    lr: float
    epochs: int


@dataclass(frozen=True)
class Candidate:
    """One grid point: everything needed to train a model."""

    model: ModelConfig
    train: TrainConfig
    finetune: FineTuneSpec | None = None

    @property
    def identity(self) -> str:
        m, t = self.model, self.train
        text = (
            f"lstm={','.join(map(str, m.lstm_sizes))};mlp={m.mlp_size};window={m.window};"
            f"lr={t.lr:g};wd={t.weight_decay:g};bs={t.batch_size};epochs={t.epochs};loss={t.loss}"
        )
        if self.finetune:
            f = self.finetune
            text += f";finetune={f.loss}@lr={f.lr:g}x{f.epochs}"
        return text


@dataclass
class GridSpec:
    lstm_sizes: list[tuple[int, ...]] = field(default_factory=lambda: [(600, 75)])
    mlp_size: list[int] = field(default_factory=lambda: [0])
    lr: list[float] = field(default_factory=lambda: [1e-3])
    weight_decay: list[float] = field(default_factory=lambda: [0.0])
    batch_size: list[int] = field(default_factory=lambda: [128])
    window: list[int] = field(default_factory=lambda: [20])
    loss: list[LossSpec] = field(default_factory=lambda: [LossSpec.weighted_ce(20.0)])
    epochs: int = 70
    seed: int = 0
    finetune: FineTuneSpec | None = None
    prune: Callable[[Candidate], bool] | None = None

    def candidates(self) -> list[Candidate]:
        """Cartesian product, minus whatever ``prune`` rejects (prune returns True to drop)."""
        out = []
        for sizes, mlp, lr, wd, bs, win, loss in itertools.product(
            self.lstm_sizes, self.mlp_size, self.lr, self.weight_decay, self.batch_size, self.window, self.loss
        ):
            cand = Candidate(
                ModelConfig(window=win, lstm_sizes=tuple(sizes), mlp_size=mlp),
                TrainConfig(epochs=self.epochs, lr=lr, weight_decay=wd, batch_size=bs, loss=loss, seed=self.seed),
                self.finetune,
            )
            if self.prune is None or not self.prune(cand):
                out.append(cand)
        return out

    def size(self) -> int:
        return math.prod(len(v) for v in (self.lstm_sizes, self.mlp_size, self.lr, self.weight_decay,
                                          self.batch_size, self.window, self.loss))


@dataclass
class CVResult:
    candidate: Candidate
    folds: list[MetricPoint]
    failed: bool = False
    diagnostics: str = ""

    @property
    def identity(self) -> str:
        return self.candidate.identity

    def _stat(self, attr: str, fn) -> float:
        if self.failed or not self.folds:
            return float("nan")
        return float(fn([getattr(p, attr) for p in self.folds]))

    @property
    def mean_f1(self) -> float:
        return self._stat("f1", np.mean)

    @property
    def std_f1(self) -> float:
        return self._stat("f1", np.std)

    @property
    def mean_mcc(self) -> float:
        return self._stat("mcc", np.mean)

    @property
    def std_mcc(self) -> float:
        return self._stat("mcc", np.std)


@dataclass
class IndexAudit:
    """Log of every index set handed to a training or scoring step."""

    entries: list[tuple[str, str, np.ndarray]] = field(default_factory=list)

    def record(self, phase: str, tag: str, indices: np.ndarray) -> None:
        self.entries.append((phase, tag, np.asarray(indices, dtype=np.int64)))

    def consumed(self, phase: str = "train", tag_prefix: str = "") -> np.ndarray:
        sets = [idx for ph, tag, idx in self.entries if ph == phase and tag.startswith(tag_prefix)]
        return np.unique(np.concatenate(sets)) if sets else np.zeros(0, dtype=np.int64)

    def leaks(self, test_indices: np.ndarray, tag_prefix: str = "") -> int:
        """Number of test indices that appear in any training read under ``tag_prefix``."""
        return int(np.intersect1d(self.consumed("train", tag_prefix), test_indices).size)


# ------------------------------------------------------------------ jobs


def _fit(cand: Candidate, tokens: np.ndarray, labels: np.ndarray, seed: int) -> tuple[ModelParams, list[EpochLog]]:
    tcfg = replace(cand.train, seed=seed)
    params, log = train(cand.model, tcfg, tokens, labels)
    if cand.finetune:
        f = cand.finetune
        params, more = fine_tune(params, f.loss, f.lr, f.epochs, tokens, labels, base=tcfg)
        log = log + more
    return params, log


def _fold_job(args) -> tuple[int, MetricPoint | None, str]:
    cand, tokens, labels, train_idx, val_idx, seed, thresholds, k = args
    try:
        params, _ = _fit(cand, tokens[train_idx], labels[train_idx], seed)
        probs = predict_proba(params, one_hot(tokens[val_idx]))
        return k, metrics.sweep(probs, labels[val_idx], thresholds).best_point, ""
    except (TrainingError, FloatingPointError, ValueError) as exc:
        return k, None, f"fold {k}: {exc}"


def _map(fn, jobs: Sequence, n_jobs: int) -> list:
    if n_jobs <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=n_jobs) as pool:
        return list(pool.map(fn, jobs))


def _fold_jobs(cand, tokens, labels, split, thresholds, audit, tag):
    jobs = []
    for k in range(len(split.folds)):
        train_idx, val_idx = split.fold_train(k), split.fold_validation(k)
        if audit is not None:
            audit.record("train", f"{tag}fold{k}", train_idx)
            audit.record("score", f"{tag}fold{k}", val_idx)
        jobs.append((cand, tokens, labels, train_idx, val_idx, derive_seed(cand.train.seed, k), thresholds, k))
    return jobs


def _collect(cand: Candidate, outputs) -> CVResult:
    outputs = sorted(outputs, key=lambda o: o[0])
    errors = [msg for _, _, msg in outputs if msg]
    if errors:
        return CVResult(cand, [p for _, p, _ in outputs if p is not None], failed=True, diagnostics="; ".join(errors))
    return CVResult(cand, [p for _, p, _ in outputs])


def run_cv(
    cand: Candidate,
    dataset: SiteDataset,
    split: DatasetSplit,
    thresholds=metrics.DEFAULT_THRESHOLDS,
    jobs: int = 1,
    audit: IndexAudit | None = None,
    tag: str = "",
) -> CVResult:
    """Train on k-1 folds, keep the best-F1 point of the held-out fold, for every fold."""
    if len(split.folds) < 2:
        raise GridError("split needs at least two folds")
    tokens, labels = window_arrays(dataset, cand.model.window)
    return _collect(cand, _map(_fold_job, _fold_jobs(cand, tokens, labels, split, thresholds, audit, tag), jobs))


def rank(results: Iterable[CVResult]) -> list[CVResult]:
    """Mean CV F1 descending, then mean MCC descending, then identity; failures last."""
    def key(r: CVResult):
        if r.failed:
            return (1, 0.0, 0.0, r.identity)
        return (0, -r.mean_f1, -r.mean_mcc, r.identity)

    return sorted(results, key=key)


def grid_search(
    grid: GridSpec | Sequence[Candidate],
    dataset: SiteDataset,
    split: DatasetSplit,
    thresholds=metrics.DEFAULT_THRESHOLDS,
    jobs: int = 1,
    audit: IndexAudit | None = None,
    tag: str = "",
) -> list[CVResult]:
    cands = grid.candidates() if isinstance(grid, GridSpec) else list(grid)
    if not cands:
        raise GridError("every grid combination was pruned")
    # flatten (candidate, fold) so a worker pool sees all of them at once
    all_jobs, owners = [], []
    for c in cands:
        tokens, labels = window_arrays(dataset, c.model.window)
        fold_jobs = _fold_jobs(c, tokens, labels, split, thresholds, audit, f"{tag}{c.identity}/")
        all_jobs.extend(fold_jobs)
        owners.extend([c] * len(fold_jobs))
    outputs = _map(_fold_job, all_jobs, jobs)
    results = []
    for c in cands:
        results.append(_collect(c, [o for o, owner in zip(outputs, owners) if owner is c]))
    return rank(results)


def window_arrays(dataset: SiteDataset, window: int) -> tuple[np.ndarray, np.ndarray]:
    if window > dataset.window:
        raise GridError(f"model window {window} exceeds the loaded window {dataset.window}")
    tokens = dataset.tokens()
    if window < dataset.window:
        cut = dataset.window - window
        tokens = tokens[:, cut : tokens.shape[1] - cut]
    return tokens, dataset.labels


@dataclass
class TestEvaluation:
    params: ModelParams
    curve: PRCurve
    log: list[EpochLog]
    probabilities: np.ndarray

    @property
    def best(self) -> MetricPoint:
        return self.curve.best_point


def evaluate_test(
    cand: Candidate,
    dataset: SiteDataset,
    split: DatasetSplit,
    thresholds=metrics.DEFAULT_THRESHOLDS,
    audit: IndexAudit | None = None,
    tag: str = "test",
) -> TestEvaluation:
    """Retrain on the whole training part, then sweep thresholds on the test part."""
    tokens, labels = window_arrays(dataset, cand.model.window)
    train_idx, test_idx = split.train_indices, split.test_indices
    if audit is not None:
        audit.record("train", tag, train_idx)
        audit.record("score", tag, test_idx)
    params, log = _fit(cand, tokens[train_idx], labels[train_idx], cand.train.seed)
    probs = predict_proba(params, one_hot(tokens[test_idx]))
    return TestEvaluation(params, metrics.sweep(probs, labels[test_idx], thresholds), log, probs)


@dataclass
class NestedResult:
    evaluations: list[TestEvaluation]
    splits: list[DatasetSplit]
    selected: list[Candidate]

    @property
    def curves(self) -> list[PRCurve]:
        return [e.curve for e in self.evaluations]

    @property
    def best_points(self) -> list[MetricPoint]:
        return [e.best for e in self.evaluations]

    def summary(self) -> dict[str, tuple[float, float]]:
        """Mean and population standard deviation over the outer folds."""
        out = {}
        for attr in ("recall", "precision", "f1", "mcc"):
            vals = np.array([getattr(p, attr) for p in self.best_points])
            out[attr] = (float(vals.mean()), float(vals.std()))
        return out

    def table(self) -> str:
        cols = {f"Fold {i + 1}": p for i, p in enumerate(self.best_points)}
        summ = self.summary()
        cols["Mean (±σ)"] = self.best_points[0]
        extra = {"Mean (±σ)": {"threshold": "N/A", **{k: f"{m:.2f}±{s:.2f}" for k, (m, s) in summ.items()}}}
        return metrics.format_table(cols, extra)


def nested_validation(
    grid: GridSpec | Candidate,
    dataset: SiteDataset,
    seed: int = 0,
    thresholds=metrics.DEFAULT_THRESHOLDS,
    jobs: int = 1,
    audit: IndexAudit | None = None,
) -> NestedResult:
    """Rotate the test set over five outer folds; select by inner CV when the grid has choices."""
    splits = make_nested_splits(dataset.labels, seed)
    evaluations, selected = [], []
    for k, split in enumerate(splits):
        if isinstance(grid, Candidate):
            cand = grid
        else:
            cands = grid.candidates()
            if not cands:
                raise GridError("every grid combination was pruned")
            cand = cands[0] if len(cands) == 1 else grid_search(cands, dataset, split, thresholds, jobs, audit, f"outer{k}/")[0].candidate
        selected.append(cand)
        evaluations.append(evaluate_test(cand, dataset, split, thresholds, audit, tag=f"outer{k}/test"))
    return NestedResult(evaluations, splits, selected)


# ---------------------------------------------------------- results store


def write_results(results: Sequence[CVResult], out_dir) -> tuple[Path, Path]:
    """One row per (config, fold), plus the ranked summary."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    folds_path, ranked_path = out_dir / "cv_folds.csv", out_dir / "cv_ranked.csv"
    with folds_path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["config", "fold", "threshold", "recall_pct", "precision_pct", "f1_pct", "mcc_pct"])
        for r in results:
            for k, p in enumerate(r.folds):
                w.writerow([r.identity, k, f"{p.threshold:.4f}", f"{p.recall:.6f}", f"{p.precision:.6f}", f"{p.f1:.6f}", f"{p.mcc:.6f}"])
    with ranked_path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["rank", "config", "mean_f1_pct", "std_f1_pct", "mean_mcc_pct", "std_mcc_pct", "status"])
        for i, r in enumerate(rank(results), 1):
            status = f"failed: {r.diagnostics}" if r.failed else "ok"
            w.writerow([i, r.identity, f"{r.mean_f1:.6f}", f"{r.std_f1:.6f}", f"{r.mean_mcc:.6f}", f"{r.std_mcc:.6f}", status])
    return folds_path, ranked_path


# ------------------------------------------------------------ run config


@dataclass
class RunConfig:
    grid: GridSpec
    split_seed: int = 0
    thresholds: tuple[float, ...] = metrics.DEFAULT_THRESHOLDS
    data_manifest: str = ""

    def single(self) -> Candidate:
        cands = self.grid.candidates()
        if len(cands) != 1:
            raise RunConfigError(f"expected exactly one configuration, the grid yields {len(cands)}")
        return cands[0]


_KNOWN_KEYS = {
    "lstm_sizes", "mlp_size", "lr", "weight_decay", "batch_size", "window", "loss", "epochs", "seed",
    "split_seed", "thresholds", "data_manifest", "finetune_loss", "finetune_lr", "finetune_epochs",
}


def _alternatives(value: str, conv) -> list:
    try:
        return [conv(v.strip()) for v in value.split("|") if v.strip()]
    except ValueError as exc:
        raise RunConfigError(str(exc)) from None


def parse_run_config(text: str) -> RunConfig:
    """Parse ``key = value`` lines; ``|`` separates grid alternatives.

    Example::

        lstm_sizes = 32,8 | 64,8
        loss = weighted_ce(w_pos=20) | diff_mcc(W=2,gamma=2)
        lr = 1e-3
    """
    kv: dict[str, str] = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep:
            raise RunConfigError(f"line {n}: expected 'key = value'")
        if key not in _KNOWN_KEYS:
            raise RunConfigError(f"line {n}: unknown key {key!r}")
        kv[key] = value.strip()

    def sizes(v: str) -> tuple[int, ...]:
        return tuple(int(s) for s in v.split(","))

    grid = GridSpec()
    if "lstm_sizes" in kv:
        grid.lstm_sizes = _alternatives(kv["lstm_sizes"], sizes)
    for key, conv in (("mlp_size", int), ("lr", float), ("weight_decay", float), ("batch_size", int), ("window", int)):
        if key in kv:
            setattr(grid, key, _alternatives(kv[key], conv))
    if "loss" in kv:
        grid.loss = _alternatives(kv["loss"], LossSpec.parse)
    if "epochs" in kv:
        grid.epochs = int(kv["epochs"])
    if "seed" in kv:
        grid.seed = int(kv["seed"])
    ft_keys = {"finetune_loss", "finetune_lr", "finetune_epochs"}
    if ft_keys & kv.keys():
        if not ft_keys <= kv.keys():
            raise RunConfigError(f"fine-tuning needs all of {sorted(ft_keys)}")
        grid.finetune = FineTuneSpec(LossSpec.parse(kv["finetune_loss"]), float(kv["finetune_lr"]), int(kv["finetune_epochs"]))
    cfg = RunConfig(grid, split_seed=int(kv.get("split_seed", 0)), data_manifest=kv.get("data_manifest", ""))
    if "thresholds" in kv:
        cfg.thresholds = tuple(float(t) for t in kv["thresholds"].split(","))
    try:
        grid.candidates()
    except ValueError as exc:
        raise RunConfigError(f"invalid combination: {exc}") from None
    return cfg


def load_run_config(path) -> RunConfig:
    return parse_run_config(Path(path).read_text(encoding="utf-8"))
