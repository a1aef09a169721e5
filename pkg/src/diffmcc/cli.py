"""Command-line entry point: ``diffmcc {train,predict,sweep,nested,eval}``.

Exit codes: 0 success, 1 runtime failure, 2 usage or input error. Failures
print one JSON line to stderr: ``{"error": <kind>, "message": <text>}``.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import metrics
from .data import (
    SITE_RESIDUES,
    DatasetFormatError,
    SplitError,
    cut_window,
    load_dataset,
    make_split,
    one_hot,
    site_positions,
    tokenize,
)
from .harness import (
    GridError,
    RunConfigError,
    window_arrays,
    evaluate_test,
    grid_search,
    load_run_config,
    nested_validation,
    write_results,
)
from .losses import LossSpecError
from .model import ModelConfigError, ModelFileError, load, predict_proba, save
from .svgplot import render_pr_svg
from .train import TrainingError, write_epoch_log

logger = logging.getLogger("diffmcc")

INPUT_ERRORS = (FileNotFoundError, IsADirectoryError, DatasetFormatError, RunConfigError, ModelFileError,
                ModelConfigError, LossSpecError, SplitError, GridError)


class UsageError(Exception):
    pass


def _fail(kind: str, message: str, code: int) -> int:
    print(json.dumps({"error": kind, "message": message}), file=sys.stderr)
    return code


def _require(path: str, what: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"{what} not found: {p}")
    return p


def _out_path(path: str | None, default_name: str) -> Path:
    if path:
        return Path(path)
    base = os.environ.get("DIFFMCC_HOME")
    return Path(base) / default_name if base else Path(default_name)


def _no_model(labels) -> metrics.MetricPoint:
    p = metrics.point_metrics(metrics.confusion(np.ones(len(labels)), labels, 0.0))
    return metrics.MetricPoint(float("nan"), p.recall, p.precision, p.f1, p.mcc)


def _sidecar(model_path: Path, suffix: str) -> Path:
    return model_path.with_name(model_path.stem + suffix)


# ------------------------------------------------------------------ commands


def cmd_train(args) -> int:
    cfg = load_run_config(_require(args.config, "run config"))
    cand = cfg.single()
    ds = load_dataset(_require(args.data, "dataset"), cand.model.window)
    split = make_split(ds.labels, cfg.split_seed)
    ev = evaluate_test(cand, ds, split, cfg.thresholds)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    best = ev.best
    save(ev.params, out, {
        "threshold": f"{best.threshold:.6g}",
        "split_seed": str(cfg.split_seed),
        "thresholds": ",".join(f"{t:g}" for t in cfg.thresholds),
        "candidate": cand.identity,
    })
    write_epoch_log(ev.log, _sidecar(out, ".epochs.csv"))
    metrics.write_curve_csv(ev.curve, _sidecar(out, ".pr_curve.csv"))
    if args.svg:
        _sidecar(out, ".pr_curve.svg").write_text(render_pr_svg({cand.identity: ev.curve}, ds.positive_fraction))
    print(metrics.format_table({"Model": best, "No Model": _no_model(ds.labels[split.test_indices])}))
    return 0


def _scan_rows(seq: str, window: int) -> list[tuple[int, str]]:
    """(1-based position, window) for every site; a bare window of the model width is one site."""
    seq = seq.strip().upper()
    if len(seq) == 2 * window + 1 and seq[window] in SITE_RESIDUES:
        return [(window + 1, seq)]
    return [(i + 1, cut_window(seq, i, window)) for i in site_positions(seq)]


def _predict_windows(params, windows: list[str], batch_size: int) -> np.ndarray:
    if not windows:
        return np.zeros(0)
    return predict_proba(params, one_hot(tokenize(windows)), batch_size)


def cmd_predict(args) -> int:
    params, meta = load(_require(args.model, "model file"))
    window = params.config.window
    threshold = args.threshold if args.threshold is not None else float(meta.get("threshold", 0.5))
    src = Path(args.input)
    if src.suffix.lower() == ".csv":
        with _require(args.input, "input CSV").open(newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
        if not rows:
            raise DatasetFormatError(f"{src}: empty file")
        seqs = [r[0] if r else "" for r in rows[1:]]
        jobs = [(s, _scan_rows(s, window)) for s in seqs]
        windows = [w for _, sites in jobs for _, w in sites]
        probs = iter(_predict_windows(params, windows, args.batch_size))
        out = _out_path(args.out, src.stem + "_predictions.csv")
        out.parent.mkdir(parents=True, exist_ok=True)
        with out.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["sequence", "position", "window", "probability", "label", "error"])
            for seq, sites in jobs:
                if not sites:
                    w.writerow([seq, "", "", "", "", "no S/T site"])
                for pos, win in sites:
                    p = float(next(probs))
                    w.writerow([seq, pos, win, repr(p), int(p >= threshold), ""])
        print(f"wrote {out}", file=sys.stderr)
        return 0
    sites = _scan_rows(args.input, window)
    if not sites:
        return _fail("input", f"sequence contains no S/T site: {args.input}", 2)
    probs = _predict_windows(params, [w for _, w in sites], args.batch_size)
    print("position,window,probability,label")
    for (pos, win), p in zip(sites, probs):
        print(f"{pos},{win},{float(p)!r},{int(p >= threshold)}")
    return 0


def cmd_sweep(args) -> int:
    cfg = load_run_config(_require(args.grid, "grid file"))
    cands = cfg.grid.candidates()
    if not cands:
        raise GridError("every grid combination was pruned")
    ds = load_dataset(_require(args.data, "dataset"), max(c.model.window for c in cands))
    split = make_split(ds.labels, cfg.split_seed)
    results = grid_search(cands, ds, split, cfg.thresholds, jobs=args.jobs)
    _, ranked = write_results(results, args.out)
    for i, r in enumerate(results[:10], 1):
        status = "FAILED " + r.diagnostics if r.failed else f"F1 {r.mean_f1:.2f}±{r.std_f1:.2f}  MCC {r.mean_mcc:.2f}±{r.std_mcc:.2f}"
        print(f"{i:>3}  {status}  {r.identity}")
    print(f"wrote {ranked}", file=sys.stderr)
    return 0


def cmd_nested(args) -> int:
    cfg = load_run_config(_require(args.config, "run config"))
    cands = cfg.grid.candidates()
    if not cands:
        raise GridError("every grid combination was pruned")
    ds = load_dataset(_require(args.data, "dataset"), max(c.model.window for c in cands))
    res = nested_validation(cfg.grid, ds, cfg.split_seed, cfg.thresholds, jobs=args.jobs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for k, curve in enumerate(res.curves, 1):
        metrics.write_curve_csv(curve, out / f"nested_fold{k}.pr_curve.csv")
    summ = res.summary()
    with (out / "nested_summary.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["metric", *(f"fold{k}" for k in range(1, 6)), "mean", "std"])
        w.writerow(["threshold", *(f"{p.threshold:.4f}" for p in res.best_points), "", ""])
        for attr in ("recall", "precision", "f1", "mcc"):
            m, s = summ[attr]
            w.writerow([f"{attr}_pct", *(f"{getattr(p, attr):.6f}" for p in res.best_points), f"{m:.6f}", f"{s:.6f}"])
    if args.svg:
        (out / "nested.pr_curve.svg").write_text(render_pr_svg({f"Fold {k}": c for k, c in enumerate(res.curves, 1)}))
    print(res.table())
    return 0


def cmd_eval(args) -> int:
    params, meta = load(_require(args.model, "model file"))
    ds = load_dataset(_require(args.data, "dataset"), params.config.window)
    split = make_split(ds.labels, int(meta.get("split_seed", 0)))
    thresholds = tuple(float(t) for t in meta["thresholds"].split(",")) if "thresholds" in meta else metrics.DEFAULT_THRESHOLDS
    tokens, labels = window_arrays(ds, params.config.window)
    idx = split.test_indices
    curve = metrics.sweep(predict_proba(params, one_hot(tokens[idx])), labels[idx], thresholds)
    if args.out:
        metrics.write_curve_csv(curve, args.out)
    print(metrics.format_table({"Model": curve.best_point, "No Model": _no_model(labels[idx])}))
    return 0


# ------------------------------------------------------------------- parser


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="diffmcc", description="Train, evaluate and apply O-GlcNAcylation site classifiers.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="train one configuration on the 80%% split and test on the rest")
    t.add_argument("--config", required=True)
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True, help="model file; logs and curves are written next to it")
    t.add_argument("--jobs", type=int, default=1)
    t.add_argument("--svg", action="store_true", help="also render the test PR curve as SVG")
    t.set_defaults(func=cmd_train)

    pr = sub.add_parser("predict", help="score a sequence or a one-column CSV of sequences")
    pr.add_argument("input", help="amino-acid sequence or path to a .csv with a header row")
    pr.add_argument("--model", required=True)
    pr.add_argument("-t", "--threshold", type=float, default=None, help="default: threshold stored in the model")
    pr.add_argument("-bs", "--batch-size", dest="batch_size", type=int, default=512)
    pr.add_argument("--out", default=None, help="output CSV in CSV mode")
    pr.set_defaults(func=cmd_predict)

    s = sub.add_parser("sweep", help="grid search with cross-validation")
    s.add_argument("--grid", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--jobs", type=int, default=1)
    s.set_defaults(func=cmd_sweep)

    n = sub.add_parser("nested", help="five-fold nested validation")
    n.add_argument("--config", required=True)
    n.add_argument("--data", required=True)
    n.add_argument("--out", required=True)
    n.add_argument("--jobs", type=int, default=1)
    n.add_argument("--svg", action="store_true")
    n.set_defaults(func=cmd_nested)

    e = sub.add_parser("eval", help="re-score a saved model on its test split")
    e.add_argument("--model", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--out", default=None, help="optional PR-curve CSV")
    e.set_defaults(func=cmd_eval)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        parser.print_help(sys.stderr)
        return _fail("usage", str(exc), 2)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except INPUT_ERRORS as exc:
        return _fail("input", str(exc), 2)
    except (TrainingError, ArithmeticError, RuntimeError, ValueError, OSError) as exc:
        return _fail(type(exc).__name__, str(exc), 1)


if __name__ == "__main__":
    sys.exit(main())
