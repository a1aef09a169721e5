"""Full-scale run on the published site table. Not part of the test suite.

Steps, all seeded:

1. fetch the 558,168-row table (or use --data) and check its census;
2. cross-validate a grid around the reported optima for weighted CE and
   for the differentiable MCC, on the 80% training part;
3. retrain the best of each on the whole training part and score the test part;
4. fine-tune the best CE model with the best MCC loss settings;
5. five-fold nested validation of the best MCC model.

With 600-unit LSTMs over 41-residue windows this is days of CPU time in pure
numpy. Use --quick for a hollowed-out version that finishes in hours.

    python demos/reproduce_full_scale.py --out runs/full --jobs 8
"""
import argparse
import logging
import time
from pathlib import Path

import numpy as np

from diffmcc import data, losses, metrics
from diffmcc.harness import Candidate, FineTuneSpec, GridSpec, evaluate_test, grid_search, nested_validation, write_results
from diffmcc.svgplot import render_pr_svg

parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
parser.add_argument("--data", default=None, help="local copy of the published CSV")
parser.add_argument("--out", default="runs/full")
parser.add_argument("--jobs", type=int, default=1)
parser.add_argument("--quick", action="store_true", help="small grid, 10 epochs")
args = parser.parse_args()
logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
out = Path(args.out)
out.mkdir(parents=True, exist_ok=True)

manifest = data.read_manifest()["published"]
path = Path(args.data) if args.data else data.fetch_dataset(manifest["url"], sha256=manifest["sha256"] or None)
ds = data.load_dataset(path, window=20)
print(f"{len(ds)} records, {ds.n_positive} positive ({100 * ds.positive_fraction:.2f}%), {ds.rejected} rejected")
if (len(ds), ds.n_positive) != (int(manifest["rows"]), int(manifest["positives"])):
    print("warning: census differs from the published counts")
split = data.make_split(ds.labels, 0)

epochs = 10 if args.quick else 70
ce_grid = GridSpec(
    lstm_sizes=[(450, 75)] if args.quick else [(450, 75), (525, 75), (600, 75)],
    lr=[1e-3], batch_size=[128], window=[20], weight_decay=[0.0, 1e-2],
    loss=[losses.LossSpec.weighted_ce(w) for w in ((20,) if args.quick else (15, 20, 25, 30))],
    epochs=epochs,
)
mcc_grid = GridSpec(
    lstm_sizes=[(600, 75)] if args.quick else [(450, 75), (600, 75), (750, 75)],
    lr=[5e-4] if args.quick else [1e-3, 5e-4, 1e-4], batch_size=[128], window=[20], weight_decay=[0.0, 1e-2],
    loss=[losses.LossSpec.diff_mcc(W, g) for W in (2,) for g in ((2,) if args.quick else (1, 2, 3, 4, 5))],
    epochs=epochs,
)

best = {}
for name, grid in (("ce", ce_grid), ("diff_mcc", mcc_grid)):
    t0 = time.time()
    results = grid_search(grid, ds, split, jobs=args.jobs)
    write_results(results, out / f"cv_{name}")
    best[name] = results[0].candidate
    print(f"{name}: best of {len(results)} is {results[0].identity} "
          f"(CV F1 {results[0].mean_f1:.2f}, MCC {results[0].mean_mcc:.2f}) in {time.time() - t0:.0f} s")

ce_best, mcc_best = best["ce"], best["diff_mcc"]
finetune = Candidate(ce_best.model, ce_best.train, FineTuneSpec(mcc_best.train.loss, mcc_best.train.lr, 10))
curves, columns = {}, {}
for label, cand in (("CE", ce_best), ("CE -> diff MCC", finetune), ("diff MCC", mcc_best)):
    ev = evaluate_test(cand, ds, split)
    curves[label] = ev.curve
    columns[label] = ev.best
    metrics.write_curve_csv(ev.curve, out / f"test_{label.replace(' ', '_').replace('->', 'to')}.pr_curve.csv")
y_test = ds.labels[split.test_indices]
columns["No Model"] = metrics.point_metrics(metrics.confusion(np.ones(len(y_test)), y_test, 0))
print(metrics.format_table(columns))
(out / "test.pr_curve.svg").write_text(render_pr_svg(curves, ds.positive_fraction))

nested = nested_validation(mcc_best, ds, seed=0, jobs=args.jobs)
print(nested.table())
for k, curve in enumerate(nested.curves, 1):
    metrics.write_curve_csv(curve, out / f"nested_fold{k}.pr_curve.csv")
