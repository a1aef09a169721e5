"""Weighted CE, differentiable MCC, and CE followed by MCC fine-tuning.

The task is synthetic: 2.5% of windows are positive, most positives carry
P at -1, V at +1 and A at +3 around the central S/T, and 20% of labels are
flipped. One seed, a small model; takes about a minute.
"""
import time

import numpy as np

from diffmcc import data, losses, metrics, model, train
from diffmcc.harness import Candidate, evaluate_test

ds = data.make_motif_dataset(2000, 50, window=5, noise=0.2, seed=3)
split = data.make_split(ds.labels, 0)
print(f"{len(ds)} windows, {ds.n_positive} positive; test set {len(split.test_indices)}")

mc = model.ModelConfig(window=5, lstm_sizes=(32, 8))
ce = train.TrainConfig(epochs=20, lr=1e-3, batch_size=128, loss=losses.LossSpec.weighted_ce(20))
dm = train.TrainConfig(epochs=20, lr=5e-4, batch_size=128, loss=losses.LossSpec.diff_mcc(2, 2))

t0 = time.time()
ce_eval = evaluate_test(Candidate(mc, ce), ds, split)
dm_eval = evaluate_test(Candidate(mc, dm), ds, split)

tokens, labels = ds.tokens(), ds.labels
tuned, _ = train.fine_tune(ce_eval.params, losses.LossSpec.diff_mcc(2, 2), 5e-4, 10,
                           tokens[split.train_indices], labels[split.train_indices], base=ce)
probs = model.predict_proba(tuned, data.one_hot(tokens[split.test_indices]))
ft_curve = metrics.sweep(probs, labels[split.test_indices])

baseline = metrics.point_metrics(metrics.confusion(np.ones(len(split.test_indices)), labels[split.test_indices], 0))
print(metrics.format_table({
    "CE": ce_eval.best,
    "diff MCC": dm_eval.best,
    "CE -> diff MCC": ft_curve.best_point,
    "No Model": baseline,
}))
print(f"{time.time() - t0:.0f} s")

# the epoch log of the CE run
for e in ce_eval.log[::5]:
    print(f"epoch {e.epoch:2d}  lr {e.lr:.2e}  loss {e.train_loss:.4f}")
