"""The four losses on one imbalanced batch.

With hard 0/1 predictions and W = gamma = 1, the soft confusion counts are the
ordinary counts, so the differentiable MCC equals the textbook MCC.
"""
import numpy as np

from diffmcc import losses, metrics

rng = np.random.default_rng(1)
n = 200
y = (rng.uniform(size=n) < 0.05).astype(float)
pred = np.clip(rng.normal(0.25 + 0.4 * y, 0.15), 0.001, 0.999)
print(f"{int(y.sum())} positives out of {n}")

for spec in (losses.LossSpec.weighted_ce(20), losses.LossSpec.focal(0.95, 2),
             losses.LossSpec.diff_f1(3, 2), losses.LossSpec.diff_mcc(2, 2)):
    print(f"{str(spec):32s} {losses.compute_loss(spec, pred, y).item(): .6f}")

# hard-label check
hard = (pred >= 0.5).astype(float)
c = metrics.confusion(hard, y, 0.5)
print("classical MCC      ", metrics.mcc_value(c.tp, c.fp, c.fn, c.tn))
print("-diff_mcc_loss     ", -losses.diff_mcc_loss(hard, y, W=1, gamma=1).item())

# soft counts for a few weights: W scales TP and FN only
for W in (1, 2, 5):
    tp, fn, fp, tn = losses.soft_confusion(pred, y, W=W, gamma=2).values()
    print(f"W={W}: TP={tp:.3f} FN={fn:.3f} FP={fp:.3f} TN={tn:.3f}  loss={losses.diff_mcc_loss(pred, y, W, 2).item():.4f}")

# focal with gamma 0 and alpha 0.5 is half the plain CE
print(losses.focal(pred, y, 0.5, 0).item(), 0.5 * losses.weighted_ce(pred, y).item())
