import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from diffmcc import autodiff as ad
from diffmcc import losses
from diffmcc.autodiff import Tensor
from diffmcc.losses import LossSpec, LossSpecError

from conftest import numeric_grad, rel_error, tape_grad

probs = st.floats(0.0, 1.0, allow_nan=False)


@st.composite
def mixed_batch(draw, min_size=2, max_size=40):
    n = draw(st.integers(min_size, max_size))
    pred = draw(arrays(np.float64, n, elements=st.floats(0.01, 0.99)))
    y = draw(arrays(np.float64, n, elements=st.sampled_from([0.0, 1.0])))
    assume(0 < y.sum() < n)
    return pred, y


def grad_wrt_pred(fn, pred, y):
    p = Tensor(pred.copy(), requires_grad=True)
    _, (g,) = tape_grad(lambda p: fn(p, y), [p])
    return g


# ------------------------------------------------------------ weighted CE


# the 1e-12 guard inside log shifts values by about 1e-12 / p, hence 1e-10 below
LOG_TOL = 1e-10


def test_ce_half_is_ln2():
    assert abs(losses.weighted_ce([0.5], [1.0]).item() - math.log(2)) < LOG_TOL


def test_ce_frozen_oracle():
    # -(15 ln 0.8 + ln 0.8) / 2, evaluated at 30 digits
    assert abs(losses.weighted_ce([0.8, 0.2], [1.0, 0.0], 15.0).item() - 1.78514841051367804613) < LOG_TOL


def test_ce_weight_one_is_plain_ce(rng):
    pred, y = rng.uniform(0.01, 0.99, 50), rng.integers(0, 2, 50).astype(float)
    plain = -np.mean(y * np.log(pred) + (1 - y) * np.log(1 - pred))
    assert abs(losses.weighted_ce(pred, y, 1.0).item() - plain) < LOG_TOL


def test_ce_is_finite_at_hard_extremes():
    assert np.isfinite(losses.weighted_ce([0.0, 1.0], [1.0, 0.0], 20).item())


# ------------------------------------------------------------------ focal


def test_focal_frozen_oracle():
    # p_t = 0.9 for both samples; -(0.95 + 0.05) * 0.01 * ln 0.9 / 2
    assert abs(losses.focal([0.9, 0.1], [1.0, 0.0], 0.95, 2.0).item() - 0.000526802578289131506) < 1e-13


def test_focal_confident_sample_contributes_nothing():
    assert losses.focal([1.0 - 1e-7], [1.0], 0.5, 2.0).item() < 1e-20


@given(mixed_batch(min_size=1), st.floats(0.01, 0.99))
def test_focal_gamma_zero_is_alpha_weighted_ce(batch, alpha):
    pred, y = batch
    a_t = alpha * y + (1 - alpha) * (1 - y)
    expected = -np.mean(a_t * (y * np.log(pred) + (1 - y) * np.log(1 - pred)))
    assert abs(losses.focal(pred, y, alpha, 0.0).item() - expected) < LOG_TOL


# -------------------------------------------------------- soft confusion


def test_soft_confusion_perfect_predictions():
    y = np.array([1, 1, 0, 0, 0], dtype=float)
    c = losses.soft_confusion(y, y)
    assert c.values() == (2.0, 0.0, 0.0, 3.0)


def test_soft_confusion_constant_half():
    y = np.array([1, 1, 1, 1, 0, 0], dtype=float)
    tp, fn, fp, tn = losses.soft_confusion(np.full(6, 0.5), y).values()
    assert (tp, fn, fp, tn) == (2.0, 2.0, 1.0, 1.0)


def test_soft_confusion_vs_per_sample_loop(rng):
    pred, y = rng.uniform(size=16), rng.integers(0, 2, 16).astype(float)
    W, g = 3.0, 2.0
    tp = fn = fp = tn = 0.0
    for p, t in zip(pred, y):
        pt = p if t == 1 else 1 - p
        if t == 1:
            tp += W * pt**g
            fn += W * (1 - pt) ** g
        else:
            tn += pt**g
            fp += (1 - pt) ** g
    got = losses.soft_confusion(pred, y, W, g).values()
    assert np.allclose(got, (tp, fn, fp, tn), rtol=1e-12, atol=0)


# ------------------------------------------------------------ diff MCC / F1


def test_diff_mcc_perfect_is_minus_one():
    y = np.array([1, 0, 0, 1, 0], dtype=float)
    assert abs(losses.diff_mcc_loss(y, y).item() + 1.0) < 1e-9


def test_diff_mcc_no_skill_is_zero():
    y = np.array([1, 0, 0, 1, 0, 0], dtype=float)
    assert abs(losses.diff_mcc_loss(np.full(6, 0.5), y).item()) < 1e-12


def test_diff_f1_perfect_is_minus_one():
    y = np.array([1, 0, 1], dtype=float)
    assert abs(losses.diff_f1_loss(y, y).item() + 1.0) < 1e-9


def test_diff_f1_all_positive_at_published_base_rate():
    # 13,637 of 558,168 positive, everything predicted positive
    n, pos = 558_168, 13_637
    y = np.zeros(n)
    y[:pos] = 1
    val = -losses.diff_f1_loss(np.ones(n), y).item()
    p = pos / n
    assert abs(val - 2 * p / (1 + p)) < 1e-9
    assert abs(100 * val - 4.76) < 0.015


def test_diff_f1_vs_per_sample_counts(rng):
    pred, y = rng.uniform(size=20), rng.integers(0, 2, 20).astype(float)
    y[:2] = [0, 1]
    W, g = 2.0, 1.5
    pt = np.where(y == 1, pred, 1 - pred)
    tp = W * np.sum(pt**g * y)
    fn = W * np.sum((1 - pt) ** g * y)
    fp = np.sum((1 - pt) ** g * (1 - y))
    assert abs(losses.diff_f1_loss(pred, y, W, g).item() + 2 * tp / (2 * tp + fp + fn)) < 1e-12


def test_diff_mcc_gradient_finite_differences_batch_32(rng):
    pred, y = rng.uniform(0.05, 0.95, 32), rng.integers(0, 2, 32).astype(float)
    y[:2] = [0, 1]
    fn = lambda p, y: losses.diff_mcc_loss(p, y, 2.0, 2.0)
    g = grad_wrt_pred(fn, pred, y)
    fd = numeric_grad(lambda: fn(pred, y).item(), pred)
    assert rel_error(g, fd) < 1e-4


def test_diff_mcc_gradient_finite_differences_8_samples(rng):
    pred, y = rng.uniform(0.05, 0.95, 8), np.array([1, 0, 1, 0, 0, 0, 1, 0], dtype=float)
    g = grad_wrt_pred(losses.diff_mcc_loss, pred, y)
    fd = numeric_grad(lambda: losses.diff_mcc_loss(pred, y).item(), pred)
    assert rel_error(g, fd) < 1e-4


def test_single_class_batch_is_flagged_not_fatal():
    before = losses.diagnostics["single_class_batch"]
    val = losses.diff_mcc_loss([0.3, 0.6], [1.0, 1.0]).item()
    assert np.isfinite(val)
    assert losses.diagnostics["single_class_batch"] == before + 1


def test_empty_batch_is_contract_error():
    with pytest.raises(ad.ContractError):
        losses.diff_mcc_loss([], [])


def test_shape_mismatch():
    with pytest.raises(ad.DimensionError):
        losses.weighted_ce([0.5, 0.5], [1.0])


@settings(max_examples=200)
@given(mixed_batch(), st.floats(1.0, 5.0), st.floats(1.0, 3.0), st.data())
def test_monotone_response_in_positive_prediction(batch, W, gamma, data):
    pred, y = batch
    i = data.draw(st.sampled_from(np.flatnonzero(y == 1).tolist()))
    bump = data.draw(st.floats(1e-3, 0.5))
    higher = pred.copy()
    higher[i] = min(pred[i] + bump, 0.999)
    assume(higher[i] > pred[i] + 1e-6)
    assert losses.diff_mcc_loss(higher, y, W, gamma).item() < losses.diff_mcc_loss(pred, y, W, gamma).item()


def _pull_ratio(pred, y, W, gamma):
    """Total gradient magnitude on positives over that on negatives."""
    g = grad_wrt_pred(lambda p, t: losses.diff_mcc_loss(p, t, W, gamma), pred, y)
    return np.abs(g[y == 1]).sum() / np.abs(g[y == 0]).sum()


def test_weight_direction_holds_for_most_imbalanced_batches():
    # not a theorem: W also moves the MCC partials, so we check the trend
    rng = np.random.default_rng(59)
    ok = total = 0
    while total < 400:
        n = int(rng.integers(8, 129))
        y = (rng.uniform(size=n) < 0.1).astype(float)
        if not 0 < y.sum() < n:
            continue
        pred = rng.uniform(0.01, 0.99, n)
        gamma, W = rng.uniform(1, 3), rng.uniform(1, 4)
        total += 1
        ok += _pull_ratio(pred, y, W + rng.uniform(0.01, 4), gamma) > _pull_ratio(pred, y, W, gamma)
    assert ok / total >= 0.85


def test_weight_direction_counterexample():
    # one positive scored high, negatives spread: raising W shifts the pull to the negatives
    rng = np.random.default_rng(0)
    for _ in range(2000):
        n = int(rng.integers(4, 20))
        y = np.zeros(n)
        y[0] = 1
        pred = rng.uniform(0.01, 0.99, n)
        if _pull_ratio(pred, y, 3.0, 2.0) < _pull_ratio(pred, y, 1.0, 2.0):
            return
    pytest.fail("no counterexample found")


@given(arrays(np.float64, st.integers(1, 30), elements=probs), st.data())
def test_all_losses_finite_on_closed_interval(pred, data):
    y = data.draw(arrays(np.float64, len(pred), elements=st.sampled_from([0.0, 1.0])))
    for spec in (LossSpec.weighted_ce(20), LossSpec.focal(0.9, 2), LossSpec.diff_f1(3, 2), LossSpec.diff_mcc(2, 2)):
        assert np.isfinite(losses.compute_loss(spec, pred, y).item()), spec


# -------------------------------------------------------------- LossSpec


def test_lossspec_round_trip():
    for spec in (LossSpec.weighted_ce(20), LossSpec.focal(0.95, 2), LossSpec.diff_f1(3, 1.5), LossSpec.diff_mcc(2, 2)):
        assert LossSpec.parse(str(spec)) == spec


@pytest.mark.parametrize("make", [
    lambda: LossSpec.weighted_ce(0),
    lambda: LossSpec.focal(1.5, 2),
    lambda: LossSpec.focal(0.5, -1),
    lambda: LossSpec.diff_mcc(0, 2),
    lambda: LossSpec.diff_mcc(1, 0.5),
    lambda: LossSpec("hinge"),
])
def test_lossspec_rejects_out_of_range(make):
    with pytest.raises(LossSpecError):
        make()
