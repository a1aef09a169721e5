import math

import numpy as np
import pytest

from diffmcc import data, losses, model, train
from diffmcc.model import ModelConfig
from diffmcc.train import OptimizerState, TrainConfig, TrainingError

TINY = ModelConfig(window=5, lstm_sizes=(4,))


def separable(n=200, seed=0):
    """Positives end in W, negatives never do."""
    ds = data.make_motif_dataset(n, n // 4, window=5, motif={5: "W"}, noise=0.0, seed=seed)
    return ds.tokens(), ds.labels


# --------------------------------------------------------------- schedule


def test_cosine_endpoints():
    cfg = TrainConfig(epochs=70, lr=1e-3)
    assert train.cosine_lr(0, cfg) == 1e-3
    assert train.cosine_lr(35, cfg) == pytest.approx(5e-4, abs=1e-18)
    last = train.cosine_lr(69, cfg)
    assert 0 < last < 0.05 * 1e-3


def test_cosine_is_non_increasing():
    cfg = TrainConfig(epochs=30, lr=0.01)
    lrs = [train.cosine_lr(e, cfg) for e in range(30)]
    assert all(b <= a for a, b in zip(lrs, lrs[1:]))


def test_cosine_rejects_out_of_range_epoch():
    with pytest.raises(ValueError):
        train.cosine_lr(70, TrainConfig(epochs=70))


# ------------------------------------------------------------------ AdamW


def test_zero_gradient_without_decay_changes_nothing():
    p = [np.array([1.0, -2.0]), np.ones((2, 2))]
    before = [a.copy() for a in p]
    train.adamw_step(p, [np.zeros(2), np.zeros((2, 2))], OptimizerState.fresh(p), 0.1, 0.0)
    assert all(np.array_equal(a, b) for a, b in zip(p, before))


def test_decay_acts_with_zero_gradient():
    p = [np.array([3.0])]
    train.adamw_step(p, [np.zeros(1)], OptimizerState.fresh(p), 0.001, 0.1)
    assert p[0][0] == pytest.approx(3.0 * (1 - 1e-4), abs=1e-15)


def test_single_step_hand_arithmetic():
    # bias-corrected moments equal g and g^2 after one step
    p = [np.array([-0.3])]
    train.adamw_step(p, [np.array([2.0])], OptimizerState.fresh(p), 0.01, 0.0)
    assert abs(p[0][0] - (-0.3 - 0.01 * 2.0 / (2.0 + 1e-8))) < 1e-12


def test_non_finite_gradient_raises():
    p = [np.zeros(2)]
    with pytest.raises(train.NonFiniteGradientError):
        train.adamw_step(p, [np.array([np.nan, 0.0])], OptimizerState.fresh(p), 0.1, 0.0)


# --------------------------------------------------------------- config


@pytest.mark.parametrize("kwargs", [dict(epochs=0), dict(batch_size=1), dict(lr=0.0), dict(weight_decay=-1)])
def test_train_config_validation(kwargs):
    with pytest.raises(ValueError):
        TrainConfig(**kwargs)


def test_batches_never_leave_a_singleton():
    chunks = train._batches(129, 128, np.arange(129))
    assert [len(c) for c in chunks] == [129]
    chunks = train._batches(129, 64, np.arange(129))
    assert [len(c) for c in chunks] == [64, 65]
    assert np.array_equal(np.concatenate(chunks), np.arange(129))
    assert [len(c) for c in train._batches(130, 64, np.arange(130))] == [64, 64, 2]


# ------------------------------------------------------------------ loop


def test_separable_toy_reaches_full_f1():
    tokens, labels = separable()
    cfg = TrainConfig(epochs=10, lr=0.02, batch_size=32, loss=losses.LossSpec.weighted_ce(3.0))
    params, log = train.train(TINY, cfg, tokens, labels)
    point = train.validation_point(params, tokens, labels)
    assert point.f1 == 100.0
    assert all(math.isfinite(e.train_loss) for e in log)


def test_same_seed_same_params():
    tokens, labels = separable(120, seed=1)
    cfg = TrainConfig(epochs=3, lr=0.01, batch_size=16, seed=7)
    a, _ = train.train(TINY, cfg, tokens, labels)
    b, _ = train.train(TINY, cfg, tokens, labels)
    assert a.equals(b)


def test_loss_mostly_decreases_across_seeds():
    tokens, labels = separable(160, seed=2)
    ok = 0
    for seed in range(10):
        cfg = TrainConfig(epochs=8, lr=0.01, batch_size=32, seed=seed, loss=losses.LossSpec.weighted_ce(3.0))
        _, log = train.train(TINY, cfg, tokens, labels)
        ok += log[-1].train_loss <= log[0].train_loss
    assert ok >= 9


def test_validation_columns_are_logged(tmp_path):
    tokens, labels = separable(100, seed=3)
    _, log = train.train(TINY, TrainConfig(epochs=2, batch_size=32), tokens, labels, validation=(tokens, labels))
    assert all(math.isfinite(e.val_f1) and math.isfinite(e.val_mcc) for e in log)
    train.write_epoch_log(log, tmp_path / "log.csv")
    lines = (tmp_path / "log.csv").read_text().splitlines()
    assert lines[0] == "epoch,lr,train_loss,val_f1,val_mcc" and len(lines) == 3


def test_single_class_data_is_refused():
    tokens, _ = separable(40)
    with pytest.raises(TrainingError):
        train.train(TINY, TrainConfig(epochs=1), tokens, np.zeros(len(tokens)))


def test_params_for_other_config_are_refused():
    tokens, labels = separable(40)
    with pytest.raises(TrainingError):
        train.train(TINY, TrainConfig(epochs=1), tokens, labels, params=model.init(ModelConfig(window=5, lstm_sizes=(3,))))


def test_diff_mcc_training_runs_and_learns():
    tokens, labels = separable(200, seed=4)
    cfg = TrainConfig(epochs=10, lr=0.02, batch_size=64, loss=losses.LossSpec.diff_mcc(2.0, 2.0))
    params, log = train.train(TINY, cfg, tokens, labels)
    assert log[-1].train_loss < log[0].train_loss
    assert train.validation_point(params, tokens, labels).mcc > 50


# ------------------------------------------------------------ fine-tuning


def test_fine_tune_zero_epochs_is_identity():
    p = model.init(TINY, 0)
    tokens, labels = separable(40)
    q, log = train.fine_tune(p, losses.LossSpec.diff_mcc(), 1e-3, 0, tokens, labels)
    assert q.equals(p) and log == [] and q is not p


def test_fine_tune_starts_from_fresh_optimizer():
    tokens, labels = separable(64, seed=5)
    base = TrainConfig(epochs=2, lr=0.01, batch_size=64, shuffle=False)
    trained, _ = train.train(TINY, base, tokens, labels)
    spec = losses.LossSpec.diff_mcc(2.0, 2.0)
    tuned, _ = train.fine_tune(trained, spec, 5e-4, 1, tokens, labels, base=base)
    # one full batch, one epoch: the same as a single fresh AdamW step at lr 5e-4
    manual = trained.copy()
    from diffmcc import autodiff as ad

    with ad.Tape() as tape:
        loss = losses.compute_loss(spec, model.forward(manual, data.one_hot(tokens)), labels)
    tape.backward(loss)
    tensors = list(manual)
    train.adamw_step([t.data for t in tensors], [t.grad for t in tensors], OptimizerState.fresh([t.data for t in tensors]), 5e-4, 0.0)
    assert tuned.equals(manual)
    assert not tuned.equals(trained)
