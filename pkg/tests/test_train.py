import math

import numpy as np
import pytest

from botuq.bnn import BayesianModel
from botuq.checkpoint import load_checkpoint, save_checkpoint
from botuq.data import BOT, HUMAN, FeatureMatrix, LabeledDataset, Record
from botuq.engine import no_grad
from botuq.ingest import balance_and_split
from botuq.train import EarlyStopping, TrainConfig, evaluate_loss, train


def test_early_stopping_trace():
    es = EarlyStopping(5)
    stops = [es.update(v) for v in [1.0, 0.9, 0.8, 0.81, 0.82, 0.83, 0.84, 0.85]]
    assert stops == [False] * 7 + [True]
    assert es.best_epoch == 3 and es.epoch == 8


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)
    with pytest.raises(ValueError):
        TrainConfig(max_epochs=3, early_stop_patience=5)
    with pytest.raises(ValueError):
        TrainConfig(mode="frequentist")
    assert TrainConfig().to_dict()["hidden"] == [64, 32, 16]


def _separable(n=200, seed=0):
    rng = np.random.default_rng(seed)
    y = np.r_[np.zeros(n // 2, int), np.ones(n // 2, int)]
    x = rng.normal(size=(n, 2)) * 0.5
    x[:, 0] += np.where(y == 1, 2.5, -2.5)
    ids = [f"a{i}" for i in range(n)]
    fm = FeatureMatrix(ids, ["x0", "x1"], x)
    data = LabeledDataset.from_records([Record(a, int(c), "t") for a, c in zip(ids, y)])
    return fm, balance_and_split(data, seed=seed)


def _accuracy(model, fm, ds):
    with no_grad():
        f, _ = model.forward(fm.rows_for(ds.account_ids), None if model.deterministic else np.random.default_rng(0))
    return float(np.mean((f.values > 0).astype(int) == ds.labels))


SMALL = dict(hidden=(8, 4), batch_size=32, aleatoric_samples=50, initial_lr=5e-3)


def test_max_epochs_one():
    fm, splits = _separable()
    _, rep = train(TrainConfig(max_epochs=1, early_stop_patience=1, **SMALL), splits, fm)
    assert rep.stopped_epoch == 1 and rep.best_epoch == 1 and len(rep.val_losses) == 1


def test_deterministic_separable_and_bayesian_parity():
    fm, splits = _separable()
    cfg = dict(max_epochs=50, early_stop_patience=50, **SMALL)
    det, _ = train(TrainConfig(mode="deterministic", **cfg), splits, fm)
    assert _accuracy(det, fm, splits.train) >= 0.99
    bay, _ = train(TrainConfig(mode="bayesian", **cfg), splits, fm)
    assert abs(_accuracy(bay, fm, splits.validation) - _accuracy(det, fm, splits.validation)) <= 0.02


def test_bitwise_determinism_and_best_checkpoint():
    fm, splits = _separable(seed=1)
    cfg = TrainConfig(max_epochs=6, early_stop_patience=2, **SMALL)
    m1, r1 = train(cfg, splits, fm)
    m2, r2 = train(cfg, splits, fm)
    assert r1.train_losses == r2.train_losses and r1.val_losses == r2.val_losses
    assert r1.val_losses[r1.best_epoch - 1] == min(r1.val_losses)
    # the returned model is the best-validation one
    x, y = fm.rows_for(splits.validation.account_ids), splits.validation.labels
    from botuq.rng import subseed

    got = evaluate_loss(m1, x, y, subseed(cfg.seed, "validation"), cfg.aleatoric_samples)
    assert got == pytest.approx(min(r1.val_losses), rel=1e-12)


def test_evaluate_loss_uniform_and_confident():
    x = np.zeros((4, 2))
    y = np.array([0, 1, 0, 1])
    m = BayesianModel(2, hidden=(3,), mode="deterministic", batch_norm=False, seed=0)
    for layer in m.all_layers():
        layer.weight_mean.values[:] = 0.0
    assert evaluate_loss(m, x, y, seed=0) == pytest.approx(math.log(2), rel=1e-12)
    m.head.bias_mean.values[:] = [50.0, 0.0]
    assert evaluate_loss(m, x[y == 1], y[y == 1], seed=0) < 1e-20
    with pytest.raises(ValueError):
        evaluate_loss(m, np.zeros((0, 2)), np.zeros(0), seed=0)


def test_evaluate_loss_repeatable():
    m = BayesianModel(2, hidden=(3,), init_log_var=-2.0, seed=0)
    x, y = np.random.default_rng(0).normal(size=(9, 2)), np.arange(9) % 2
    assert evaluate_loss(m, x, y, 7, 20) == evaluate_loss(m, x, y, 7, 20)


def test_training_rejects_single_class_split():
    ids = [f"a{i}" for i in range(40)]
    fm = FeatureMatrix(ids, ["x"], np.zeros((40, 1)))
    data = LabeledDataset.from_records([Record(a, i % 2, "t") for i, a in enumerate(ids)])
    splits = balance_and_split(data, seed=0)
    bad = type(splits)(LabeledDataset.from_records([r for r in splits.train.records if r.label == BOT]),
                       splits.validation, splits.test, splits.excess, 0)
    with pytest.raises(ValueError):
        train(TrainConfig(**SMALL), bad, fm)


def test_checkpoint_round_trip(tmp_path):
    fm, splits = _separable(seed=2)
    cfg = TrainConfig(max_epochs=2, early_stop_patience=1, **SMALL)
    model, _ = train(cfg, splits, fm)
    save_checkpoint(tmp_path / "m.json", model, model.optimizer_state, cfg.to_dict(), "vocab.json")
    back, meta = load_checkpoint(tmp_path / "m.json")
    for k, v in model.state().items():
        np.testing.assert_array_equal(back.state()[k], v)
    assert meta["vocabulary_sidecar"] == "vocab.json" and meta["train_config"]["seed"] == cfg.seed
    assert meta["optimizer"].step == model.optimizer_state.step
    x = fm.rows_for(splits.test.account_ids)
    fa, _ = model.forward(x, np.random.default_rng(3))
    fb, _ = back.forward(x, np.random.default_rng(3))
    np.testing.assert_array_equal(fa.values, fb.values)
