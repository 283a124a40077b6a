import math

import numpy as np
import pytest

from botuq.bloc import BlocAlphabet, featurize
from botuq.data import BOT
from botuq.synth import SyntheticSpec, bloc_timelines, gaussian_features, write_synthetic


def test_same_seed_same_files(tmp_path):
    for kind in ("gaussian", "bloc"):
        spec = SyntheticSpec(40, 0.3, mode=kind, seed=5)
        a = write_synthetic(spec, tmp_path / f"{kind}a")
        b = write_synthetic(spec, tmp_path / f"{kind}b")
        for role in a:
            with open(a[role], "rb") as fa, open(b[role], "rb") as fb:
                assert fa.read() == fb.read()


def test_balanced_labels():
    _, data = gaussian_features(SyntheticSpec(25, seed=1))
    assert data.class_counts == {0: 25, 1: 25}


def _projection_accuracy(spec):
    fm, data = gaussian_features(spec)
    y = data.labels
    # class-mean direction estimated from the data itself
    d = fm.weights[y == BOT].mean(0) - fm.weights[y != BOT].mean(0)
    score = fm.weights @ d
    thr = 0.5 * (score[y == BOT].mean() + score[y != BOT].mean())
    return float(np.mean((score > thr) == (y == BOT))), y.size


def test_zero_overlap_is_separable():
    acc, _ = _projection_accuracy(SyntheticSpec(500, 0.0, seed=2, separation=12.0))
    assert acc == 1.0


def test_full_overlap_is_chance():
    spec = SyntheticSpec(500, 1.0, seed=3)
    fm, data = gaussian_features(spec)
    # identical class distributions: any fixed rule is at chance
    w = np.random.default_rng(0).standard_normal(spec.n_features)
    acc = float(np.mean((fm.weights @ w > 0) == (data.labels == BOT)))
    n = data.labels.size
    assert abs(acc - 0.5) <= 3 / math.sqrt(n)


def test_bloc_timelines_featurize():
    tls, data = bloc_timelines(SyntheticSpec(10, 0.2, mode="bloc", seed=0, events_per_account=12))
    assert len(tls) == 20 and all(len(t.events) == 12 for t in tls)
    assert all(np.all(np.diff([e.timestamp for e in t.events]) >= 0) for t in tls)
    fm, vocab = featurize(tls, BlocAlphabet())
    assert fm.width == len(vocab.words) > 0


def test_bad_specs():
    with pytest.raises(ValueError):
        SyntheticSpec(overlap=1.5)
    with pytest.raises(ValueError):
        SyntheticSpec(n_per_class=0)
    with pytest.raises(ValueError):
        SyntheticSpec(mode="text")
