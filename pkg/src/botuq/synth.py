"""Synthetic two-class account data with a tunable class overlap.

``overlap = 0`` gives well separated classes, ``overlap = 1`` identical
class distributions.  Two generators:

* ``gaussian``: unit-covariance feature vectors whose class means sit at
  +/- (separation / 2) * (1 - overlap) along a random direction.
* ``bloc``: timelines from per-class Markov chains over actions, with pause
  and content-entity distributions; the bot parameters are blended toward
  the human ones by ``overlap``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import BOT, HUMAN, AccountTimeline, Action, Event, FeatureMatrix, LabeledDataset, Record
from .ingest import write_feature_csv, write_labels
from .rng import substream

ACTIONS = (Action.TWEET, Action.RETWEET, Action.REPLY)

# rows: from-state, columns: to-state, in ACTIONS order
HUMAN_TRANSITIONS = np.array([[0.55, 0.15, 0.30], [0.45, 0.25, 0.30], [0.40, 0.15, 0.45]])
BOT_TRANSITIONS = np.array([[0.10, 0.85, 0.05], [0.05, 0.90, 0.05], [0.20, 0.75, 0.05]])
HUMAN_MEAN_GAP = 900.0
BOT_MEAN_GAP = 25.0
ENTITY_KINDS = ("media", "mention", "hashtag", "url", "text")
# expected count of each entity kind per post
HUMAN_ENTITY_RATES = np.array([0.30, 0.6, 0.2, 0.25, 1.0])
BOT_ENTITY_RATES = np.array([0.05, 2.5, 1.0, 0.95, 0.6])


@dataclass(frozen=True)
class SyntheticSpec:
    n_per_class: int = 1000
    overlap: float = 0.4
    mode: str = "gaussian"
    seed: int = 0
    n_features: int = 8
    separation: float = 6.0
    events_per_account: int = 30

    def __post_init__(self):
        if not 0.0 <= self.overlap <= 1.0:
            raise ValueError("overlap must lie in [0, 1]")
        if self.n_per_class < 1 or self.n_features < 1 or self.events_per_account < 1:
            raise ValueError("counts must be >= 1")
        if self.mode not in ("gaussian", "bloc"):
            raise ValueError("mode must be gaussian or bloc")


def _ids_and_labels(spec: SyntheticSpec, rng: np.random.Generator) -> tuple[list[str], np.ndarray]:
    n = 2 * spec.n_per_class
    labels = np.array([BOT] * spec.n_per_class + [HUMAN] * spec.n_per_class)
    labels = labels[rng.permutation(n)]
    return [f"acct{i:07d}" for i in range(n)], labels


def gaussian_features(spec: SyntheticSpec) -> tuple[FeatureMatrix, LabeledDataset]:
    rng = substream(spec.seed, "synth-gaussian")
    ids, labels = _ids_and_labels(spec, rng)
    direction = rng.standard_normal(spec.n_features)
    direction /= np.linalg.norm(direction)
    shift = 0.5 * spec.separation * (1.0 - spec.overlap)
    sign = np.where(labels == BOT, 1.0, -1.0)
    x = rng.standard_normal((labels.size, spec.n_features)) + shift * sign[:, None] * direction[None, :]
    fm = FeatureMatrix(ids, [f"f{i}" for i in range(spec.n_features)], x)
    data = LabeledDataset.from_records(
        [Record(a, int(y), "synthetic-gaussian", x[i]) for i, (a, y) in enumerate(zip(ids, labels))]
    )
    return fm, data


def _timeline(aid: str, is_bot: bool, spec: SyntheticSpec, rng: np.random.Generator) -> AccountTimeline:
    w = (1.0 - spec.overlap) if is_bot else 0.0
    trans = w * BOT_TRANSITIONS + (1.0 - w) * HUMAN_TRANSITIONS
    rates = w * BOT_ENTITY_RATES + (1.0 - w) * HUMAN_ENTITY_RATES
    t = float(rng.uniform(1.5e9, 1.6e9))
    state = int(rng.integers(3))
    events = []
    for _ in range(spec.events_per_account):
        ents = []
        for kind, lam in zip(ENTITY_KINDS, rates):
            ents += [kind] * int(rng.poisson(lam))
        events.append(Event(t, ACTIONS[state], tuple(ents)))
        # gap drawn from the bot regime with probability w
        mean_gap = BOT_MEAN_GAP if rng.random() < w else HUMAN_MEAN_GAP
        t += float(rng.exponential(mean_gap))
        state = int(rng.choice(3, p=trans[state]))
    return AccountTimeline(aid, tuple(events))


def bloc_timelines(spec: SyntheticSpec) -> tuple[list[AccountTimeline], LabeledDataset]:
    rng = substream(spec.seed, "synth-bloc")
    ids, labels = _ids_and_labels(spec, rng)
    timelines = [_timeline(a, y == BOT, spec, rng) for a, y in zip(ids, labels)]
    data = LabeledDataset.from_records([Record(a, int(y), "synthetic-bloc") for a, y in zip(ids, labels)])
    return timelines, data


def write_timelines_jsonl(timelines, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for tl in timelines:
            for ev in tl.events:
                fh.write(json.dumps({
                    "account_id": tl.account_id,
                    "timestamp": ev.timestamp,
                    "action": ev.action.value,
                    "entities": list(ev.entities),
                }) + "\n")


def write_synthetic(spec: SyntheticSpec, outdir) -> dict[str, str]:
    """Write the dataset files and return their paths by role."""
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"labels": str(out / "labels.csv")}
    if spec.mode == "gaussian":
        fm, data = gaussian_features(spec)
        paths["features"] = str(out / "features.csv")
        write_feature_csv(fm, paths["features"])
    else:
        timelines, data = bloc_timelines(spec)
        paths["timelines"] = str(out / "timelines.jsonl")
        write_timelines_jsonl(timelines, paths["timelines"])
    write_labels(data, paths["labels"])
    return paths
