"""Loading labeled accounts and producing class-balanced splits."""

from __future__ import annotations

import csv
import json
import logging
import math
from collections import defaultdict
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .data import (
    BOT,
    HUMAN,
    AccountTimeline,
    Action,
    Event,
    FeatureMatrix,
    LabeledDataset,
    Record,
    SplitBundle,
    parse_label,
)

log = logging.getLogger(__name__)

REQUIRED_EVENT_KEYS = ("account_id", "timestamp", "action")


def parse_timestamp(raw) -> float:
    """Epoch seconds from a number, numeric string, or ISO-8601 string."""
    if isinstance(raw, bool):
        raise ValueError(f"timestamp not parseable: {raw!r}")
    if isinstance(raw, (int, float)):
        if not math.isfinite(raw):
            raise ValueError(f"timestamp not parseable: {raw!r}")
        return float(raw)
    s = str(raw).strip()
    try:
        return float(s)
    except ValueError:
        pass
    try:
        dt = datetime.fromisoformat(s.replace("Z", "+00:00"))
    except ValueError:
        raise ValueError(f"timestamp not parseable: {raw!r}") from None
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.timestamp()


def _is_blank(v) -> bool:
    return v is None or (isinstance(v, str) and not v.strip())


def parse_timelines(path, format: str | None = None) -> tuple[list[AccountTimeline], int]:
    """Group post records by account, sorted by time.

    Returns ``(timelines, n_malformed)``; rows lacking a required field are
    skipped and counted.  Unknown actions and unparseable timestamps raise.
    """
    path = Path(path)
    if format is None:
        format = "csv" if path.suffix.lower() == ".csv" else "jsonl"
    if format not in ("jsonl", "csv"):
        raise ValueError(f"format must be jsonl or csv, got {format!r}")
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot read timelines from {path}: {exc}") from exc

    rows: list[dict] = []
    malformed = 0
    if format == "jsonl":
        for lineno, line in enumerate(text.splitlines(), 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError:
                malformed += 1
                log.warning("%s:%d: invalid JSON", path, lineno)
                continue
            rows.append(obj if isinstance(obj, dict) else {})
    else:
        for row in csv.DictReader(text.splitlines()):
            ents = row.get("entities") or ""
            row["entities"] = [e for e in ents.split(";") if e]
            rows.append(row)

    per_account: dict[str, list[Event]] = defaultdict(list)
    order: list[str] = []
    for row in rows:
        if any(_is_blank(row.get(k)) for k in REQUIRED_EVENT_KEYS):
            malformed += 1
            continue
        ents = row.get("entities") or []
        if isinstance(ents, str):
            ents = [ents]
        ev = Event(parse_timestamp(row["timestamp"]), Action.parse(row["action"]), tuple(str(e) for e in ents))
        aid = str(row["account_id"])
        if aid not in per_account:
            order.append(aid)
        per_account[aid].append(ev)
    if malformed:
        log.warning("%s: skipped %d malformed row(s)", path, malformed)
    timelines = [
        AccountTimeline(aid, tuple(sorted(per_account[aid], key=lambda e: e.timestamp))) for aid in order
    ]
    return timelines, malformed


def load_labels(path) -> LabeledDataset:
    """Labels CSV with header ``account_id,label,source``."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or "account_id" not in reader.fieldnames or "label" not in reader.fieldnames:
            raise ValueError(f"{path}: labels header must include account_id,label")
        records = [Record(r["account_id"], parse_label(r["label"]), r.get("source") or "") for r in reader]
    return LabeledDataset.from_records(records)


def write_labels(dataset: LabeledDataset, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["account_id", "label", "source"])
        for r in dataset.records:
            w.writerow([r.account_id, r.label, r.source])


def read_feature_csv(path) -> FeatureMatrix:
    """Feature CSV whose first column is ``account_id``; remaining headers name the features."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty feature file") from None
        if not header or header[0] != "account_id":
            raise ValueError(f"{path}: first column must be account_id")
        width = len(header) - 1
        ids, rows = [], []
        for lineno, row in enumerate(reader, 2):
            if not row:
                continue
            if len(row) - 1 != width:
                raise ValueError(f"{path}:{lineno}: ragged row, width {len(row) - 1} != {width}")
            try:
                rows.append([float(v) for v in row[1:]])
            except ValueError:
                raise ValueError(f"{path}:{lineno}: non-numeric cell") from None
            ids.append(row[0])
    weights = np.array(rows, dtype=np.float64).reshape(len(rows), width)
    return FeatureMatrix(ids, header[1:], weights)


def write_feature_csv(fm: FeatureMatrix, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["account_id", *fm.vocabulary])
        for aid, row in zip(fm.account_ids, fm.weights):
            w.writerow([aid, *(repr(float(v)) for v in row)])


def load_feature_matrix(path, labels_path) -> tuple[FeatureMatrix, LabeledDataset]:
    """Precomputed feature vectors joined to labels; rows follow label order."""
    fm = read_feature_csv(path)
    labels = load_labels(labels_path)
    if len(set(fm.account_ids)) != len(fm.account_ids):
        raise ValueError(f"{path}: duplicate account_id in feature rows")
    index = {a: i for i, a in enumerate(fm.account_ids)}
    missing = [r.account_id for r in labels.records if r.account_id not in index]
    if missing:
        raise ValueError(f"unmatched account_id: no feature row for {missing[0]!r}" + (
            f" (+{len(missing) - 1} more)" if len(missing) > 1 else ""))
    extra = set(fm.account_ids) - set(labels.account_ids)
    if extra:
        raise ValueError(f"unmatched account_id: no label for {sorted(extra)[0]!r}")
    order = [index[r.account_id] for r in labels.records]
    aligned = FeatureMatrix(labels.account_ids, fm.vocabulary, fm.weights[order])
    records = [Record(r.account_id, r.label, r.source, aligned.weights[i]) for i, r in enumerate(labels.records)]
    return aligned, LabeledDataset.from_records(records)


MIN_CLASS_SIZE = 10


def balance_and_split(
    data: LabeledDataset, fractions: tuple[float, float, float] = (0.70, 0.15, 0.15), seed: int = 0
) -> SplitBundle:
    """Sample m accounts per class (m = minority size) and split them per class.

    Validation and test sizes are floor(fraction * m) per class; train takes
    the remainder.  Leftover majority-class accounts form the excess pool.
    Sampling within a class is uniform.
    """
    if len(fractions) != 3 or any(f < 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"fractions must be three non-negative numbers summing to 1, got {fractions}")
    by_class = {HUMAN: [], BOT: []}
    for r in data.records:
        by_class[r.label].append(r)
    if not by_class[HUMAN] or not by_class[BOT]:
        raise ValueError("balance_and_split needs both classes present")
    m = min(len(by_class[HUMAN]), len(by_class[BOT]))
    if m < MIN_CLASS_SIZE:
        raise ValueError(f"minority class has {m} accounts; need at least {MIN_CLASS_SIZE} to split")
    n_val = math.floor(fractions[1] * m)
    n_test = math.floor(fractions[2] * m)
    n_train = m - n_val - n_test

    rng = np.random.default_rng(seed)
    parts: dict[str, list[Record]] = {"train": [], "validation": [], "test": [], "excess": []}
    for label in (BOT, HUMAN):
        recs = by_class[label]
        perm = rng.permutation(len(recs))
        chosen = [recs[i] for i in perm]
        parts["train"] += chosen[:n_train]
        parts["validation"] += chosen[n_train : n_train + n_val]
        parts["test"] += chosen[n_train + n_val : m]
        parts["excess"] += chosen[m:]
    for name in ("train", "validation", "test"):
        perm = rng.permutation(len(parts[name]))
        parts[name] = [parts[name][i] for i in perm]
    return SplitBundle(
        train=LabeledDataset.from_records(parts["train"]),
        validation=LabeledDataset.from_records(parts["validation"]),
        test=LabeledDataset.from_records(parts["test"]),
        excess=LabeledDataset.from_records(parts["excess"]),
        seed=seed,
    )


def write_splits(bundle: SplitBundle, path) -> None:
    doc = {"seed": bundle.seed, **{k: v.account_ids for k, v in bundle.subsets().items()}}
    Path(path).write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")


def read_splits(path, data: LabeledDataset) -> SplitBundle:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    index = {r.account_id: r for r in data.records}

    def pick(ids):
        missing = [a for a in ids if a not in index]
        if missing:
            raise ValueError(f"split references unknown account_id {missing[0]!r}")
        return LabeledDataset.from_records([index[a] for a in ids])

    return SplitBundle(pick(doc["train"]), pick(doc["validation"]), pick(doc["test"]), pick(doc["excess"]), doc["seed"])
