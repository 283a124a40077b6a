"""Shared record types for accounts, labels, splits and feature matrices."""

from __future__ import annotations

import enum
from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


class Action(str, enum.Enum):
    TWEET = "tweet"
    RETWEET = "retweet"
    REPLY = "reply"

    @classmethod
    def parse(cls, raw: str) -> "Action":
        if isinstance(raw, cls):
            return raw
        try:
            return cls(str(raw).strip().lower())
        except ValueError:
            raise ValueError(f"unknown action kind {raw!r}; expected one of {[a.value for a in cls]}") from None


@dataclass(frozen=True)
class Event:
    timestamp: float
    action: Action
    entities: tuple[str, ...] = ()


@dataclass(frozen=True)
class AccountTimeline:
    account_id: str
    events: tuple[Event, ...]

    def __post_init__(self):
        ts = [e.timestamp for e in self.events]
        if any(b < a for a, b in zip(ts, ts[1:])):
            raise ValueError(f"{self.account_id}: timestamps must be non-decreasing")


HUMAN, BOT = 0, 1
LABEL_NAMES = {HUMAN: "human", BOT: "bot"}


def parse_label(raw) -> int:
    s = str(raw).strip().lower()
    if s in ("0", "human"):
        return HUMAN
    if s in ("1", "bot"):
        return BOT
    raise ValueError(f"label must be 0/1 or human/bot, got {raw!r}")


@dataclass(frozen=True)
class Record:
    account_id: str
    label: int
    source: str = ""
    features: np.ndarray | None = field(default=None, compare=False)


@dataclass(frozen=True)
class LabeledDataset:
    records: tuple[Record, ...]

    def __post_init__(self):
        ids = [r.account_id for r in self.records]
        if len(set(ids)) != len(ids):
            dup = next(i for i, c in Counter(ids).items() if c > 1)
            raise ValueError(f"duplicate account_id {dup!r}")
        for r in self.records:
            if r.label not in (HUMAN, BOT):
                raise ValueError(f"{r.account_id}: label must be 0 or 1")

    @classmethod
    def from_records(cls, records: Sequence[Record]) -> "LabeledDataset":
        return cls(tuple(records))

    def __len__(self) -> int:
        return len(self.records)

    @property
    def class_counts(self) -> dict[int, int]:
        c = Counter(r.label for r in self.records)
        return {HUMAN: c.get(HUMAN, 0), BOT: c.get(BOT, 0)}

    @property
    def account_ids(self) -> list[str]:
        return [r.account_id for r in self.records]

    @property
    def labels(self) -> np.ndarray:
        return np.array([r.label for r in self.records], dtype=np.int64)


@dataclass(frozen=True)
class SplitBundle:
    train: LabeledDataset
    validation: LabeledDataset
    test: LabeledDataset
    excess: LabeledDataset
    seed: int

    def subsets(self) -> dict[str, LabeledDataset]:
        return {"train": self.train, "validation": self.validation, "test": self.test, "excess": self.excess}


@dataclass
class FeatureMatrix:
    """Accounts x features.  ``doc_freq`` / ``total_accounts`` are set for TF-IDF matrices."""

    account_ids: list[str]
    vocabulary: list[str]
    weights: np.ndarray
    doc_freq: np.ndarray | None = None
    total_accounts: int | None = None

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.weights.shape != (len(self.account_ids), len(self.vocabulary)):
            raise ValueError(
                f"weights shape {self.weights.shape} != ({len(self.account_ids)}, {len(self.vocabulary)})"
            )

    @property
    def width(self) -> int:
        return len(self.vocabulary)

    def rows_for(self, account_ids: Sequence[str]) -> np.ndarray:
        index = {a: i for i, a in enumerate(self.account_ids)}
        missing = [a for a in account_ids if a not in index]
        if missing:
            raise KeyError(f"no feature row for account(s) {missing[:5]}")
        return self.weights[[index[a] for a in account_ids]]
