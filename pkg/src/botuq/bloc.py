"""BLOC strings, bigram words and TF-IDF matrices.

An account's timeline becomes an action string (one symbol per post, with a
pause symbol between posts further apart than a threshold) and a content
string (one parenthesised group of entity symbols per post).  Both strings
are cut into overlapping two-character words and weighted with
``f_i(a) * (1 + ln(D / d_i))``.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .data import AccountTimeline, Action, FeatureMatrix

DEFAULT_ACTION_MAP = {Action.TWEET: "T", Action.RETWEET: "r", Action.REPLY: "p"}
# dict order is the emission priority inside a content group
DEFAULT_CONTENT_MAP = {"media": "E", "mention": "m", "hashtag": "H", "url": "U", "text": "t"}
DEFAULT_MAX_WORDS = 512


@dataclass(frozen=True)
class BlocAlphabet:
    action_map: dict = field(default_factory=lambda: dict(DEFAULT_ACTION_MAP))
    content_map: dict = field(default_factory=lambda: dict(DEFAULT_CONTENT_MAP))
    pause_symbol: str = "."
    pause_threshold_seconds: float = 60.0

    def __post_init__(self):
        object.__setattr__(self, "action_map", {Action.parse(k): v for k, v in self.action_map.items()})
        symbols = [*self.action_map.values(), *self.content_map.values(), self.pause_symbol]
        if any(not isinstance(s, str) or len(s) != 1 for s in symbols):
            raise ValueError("alphabet symbols must be single characters")
        if len(set(symbols)) != len(symbols):
            raise ValueError(f"alphabet symbols must be distinct: {symbols}")
        if set(symbols) & {"(", ")"}:
            raise ValueError("parentheses are reserved for content groups")
        if not self.pause_threshold_seconds > 0:
            raise ValueError("pause_threshold_seconds must be > 0")

    def to_dict(self) -> dict:
        return {
            "action_map": {a.value: s for a, s in self.action_map.items()},
            "content_map": dict(self.content_map),
            "pause_symbol": self.pause_symbol,
            "pause_threshold_seconds": self.pause_threshold_seconds,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BlocAlphabet":
        return cls(**d)


@dataclass(frozen=True)
class BlocString:
    account_id: str
    action_string: str
    content_string: str


def encode_actions(timeline: AccountTimeline, alphabet: BlocAlphabet = BlocAlphabet()) -> str:
    out: list[str] = []
    prev = None
    for ev in timeline.events:
        try:
            sym = alphabet.action_map[ev.action]
        except KeyError:
            raise ValueError(f"action {ev.action!r} missing from alphabet") from None
        if prev is not None and ev.timestamp - prev > alphabet.pause_threshold_seconds:
            out.append(alphabet.pause_symbol)
        out.append(sym)
        prev = ev.timestamp
    return "".join(out)


def encode_content(timeline: AccountTimeline, alphabet: BlocAlphabet = BlocAlphabet()) -> str:
    rank = {kind: i for i, kind in enumerate(alphabet.content_map)}
    groups = []
    for ev in timeline.events:
        for kind in ev.entities:
            if kind not in rank:
                raise ValueError(f"unknown entity kind {kind!r}")
        kinds = sorted(ev.entities, key=rank.__getitem__)
        groups.append("(" + "".join(alphabet.content_map[k] for k in kinds) + ")")
    return "".join(groups)


def encode(timeline: AccountTimeline, alphabet: BlocAlphabet = BlocAlphabet()) -> BlocString:
    return BlocString(timeline.account_id, encode_actions(timeline, alphabet), encode_content(timeline, alphabet))


def tokenize_bigrams(s: str) -> list[str]:
    if len(s) < 2:
        return [s] if s else []
    return [s[i : i + 2] for i in range(len(s) - 1)]


def bloc_words(timeline: AccountTimeline, alphabet: BlocAlphabet = BlocAlphabet()) -> list[str]:
    """Action bigrams followed by content bigrams for one account."""
    b = encode(timeline, alphabet)
    return tokenize_bigrams(b.action_string) + tokenize_bigrams(b.content_string)


@dataclass
class Vocabulary:
    words: list[str]
    doc_freq: np.ndarray
    total_accounts: int


def build_vocabulary(corpus: Sequence[Iterable[str]], max_words: int = DEFAULT_MAX_WORDS) -> Vocabulary:
    """Keep the ``max_words`` words present in the most accounts (ties: lexicographic)."""
    if max_words < 1:
        raise ValueError("max_words must be >= 1")
    if len(corpus) == 0:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    df: Counter = Counter()
    for doc in corpus:
        df.update(set(doc))
    ranked = sorted(df.items(), key=lambda kv: (-kv[1], kv[0]))[:max_words]
    return Vocabulary([w for w, _ in ranked], np.array([c for _, c in ranked], dtype=np.int64), len(corpus))


def vectorize_tfidf(
    corpus: Sequence[Iterable[str]],
    vocabulary: Sequence[str],
    doc_freq: Sequence[int],
    total_accounts: int,
    account_ids: Sequence[str] | None = None,
) -> FeatureMatrix:
    doc_freq = np.asarray(doc_freq, dtype=np.int64)
    if np.any(doc_freq <= 0):
        bad = vocabulary[int(np.argmax(doc_freq <= 0))]
        raise ValueError(f"document frequency of {bad!r} is zero")
    idf = 1.0 + np.log(total_accounts / doc_freq)
    col = {w: i for i, w in enumerate(vocabulary)}
    weights = np.zeros((len(corpus), len(vocabulary)))
    for a, doc in enumerate(corpus):
        for w, f in Counter(doc).items():
            i = col.get(w)
            if i is not None:
                weights[a, i] = f * idf[i]
    ids = list(account_ids) if account_ids is not None else [str(i) for i in range(len(corpus))]
    return FeatureMatrix(ids, list(vocabulary), weights, doc_freq, total_accounts)


# ---- sidecar so inference reuses the training vocabulary -----------------------

SIDECAR_VERSION = 1


def sidecar_dict(vocab: Vocabulary, alphabet: BlocAlphabet) -> dict:
    return {
        "version": SIDECAR_VERSION,
        "vocabulary": list(vocab.words),
        "doc_freq": [int(d) for d in vocab.doc_freq],
        "total_accounts": int(vocab.total_accounts),
        "alphabet": alphabet.to_dict(),
    }


def save_sidecar(path, vocab: Vocabulary, alphabet: BlocAlphabet) -> None:
    Path(path).write_text(json.dumps(sidecar_dict(vocab, alphabet), indent=1) + "\n", encoding="utf-8")


def load_sidecar(path) -> tuple[Vocabulary, BlocAlphabet]:
    d = json.loads(Path(path).read_text(encoding="utf-8"))
    if d.get("version") != SIDECAR_VERSION:
        raise ValueError(f"{path}: unsupported sidecar version {d.get('version')!r}")
    vocab = Vocabulary(d["vocabulary"], np.asarray(d["doc_freq"], dtype=np.int64), d["total_accounts"])
    return vocab, BlocAlphabet.from_dict(d["alphabet"])


def featurize(
    timelines: Sequence[AccountTimeline],
    alphabet: BlocAlphabet = BlocAlphabet(),
    max_words: int = DEFAULT_MAX_WORDS,
    vocab: Vocabulary | None = None,
) -> tuple[FeatureMatrix, Vocabulary]:
    """Timelines -> TF-IDF matrix.  Pass ``vocab`` to reuse a frozen vocabulary."""
    if not timelines:
        raise ValueError("no timelines to featurize")
    corpus = [bloc_words(t, alphabet) for t in timelines]
    if vocab is None:
        vocab = build_vocabulary(corpus, max_words)
    fm = vectorize_tfidf(corpus, vocab.words, vocab.doc_freq, vocab.total_accounts, [t.account_id for t in timelines])
    return fm, vocab
