"""Command-line entry point: ``botuq <subcommand> ...``.

Exit codes: 0 success, 2 input validation, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import bloc, ingest, metrics, synth, uq
from .checkpoint import load_checkpoint, save_checkpoint
from .data import FeatureMatrix, LabeledDataset
from .train import TrainConfig, train

log = logging.getLogger("botuq")

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 2, 3

# non-TrainConfig keys accepted in a config file
EXTRA_KEYS = {
    "n_weight_samples": int,
    "n_noise_samples": int,
    "inference_batch_size": int,
    "aleatoric_method": str,
    "k_sigma": float,
    "uncertainty": str,
    "max_words": int,
    "split_train": float,
    "split_validation": float,
    "split_test": float,
    "roc_n_sigma": float,
    "probability": str,
    "closure_probability": str,
}


class ConfigError(ValueError):
    pass


def _coerce(key: str, raw: str, kind):
    raw = raw.strip()
    try:
        if kind is bool:
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind is tuple:
            return tuple(int(v) for v in raw.replace(" ", "").split(",") if v)
        return kind(raw)
    except ValueError:
        raise ConfigError(f"config key {key!r}: cannot parse {raw!r}") from None


def _train_field_types() -> dict[str, type]:
    hints = {"int": int, "float": float, "str": str, "bool": bool}
    out = {}
    for f in dataclasses.fields(TrainConfig):
        t = f.type if isinstance(f.type, str) else f.type.__name__
        out[f.name] = tuple if t.startswith("tuple") else hints[t]
    return out


def load_config(path) -> dict:
    """Flat ``key = value`` text; ``#`` starts a comment.  Unknown keys are rejected."""
    types = {**_train_field_types(), **EXTRA_KEYS}
    out = {}
    for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{n}: expected key = value")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in types:
            raise ConfigError(f"{path}:{n}: unknown config key {key!r}")
        out[key] = _coerce(key, val, types[key])
    return out


@dataclasses.dataclass
class RunConfig:
    train: TrainConfig
    n_weight_samples: int = 10000
    n_noise_samples: int = 256
    inference_batch_size: int = 4096
    aleatoric_method: str = "sampling"
    k_sigma: float = 3.0
    uncertainty: str = "quadrature"
    max_words: int = bloc.DEFAULT_MAX_WORDS
    split_train: float = 0.70
    split_validation: float = 0.15
    split_test: float = 0.15
    roc_n_sigma: float = 5.0
    probability: str = "latent"
    # the joint run's noise-free sigmoid ignores what it learnt about s, so
    # the comparison uses the noise-averaged probability
    closure_probability: str = "predictive"

    @property
    def fractions(self) -> tuple[float, float, float]:
        return (self.split_train, self.split_validation, self.split_test)

    def sampling(self, seed: int, probability: str | None = None) -> uq.PosteriorSamplingConfig:
        return uq.PosteriorSamplingConfig(
            n_weight_samples=self.n_weight_samples,
            n_noise_samples=self.n_noise_samples,
            batch_size=self.inference_batch_size,
            seed=seed,
            aleatoric_method=self.aleatoric_method,
            probability=probability or self.probability,
        )


def resolve_config(args) -> RunConfig:
    """Config file first, then command-line flags on top."""
    values = load_config(args.config) if getattr(args, "config", None) else {}
    for flag, key in (("seed", "seed"), ("mode", "mode"), ("n_samples", "n_weight_samples"),
                      ("k_sigma", "k_sigma"), ("uncertainty", "uncertainty")):
        v = getattr(args, flag, None)
        if v is not None:
            values[key] = v
    train_keys = {f.name for f in dataclasses.fields(TrainConfig)}
    tc = TrainConfig(**{k: v for k, v in values.items() if k in train_keys})
    rc = RunConfig(tc, **{k: v for k, v in values.items() if k not in train_keys})
    if rc.uncertainty not in uq.UNCERTAINTY_KINDS:
        raise ConfigError(f"uncertainty must be one of {uq.UNCERTAINTY_KINDS}")
    for key in ("probability", "closure_probability"):
        if getattr(rc, key) not in ("latent", "predictive"):
            raise ConfigError(f"{key} must be latent or predictive")
    if rc.k_sigma < 0:
        raise ConfigError("k_sigma must be non-negative")
    return rc


# ---- shared loaders ----------------------------------------------------------

def _timelines(path) -> list:
    timelines, n_bad = ingest.parse_timelines(path)
    if n_bad:
        log.warning("%s: skipped %d malformed rows", path, n_bad)
    if not timelines:
        raise ValueError(f"{path}: no timelines found")
    return timelines


def _features(kind: str, data_path, vocab: bloc.Vocabulary | None = None,
              alphabet: bloc.BlocAlphabet = bloc.BlocAlphabet(), max_words: int = bloc.DEFAULT_MAX_WORDS):
    if kind == "external":
        return ingest.read_feature_csv(data_path), None
    return bloc.featurize(_timelines(data_path), alphabet, max_words, vocab=vocab)


def _align(fm: FeatureMatrix, data: LabeledDataset) -> None:
    have = set(fm.account_ids)
    missing = [a for a in data.account_ids if a not in have]
    if missing:
        raise ValueError(f"unmatched account_id: no feature row for {missing[0]!r}")


def _write_json(path, doc) -> None:
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def _outdir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


# ---- subcommands ---------------------------------------------------------------

def cmd_synth(args) -> None:
    spec = synth.SyntheticSpec(
        n_per_class=args.n_per_class, overlap=args.overlap, mode=args.kind, seed=args.seed or 0,
        n_features=args.n_features,
    )
    paths = synth.write_synthetic(spec, _outdir(args.out))
    for role, p in sorted(paths.items()):
        print(f"{role}\t{p}")


def cmd_featurize(args) -> None:
    out = _outdir(args.out)
    vocab, alphabet = None, bloc.BlocAlphabet()
    if args.vocabulary:
        vocab, alphabet = bloc.load_sidecar(args.vocabulary)
    fm, vocab = bloc.featurize(_timelines(args.data), alphabet, args.max_words, vocab=vocab)
    ingest.write_feature_csv(fm, out / "features.csv")
    bloc.save_sidecar(out / "vocabulary.json", vocab, alphabet)
    print(f"{len(fm.account_ids)} accounts x {fm.width} words -> {out / 'features.csv'}")


def _train_one(rc: RunConfig, splits, fm, out: Path, tag: str, sidecar: str | None):
    model, report = train(rc.train, splits, fm, progress=True)
    ckpt = out / f"{tag}.ckpt.json"
    save_checkpoint(ckpt, model, model.optimizer_state, rc.train.to_dict(), sidecar)
    report.checkpoint_path = ckpt.name
    log.info("%s: %d epochs (best %d) in %.1fs", tag, report.stopped_epoch, report.best_epoch, report.wall_time)
    # wall time is logged, not written, so reruns produce identical files
    doc = report.to_dict()
    doc.pop("wall_time")
    _write_json(out / f"{tag}.report.json", doc)
    return model


def _prepare(args, rc: RunConfig, out: Path):
    data = ingest.load_labels(args.labels)
    fm, vocab = _features(args.features, args.data, max_words=rc.max_words)
    _align(fm, data)
    sidecar = None
    if vocab is not None:
        sidecar = "vocabulary.json"
        bloc.save_sidecar(out / sidecar, vocab, bloc.BlocAlphabet())
    splits = ingest.balance_and_split(data, rc.fractions, seed=rc.train.seed)
    ingest.write_splits(splits, out / "splits.json")
    return data, fm, splits, sidecar


def cmd_train(args) -> None:
    rc = resolve_config(args)
    out = _outdir(args.out)
    _, fm, splits, sidecar = _prepare(args, rc, out)
    _train_one(rc, splits, fm, out, "model", sidecar)
    print(f"checkpoint\t{out / 'model.ckpt.json'}")


def _subset(args, data: LabeledDataset) -> LabeledDataset:
    if not args.splits:
        return data
    bundle = ingest.read_splits(args.splits, data)
    return bundle.subsets()[args.subset]


def cmd_predict(args) -> None:
    rc = resolve_config(args)
    model, meta = load_checkpoint(args.checkpoint)
    vocab = None
    alphabet = bloc.BlocAlphabet()
    if args.features == "bloc":
        if not meta.get("vocabulary_sidecar"):
            raise ValueError("checkpoint has no vocabulary sidecar; use --features external")
        vocab, alphabet = bloc.load_sidecar(Path(args.checkpoint).parent / meta["vocabulary_sidecar"])
    fm, _ = _features(args.features, args.data, vocab, alphabet)
    if fm.width != model.in_width:
        raise ValueError(f"feature width {fm.width} does not match the model input width {model.in_width}")
    if args.labels:
        ids = _subset(args, ingest.load_labels(args.labels)).account_ids
    else:
        ids = list(fm.account_ids)
    if not ids:
        raise ValueError("no accounts to predict")
    x = fm.rows_for(ids)
    preds, samples = uq.posterior_predict(model, x, rc.sampling(rc.train.seed), ids, return_samples=True)
    preds = uq.decide_all(preds, rc.uncertainty, rc.k_sigma)
    uq.write_predictions(preds, args.out)
    if args.samples:
        np.save(args.samples, samples.prob)
    counts = {d.value: sum(p.decision is d for p in preds) for d in uq.Decision}
    print(" ".join(f"{k}={v}" for k, v in counts.items()))


def cmd_evaluate(args) -> None:
    rc = resolve_config(args)
    out = _outdir(args.out)
    preds = uq.read_predictions(args.predictions)
    label_of = {r.account_id: r.label for r in ingest.load_labels(args.labels).records}
    missing = [p.account_id for p in preds if p.account_id not in label_of]
    if missing:
        raise ValueError(f"no label for account_id {missing[0]!r}")
    y = np.array([label_of[p.account_id] for p in preds], dtype=np.int64)
    kinds = (rc.uncertainty,) if args.uncertainty else uq.UNCERTAINTY_KINDS
    tables = list(metrics.abstention_report(preds, y, kinds, rc.k_sigma, args.subset_tag).values())
    extra = {}
    if np.unique(y).size == 2:
        if args.samples:
            S = np.load(args.samples)
            if S.shape[0] != len(preds):
                raise ValueError(f"samples have {S.shape[0]} rows, predictions {len(preds)}")
            roc = metrics.roc_band(S, y, rc.roc_n_sigma)
        else:
            roc = metrics.roc_auc(uq.as_arrays(preds)["p_mean"], y)
        roc.write_csv(out / "roc.csv")
        extra = {"auc": roc.auc, "auc_std": roc.auc_std}
    metrics.write_tables_csv(tables, out / "metrics.csv")
    metrics.write_tables_json(tables, out / "metrics.json", extra)
    for t in tables:
        acc = "N/A" if t.accuracy is None else f"{t.accuracy:.4f}"
        print(f"{t.kind}\taccuracy={acc}\tretained={t.n_retained}/{t.n_total}")


def cmd_closure(args) -> None:
    rc = resolve_config(args)
    if rc.train.mode != "bayesian":
        raise ConfigError("closure needs mode = bayesian")
    out = _outdir(args.out)
    _, fm, splits, sidecar = _prepare(args, rc, out)
    ids = splits.test.account_ids
    x = fm.rows_for(ids)
    runs = {}
    for tag, alea in (("epistemic", False), ("joint", True)):
        rc_run = dataclasses.replace(rc, train=dataclasses.replace(rc.train, aleatoric=alea))
        model = _train_one(rc_run, splits, fm, out, tag, sidecar)
        runs[tag] = uq.posterior_predict(model, x, rc.sampling(rc.train.seed, rc.closure_probability), ids)
        uq.write_predictions(runs[tag], out / f"{tag}.predictions.csv")
    res = uq.closure_zscore(runs["epistemic"], runs["joint"])
    with open(out / "z.csv", "w", encoding="utf-8") as fh:
        fh.write("account_id,z\n")
        for a, z in zip(res.account_ids, res.z):
            fh.write(f"{a},{z!r}\n")
    _write_json(out / "closure.json", res.histogram())
    print(f"fraction |Z| < 0.5: {res.fraction_within(0.5):.3f} over {res.z.size} accounts")


# ---- parser --------------------------------------------------------------------

def _common(p: argparse.ArgumentParser, inference: bool = False) -> None:
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--seed", type=int)
    p.add_argument("--mode", choices=("bayesian", "deterministic"))
    if inference:
        p.add_argument("--n-samples", type=int, help="posterior weight samples (default 10000)")
        p.add_argument("--uncertainty", choices=uq.UNCERTAINTY_KINDS)
        p.add_argument("--k-sigma", type=float, help="abstention width in sigmas (default 3)")


def _data_args(p: argparse.ArgumentParser, labels_required: bool = True) -> None:
    p.add_argument("--data", required=True, help="timelines (jsonl/csv) or feature CSV")
    p.add_argument("--features", choices=("bloc", "external"), default="bloc",
                   help="bloc: --data holds timelines; external: --data is a feature CSV")
    p.add_argument("--labels", required=labels_required, help="labels CSV (account_id,label,source)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="botuq", description="Bot/human classification with decomposed uncertainty")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic two-class dataset")
    p.add_argument("--n-per-class", type=int, default=1000)
    p.add_argument("--overlap", type=float, default=0.4, help="0 separable, 1 identical classes")
    p.add_argument("--kind", choices=("gaussian", "bloc"), default="gaussian")
    p.add_argument("--n-features", type=int, default=8)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("featurize", help="timelines -> TF-IDF feature CSV + vocabulary sidecar")
    p.add_argument("--data", required=True)
    p.add_argument("--vocabulary", help="reuse a saved vocabulary sidecar")
    p.add_argument("--max-words", type=int, default=bloc.DEFAULT_MAX_WORDS)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_featurize)

    p = sub.add_parser("train", help="balance, split and train; writes checkpoint, report and splits")
    _common(p)
    _data_args(p)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="posterior-sampled predictions CSV")
    _common(p, inference=True)
    _data_args(p, labels_required=False)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--splits", help="splits.json from train; restricts to --subset")
    p.add_argument("--subset", choices=("train", "validation", "test", "excess"), default="test")
    p.add_argument("--samples", help="also save per-draw probabilities (.npy)")
    p.add_argument("--out", required=True, help="predictions CSV")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="metrics tables and ROC from a predictions CSV")
    _common(p, inference=True)
    p.add_argument("--predictions", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--samples", help="per-draw probabilities (.npy) for ROC bands")
    p.add_argument("--subset-tag", default="test", help="e.g. test or excess_human")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("closure", help="epistemic-only vs joint training Z-score test")
    _common(p, inference=True)
    _data_args(p)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_closure)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        args.func(args)
    except FloatingPointError as e:
        print(f"botuq: numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, KeyError, OSError) as e:
        print(f"botuq: {e}", file=sys.stderr)
        return EXIT_INPUT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
