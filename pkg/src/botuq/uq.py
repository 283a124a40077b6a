"""Posterior-sampled inference, uncertainty-gated decisions and the closure Z-test.

For each of N weight draws the network gives a logit ``f_W`` and a spread
``sigma_W = exp(s_W)``.  The reported probability is the mean over draws of
``sigmoid(f_W)`` and its standard deviation over draws is the epistemic
uncertainty.  The aleatoric uncertainty is the mean over draws of the
probability-space spread of ``sigmoid(f_W + sigma_W * eps)``.
"""

from __future__ import annotations

import csv
import dataclasses
import enum
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import special

from .bnn import BayesianModel
from .engine import kernels, no_grad
from .rng import stratified_normal, substream


class Decision(str, enum.Enum):
    BOT = "Bot"
    HUMAN = "Human"
    ABSTAIN = "Abstain"


UNCERTAINTY_KINDS = ("none", "epistemic", "aleatoric", "quadrature")


@dataclass(frozen=True)
class AccountPrediction:
    account_id: str
    p_mean: float
    sigma_epistemic: float
    sigma_aleatoric: float
    n_weight_samples: int
    decision: Decision | None = None

    @property
    def sigma_total(self) -> float:
        return math.sqrt(self.sigma_epistemic**2 + self.sigma_aleatoric**2)

    def sigma(self, kind: str) -> float:
        if kind == "none":
            return 0.0
        if kind == "epistemic":
            return self.sigma_epistemic
        if kind == "aleatoric":
            return self.sigma_aleatoric
        if kind == "quadrature":
            return self.sigma_total
        raise ValueError(f"unknown uncertainty kind {kind!r}")


@dataclass
class PosteriorSamplingConfig:
    n_weight_samples: int = 10000
    n_noise_samples: int = 256
    batch_size: int = 4096
    seed: int = 0
    # "sampling": std over noise draws; "delta": p (1 - p) sigma
    aleatoric_method: str = "sampling"
    # per-draw probability: "latent" = sigmoid(f_W); "predictive" = E_eps[sigmoid(f_W + sigma_W eps)]
    probability: str = "latent"

    def __post_init__(self):
        for name in ("n_weight_samples", "n_noise_samples", "batch_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.aleatoric_method not in ("sampling", "delta"):
            raise ValueError("aleatoric_method must be 'sampling' or 'delta'")
        if self.probability not in ("latent", "predictive"):
            raise ValueError("probability must be 'latent' or 'predictive'")


@dataclass
class PosteriorSamples:
    """Raw per-draw quantities, accounts x weight draws."""

    prob: np.ndarray
    aleatoric_spread: np.ndarray
    # mean over latent noise of sigmoid(f_W + sigma_W eps); equals prob without an aleatoric head
    predictive: np.ndarray


def sample_posterior(model: BayesianModel, x, cfg: PosteriorSamplingConfig) -> PosteriorSamples:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.in_width:
        raise ValueError(f"expected input of shape (n, {model.in_width}), got {x.shape}")
    n, N = x.shape[0], cfg.n_weight_samples
    prob = np.empty((n, N))
    spread = np.zeros((n, N))
    predictive = np.empty((n, N))
    with no_grad():
        for start in range(0, n, cfg.batch_size):
            xb = x[start : start + cfg.batch_size]
            sl = slice(start, start + xb.shape[0])
            # re-seeded per chunk so every chunk sees the same weight draws
            w_rng = substream(cfg.seed, "weights")
            e_rng = substream(cfg.seed, "latent-noise")
            for j in range(N):
                f, s = model.forward(xb, w_rng, train=False)
                fv = f.values
                prob[sl, j] = special.expit(fv)
                predictive[sl, j] = prob[sl, j]
                if model.aleatoric:
                    sig = np.exp(s.values)
                    mean, std = kernels.noise_moments(fv, sig, stratified_normal(e_rng, cfg.n_noise_samples))
                    predictive[sl, j] = mean
                    if cfg.aleatoric_method == "delta":
                        p = prob[sl, j]
                        spread[sl, j] = p * (1.0 - p) * sig
                    else:
                        spread[sl, j] = std
    return PosteriorSamples(prob, spread, predictive)


def summarize(
    samples: PosteriorSamples, account_ids: Sequence[str], probability: str = "latent"
) -> list[AccountPrediction]:
    N = samples.prob.shape[1]
    if N < 2:
        raise ValueError("need at least 2 weight samples for a standard deviation")
    P = samples.predictive if probability == "predictive" else samples.prob
    p_mean = P.mean(axis=1)
    s_epi = P.std(axis=1, ddof=1)
    s_alea = samples.aleatoric_spread.mean(axis=1)
    return [
        AccountPrediction(str(a), float(p), float(e), float(al), N)
        for a, p, e, al in zip(account_ids, p_mean, s_epi, s_alea)
    ]


def posterior_predict(
    model: BayesianModel,
    x,
    cfg: PosteriorSamplingConfig = PosteriorSamplingConfig(),
    account_ids: Sequence[str] | None = None,
    return_samples: bool = False,
):
    """Per-account posterior summary; decisions are left unset."""
    if cfg.n_weight_samples < 2:
        raise ValueError("need at least 2 weight samples for a standard deviation")
    x = np.asarray(x, dtype=np.float64)
    ids = list(account_ids) if account_ids is not None else [str(i) for i in range(x.shape[0])]
    if len(ids) != x.shape[0]:
        raise ValueError("account_ids length does not match x")
    samples = sample_posterior(model, x, cfg)
    preds = summarize(samples, ids, cfg.probability)
    return (preds, samples) if return_samples else preds


# ---- decisions -------------------------------------------------------------

def decide_array(p: np.ndarray, sigma: np.ndarray, k: float = 3.0) -> np.ndarray:
    """Vectorised rule: 1 = Bot, 0 = Human, -1 = Abstain."""
    if k < 0:
        raise ValueError("k must be non-negative")
    p = np.asarray(p, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    keep = np.abs(p - 0.5) > k * sigma
    out = np.where(p > 0.5, 1, 0)
    return np.where(keep & (p != 0.5), out, -1)


_CODE = {1: Decision.BOT, 0: Decision.HUMAN, -1: Decision.ABSTAIN}


def decide(pred: AccountPrediction, kind: str = "quadrature", k: float = 3.0) -> AccountPrediction:
    """Bot/Human only when |p - 0.5| > k * sigma_kind; kind 'none' thresholds at 0.5."""
    code = int(decide_array(np.array([pred.p_mean]), np.array([pred.sigma(kind)]), k)[0])
    return dataclasses.replace(pred, decision=_CODE[code])


def decide_all(preds: Sequence[AccountPrediction], kind: str = "quadrature", k: float = 3.0) -> list[AccountPrediction]:
    arr = as_arrays(preds)
    codes = decide_array(arr["p_mean"], arr[_SIGMA_FIELD[kind]] if kind != "none" else np.zeros(len(preds)), k)
    return [dataclasses.replace(p, decision=_CODE[int(c)]) for p, c in zip(preds, codes)]


_SIGMA_FIELD = {"epistemic": "sigma_epistemic", "aleatoric": "sigma_aleatoric", "quadrature": "sigma_total"}


def as_arrays(preds: Sequence[AccountPrediction]) -> dict[str, np.ndarray]:
    p = np.array([x.p_mean for x in preds], dtype=np.float64)
    e = np.array([x.sigma_epistemic for x in preds], dtype=np.float64)
    a = np.array([x.sigma_aleatoric for x in preds], dtype=np.float64)
    return {"p_mean": p, "sigma_epistemic": e, "sigma_aleatoric": a, "sigma_total": np.sqrt(e**2 + a**2)}


def sigma_of(preds: Sequence[AccountPrediction], kind: str) -> np.ndarray:
    if kind == "none":
        return np.zeros(len(preds))
    if kind not in _SIGMA_FIELD:
        raise ValueError(f"unknown uncertainty kind {kind!r}")
    return as_arrays(preds)[_SIGMA_FIELD[kind]]


# ---- closure test ----------------------------------------------------------

@dataclass
class ClosureResult:
    account_ids: list[str]
    z: np.ndarray
    n_excluded: int

    def fraction_within(self, bound: float = 0.5) -> float:
        return float(np.mean(np.abs(self.z) < bound)) if self.z.size else float("nan")

    def histogram(self, bins: int = 20, limit: float = 5.0) -> dict:
        counts, edges = np.histogram(np.clip(self.z, -limit, limit), bins=bins, range=(-limit, limit))
        return {
            "n_accounts": int(self.z.size),
            "n_excluded": self.n_excluded,
            "fraction_abs_z_lt_0.5": self.fraction_within(0.5),
            "mean": float(self.z.mean()) if self.z.size else None,
            "std": float(self.z.std()) if self.z.size else None,
            "edges": edges.tolist(),
            "counts": counts.tolist(),
        }


SIGMA_EXCLUDE = 1e-9


def closure_zscore(run_a: Sequence[AccountPrediction], run_b: Sequence[AccountPrediction]) -> ClosureResult:
    """Z = (p_a - p_b) / sqrt(sigma_epi_a^2 + sigma_epi_b^2) per shared account."""
    a = {p.account_id: p for p in run_a}
    b = {p.account_id: p for p in run_b}
    if set(a) != set(b):
        diff = sorted(set(a) ^ set(b))
        raise ValueError(f"account sets differ, e.g. {diff[:3]}")
    ids, zs, excluded = [], [], 0
    for aid in (p.account_id for p in run_a):
        pa, pb = a[aid], b[aid]
        if pa.sigma_epistemic < SIGMA_EXCLUDE and pb.sigma_epistemic < SIGMA_EXCLUDE:
            excluded += 1
            continue
        ids.append(aid)
        zs.append((pa.p_mean - pb.p_mean) / math.hypot(pa.sigma_epistemic, pb.sigma_epistemic))
    return ClosureResult(ids, np.array(zs, dtype=np.float64), excluded)


# ---- uncertainty vs probability --------------------------------------------

@dataclass
class ProfileBin:
    lo: float
    hi: float
    count: int
    mean_p: float
    mean_sigma_epistemic: float
    mean_sigma_aleatoric: float
    mean_sigma_total: float

    @property
    def empty(self) -> bool:
        return self.count == 0


def bin_index(p: np.ndarray, n_bins: int) -> np.ndarray:
    return np.clip(np.floor(np.asarray(p) * n_bins).astype(np.int64), 0, n_bins - 1)


def uncertainty_profile(preds: Sequence[AccountPrediction], n_bins: int = 10) -> list[ProfileBin]:
    """Equal-width bins over p in [0, 1]; empty bins carry NaN means."""
    if n_bins < 2:
        raise ValueError("n_bins must be >= 2")
    if len(preds) == 0:
        raise ValueError("no predictions to profile")
    arr = as_arrays(preds)
    idx = bin_index(arr["p_mean"], n_bins)
    out = []
    for i in range(n_bins):
        sel = idx == i
        c = int(sel.sum())

        def m(key):
            return float(arr[key][sel].mean()) if c else float("nan")

        out.append(ProfileBin(i / n_bins, (i + 1) / n_bins, c, m("p_mean"), m("sigma_epistemic"),
                              m("sigma_aleatoric"), m("sigma_total")))
    return out


# ---- CSV I/O ---------------------------------------------------------------

PREDICTION_COLUMNS = ["account_id", "p_mean", "sigma_epistemic", "sigma_aleatoric", "sigma_total", "decision",
                      "n_weight_samples"]


def write_predictions(preds: Sequence[AccountPrediction], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PREDICTION_COLUMNS)
        for p in preds:
            w.writerow([p.account_id, repr(p.p_mean), repr(p.sigma_epistemic), repr(p.sigma_aleatoric),
                        repr(p.sigma_total), p.decision.value if p.decision else "", p.n_weight_samples])


def read_predictions(path) -> list[AccountPrediction]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = set(PREDICTION_COLUMNS) - set(reader.fieldnames or [])
        if missing:
            raise ValueError(f"{path}: missing prediction columns {sorted(missing)}")
        return [
            AccountPrediction(
                r["account_id"], float(r["p_mean"]), float(r["sigma_epistemic"]), float(r["sigma_aleatoric"]),
                int(r["n_weight_samples"]), Decision(r["decision"]) if r["decision"] else None,
            )
            for r in reader
        ]
