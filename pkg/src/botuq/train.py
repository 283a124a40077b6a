"""Mini-batch training with Adam, cosine annealing and patience-based early stopping."""

from __future__ import annotations

import dataclasses
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .bnn import BayesianModel, total_loss
from .data import FeatureMatrix, LabeledDataset, SplitBundle
from .engine import Adam, OptimizerState, backward, no_grad
from .rng import substream, subseed

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    batch_size: int = 1024
    max_epochs: int = 100
    initial_lr: float = 5e-4
    eta_min: float = 0.0
    kl_scale: float = 1e-4
    aleatoric_samples: int = 1000
    early_stop_patience: int = 5
    seed: int = 0
    mode: str = "bayesian"
    aleatoric: bool = True
    hidden: tuple[int, ...] = (64, 32, 16)
    flow_length: int = 2
    batch_norm: bool = True
    weight_sampling: str = "shared"
    init_log_var: float = -9.0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    # 0 -> one fixed weight draw for the validation loss
    val_posterior_samples: int = 0

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        for name in ("batch_size", "max_epochs", "aleatoric_samples", "early_stop_patience"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.early_stop_patience > self.max_epochs:
            raise ValueError("early_stop_patience must not exceed max_epochs")
        if self.mode not in ("bayesian", "deterministic"):
            raise ValueError(f"mode must be bayesian or deterministic, got {self.mode!r}")
        if not self.hidden or any(h < 1 for h in self.hidden):
            raise ValueError("hidden widths must be positive")
        if self.flow_length < 0:
            raise ValueError("flow_length must be >= 0")
        if self.initial_lr <= 0:
            raise ValueError("initial_lr must be positive")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["hidden"] = list(self.hidden)
        return d


@dataclass
class TrainReport:
    train_losses: list[float] = field(default_factory=list)
    val_losses: list[float] = field(default_factory=list)
    stopped_epoch: int = 0
    best_epoch: int = 0
    wall_time: float = 0.0
    checkpoint_path: str | None = None

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


class EarlyStopping:
    """Stop once ``patience`` consecutive epochs bring no new strict minimum."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = math.inf
        self.best_epoch = 0
        self.epoch = 0
        self.wait = 0

    def update(self, val_loss: float) -> bool:
        """Record one epoch; returns True if training should stop now."""
        self.epoch += 1
        if val_loss < self.best:
            self.best, self.best_epoch, self.wait = val_loss, self.epoch, 0
            return False
        self.wait += 1
        return self.wait >= self.patience

    @property
    def improved(self) -> bool:
        return self.best_epoch == self.epoch


def build_model(config: TrainConfig, in_width: int) -> BayesianModel:
    return BayesianModel(
        in_width,
        hidden=config.hidden,
        flow_length=config.flow_length,
        mode=config.mode,
        kl_scale=config.kl_scale,
        aleatoric=config.aleatoric,
        batch_norm=config.batch_norm,
        weight_sampling=config.weight_sampling,
        init_log_var=config.init_log_var,
        seed=subseed(config.seed, "init"),
    )


def _batches(n: int, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    perm = rng.permutation(n)
    out = [perm[i : i + batch_size] for i in range(0, n, batch_size)]
    # a singleton batch cannot be batch-normalised in train mode
    if len(out) > 1 and out[-1].size == 1:
        out[-2] = np.concatenate([out[-2], out[-1]])
        out.pop()
    return out


def evaluate_loss(
    model: BayesianModel, x, y, seed: int, n_samples: int = 1000, chunk: int = 4096, n_weight_samples: int = 0
) -> float:
    """Mean total loss with one fixed weight draw and a fixed latent-noise stream.

    ``n_weight_samples > 0`` averages the loss over that many weight draws instead.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y)
    if x.shape[0] == 0:
        raise ValueError("evaluate_loss on an empty dataset")
    draws = max(1, n_weight_samples)
    total = 0.0
    with no_grad():
        for d in range(draws):
            acc = 0.0
            for start in range(0, x.shape[0], chunk):
                rng = np.random.default_rng([seed, d])
                latent = np.random.default_rng([seed, d, 1])
                xb, yb = x[start : start + chunk], y[start : start + chunk]
                loss, _ = total_loss(model, xb, yb, rng, n_samples, train=False, latent_rng=latent)
                acc += loss.item() * xb.shape[0]
            total += acc / x.shape[0]
    return total / draws


def _xy(features: FeatureMatrix, data: LabeledDataset) -> tuple[np.ndarray, np.ndarray]:
    return features.rows_for(data.account_ids), data.labels


def train(
    config: TrainConfig, splits: SplitBundle, features: FeatureMatrix, progress: bool = False
) -> tuple[BayesianModel, TrainReport]:
    """Fit a model on ``splits.train`` and early-stop on ``splits.validation``.

    Returns the model restored to its best-validation epoch.
    """
    t0 = time.perf_counter()
    if len(splits.train) == 0 or len(splits.validation) == 0:
        raise ValueError("train and validation splits must be non-empty")
    x_tr, y_tr = _xy(features, splits.train)
    x_va, y_va = _xy(features, splits.validation)
    if len(set(y_tr.tolist())) < 2:
        raise ValueError("training split must contain both classes")

    model = build_model(config, features.width)
    params = model.parameters()
    n_steps = len(_batches(x_tr.shape[0], config.batch_size, np.random.default_rng(0)))
    state = OptimizerState(
        base_lr=config.initial_lr,
        t_max=config.max_epochs * n_steps,
        eta_min=config.eta_min,
        beta1=config.beta1,
        beta2=config.beta2,
        eps=config.adam_eps,
    )
    opt = Adam(params, state)
    weight_rng = substream(config.seed, "train-weights")
    latent_rng = substream(config.seed, "train-latent")
    val_seed = subseed(config.seed, "validation")
    stopper = EarlyStopping(config.early_stop_patience)
    report = TrainReport()
    best_state = model.state()

    for epoch in range(1, config.max_epochs + 1):
        batch_losses = []
        for idx in _batches(x_tr.shape[0], config.batch_size, substream(config.seed, "shuffle", epoch)):
            opt.zero_grad()
            loss, parts = total_loss(
                model, x_tr[idx], y_tr[idx], weight_rng, config.aleatoric_samples, train=True, latent_rng=latent_rng
            )
            if not math.isfinite(loss.item()):
                raise FloatingPointError(
                    f"non-finite loss at epoch {epoch} on a batch of {idx.size} accounts "
                    f"(first rows {idx[:5].tolist()}): data={parts['data']} kl={parts['kl']}"
                )
            backward(loss)
            opt.step()
            batch_losses.append(loss.item())
        report.train_losses.append(float(np.mean(batch_losses)))
        val = evaluate_loss(
            model, x_va, y_va, val_seed, config.aleatoric_samples, n_weight_samples=config.val_posterior_samples
        )
        if not math.isfinite(val):
            raise FloatingPointError(f"non-finite validation loss at epoch {epoch}")
        report.val_losses.append(val)
        stop = stopper.update(val)
        if stopper.improved:
            best_state = model.state()
        if progress:
            log.info("epoch %d train %.5f val %.5f", epoch, report.train_losses[-1], val)
        if stop:
            break

    model.load_state(best_state)
    report.stopped_epoch = stopper.epoch
    report.best_epoch = stopper.best_epoch
    report.wall_time = time.perf_counter() - t0
    model.optimizer_state = state
    return model, report
