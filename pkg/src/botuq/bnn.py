"""Variational network with multiplicative normalizing flows and an aleatoric head.

Each hidden block is ``VariationalLinearLayer -> batch_norm -> SELU``.  The
final variational layer emits two columns per account: the latent logit
``f`` and ``s = log sigma`` of the Gaussian placed over that logit.

A layer's weights follow ``W | z ~ N(z * mu_W, sigma_W^2)`` where ``z`` (one
entry per input row) is drawn from a Gaussian pushed through planar flow
steps.  The KL regulariser is the single-sample auxiliary bound that uses an
inverse-flow density ``r(z | W)``.  ``flow_length = 0`` switches the
multiplicative variable off entirely, leaving a factorized Gaussian layer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .engine import tensor as T
from .engine.tensor import Tensor
from .rng import stratified_normal

LOG_2PI = math.log(2.0 * math.pi)
LOG_VAR_FLOOR = math.log(1e-12)
# shift so that the constrained dot product m(x) satisfies m(0) = 0
_SOFTPLUS_SHIFT = math.log(math.e - 1.0)
PROB_FLOOR = 1e-12


class PlanarStep:
    """z -> z + u_hat * tanh(w.z + b), with u_hat constrained so w.u_hat >= -1.

    With ``u = 0`` the step is the identity.
    """

    def __init__(self, dim: int, rng: np.random.Generator, name: str = "planar"):
        self.w = Tensor(rng.normal(0.0, 1.0 / math.sqrt(dim), size=dim), True, f"{name}.w")
        self.u = Tensor(np.zeros(dim), True, f"{name}.u")
        self.b = Tensor(np.zeros(1), True, f"{name}.b")

    def parameters(self) -> list[Tensor]:
        return [self.w, self.u, self.b]

    def u_hat(self) -> Tensor:
        wu = T.reduce_sum(self.w * self.u)
        m = T.softplus(wu + _SOFTPLUS_SHIFT) - 1.0
        return self.u + (m - wu) * self.w / T.reduce_sum(T.square(self.w))

    def __call__(self, z: Tensor) -> tuple[Tensor, Tensor]:
        uh = self.u_hat()
        h = T.tanh(T.reduce_sum(self.w * z) + self.b)
        out = z + uh * h
        dh = 1.0 - T.square(h)
        logdet = T.log(1.0 + dh * T.reduce_sum(uh * self.w))
        return out, T.reshape(logdet, ())


class NormalizingFlow:
    def __init__(self, dim: int, length: int, rng: np.random.Generator, name: str = "flow"):
        if length < 0:
            raise ValueError("flow length must be >= 0")
        self.dim = dim
        self.steps = [PlanarStep(dim, rng, f"{name}.{i}") for i in range(length)]
        self.last_logdet: Tensor | None = None

    def __len__(self) -> int:
        return len(self.steps)

    def parameters(self) -> list[Tensor]:
        return [p for s in self.steps for p in s.parameters()]

    def __call__(self, z: Tensor) -> tuple[Tensor, Tensor]:
        total = Tensor(0.0)
        for step in self.steps:
            z, ld = step(z)
            total = total + ld
        if not np.all(np.isfinite(z.values)):
            raise FloatingPointError("non-finite flow output")
        self.last_logdet = total
        return z, total


def gaussian_kl_to_standard(mean: Tensor, log_var: Tensor) -> Tensor:
    """Sum of KL(N(mean, exp(log_var)) || N(0, 1)) over all entries."""
    return 0.5 * T.reduce_sum(T.exp(log_var) + T.square(mean) - 1.0 - log_var)


@dataclass
class _LayerSample:
    W: Tensor
    b: Tensor
    mean_W: Tensor
    log_var_W: Tensor
    z: Tensor | None
    log_q_z: Tensor | None


class VariationalLinearLayer:
    def __init__(
        self,
        in_width: int,
        out_width: int,
        flow_length: int,
        rng: np.random.Generator,
        init_log_var: float = -9.0,
        name: str = "layer",
    ):
        self.in_width = in_width
        self.out_width = out_width
        self.name = name
        self.weight_mean = Tensor(
            rng.normal(0.0, 1.0 / math.sqrt(in_width), size=(in_width, out_width)), True, f"{name}.weight_mean"
        )
        self.weight_log_var = Tensor(np.full((in_width, out_width), init_log_var), True, f"{name}.weight_log_var")
        self.bias_mean = Tensor(np.zeros(out_width), True, f"{name}.bias_mean")
        self.bias_log_var = Tensor(np.full(out_width, init_log_var), True, f"{name}.bias_log_var")
        self.flow = NormalizingFlow(in_width, flow_length, rng, f"{name}.flow")
        if flow_length > 0:
            self.qz_mean = Tensor(np.ones(in_width), True, f"{name}.qz_mean")
            self.qz_log_var = Tensor(np.full(in_width, init_log_var), True, f"{name}.qz_log_var")
            # auxiliary r(z | W)
            self.r_c = Tensor(rng.normal(0.0, 1.0, size=(out_width, 1)), True, f"{name}.r_c")
            self.r_b1 = Tensor(np.zeros(in_width), True, f"{name}.r_b1")
            self.r_b2 = Tensor(np.zeros(in_width), True, f"{name}.r_b2")
            self.r_mean0 = Tensor(np.ones(in_width), True, f"{name}.r_mean0")
            self.r_log_var0 = Tensor(np.full(in_width, init_log_var), True, f"{name}.r_log_var0")
            self.aux_flow = NormalizingFlow(in_width, flow_length, rng, f"{name}.aux_flow")
        self._sample: _LayerSample | None = None

    @property
    def flow_length(self) -> int:
        return len(self.flow)

    def parameters(self) -> list[Tensor]:
        ps = [self.weight_mean, self.weight_log_var, self.bias_mean, self.bias_log_var]
        if self.flow_length:
            ps += [self.qz_mean, self.qz_log_var, *self.flow.parameters()]
            ps += [self.r_c, self.r_b1, self.r_b2, self.r_mean0, self.r_log_var0, *self.aux_flow.parameters()]
        return ps

    def _clamped_log_var(self, lv: Tensor) -> Tensor:
        return T.clip_min(lv, LOG_VAR_FLOOR)

    def sample_weights(self, rng: np.random.Generator) -> _LayerSample:
        """Draw one (W, b) from q and cache the z-path for the KL term."""
        if self.flow_length:
            eps_z = rng.standard_normal(self.in_width)
            z0 = T.gaussian_sample(self.qz_mean, T.exp(0.5 * self.qz_log_var), eps_z)
            log_q0 = -0.5 * T.reduce_sum(LOG_2PI + self.qz_log_var + eps_z**2)
            z, logdet = self.flow(z0)
            log_q_z = log_q0 - logdet
            mean_W = self.weight_mean * T.reshape(z, (self.in_width, 1))
        else:
            z, log_q_z = None, None
            mean_W = self.weight_mean
        lv = self._clamped_log_var(self.weight_log_var)
        W = T.gaussian_sample(mean_W, T.exp(0.5 * lv), rng.standard_normal((self.in_width, self.out_width)))
        lvb = self._clamped_log_var(self.bias_log_var)
        b = T.gaussian_sample(self.bias_mean, T.exp(0.5 * lvb), rng.standard_normal(self.out_width))
        self._sample = _LayerSample(W, b, mean_W, lv, z, log_q_z)
        return self._sample

    def __call__(self, x: Tensor, rng: np.random.Generator | None, deterministic: bool, local: bool = False) -> Tensor:
        if x.shape[-1] != self.in_width:
            raise ValueError(f"{self.name}: input width {x.shape[-1]} != {self.in_width}")
        if deterministic:
            self._sample = None
            return x @ self.weight_mean + self.bias_mean
        if rng is None:
            raise ValueError("bayesian forward needs an rng")
        s = self.sample_weights(rng)
        if not local:
            return x @ s.W + s.b
        # local reparameterisation: independent weights per batch row; the
        # cached W above still serves the KL bound
        mu = x @ s.mean_W + self.bias_mean
        var = T.square(x) @ T.exp(s.log_var_W) + T.exp(self._clamped_log_var(self.bias_log_var))
        return T.gaussian_sample(mu, T.exp(0.5 * T.log(var)), rng.standard_normal(mu.shape))

    def kl(self) -> Tensor:
        """Single-sample estimate of KL(q(W) || N(0, I)) for the cached draw."""
        s = self._sample
        if s is None:
            raise RuntimeError(f"{self.name}: kl() needs a bayesian forward pass first")
        kl = gaussian_kl_to_standard(s.mean_W, s.log_var_W)
        kl = kl + gaussian_kl_to_standard(self.bias_mean, self._clamped_log_var(self.bias_log_var))
        if self.flow_length:
            kl = kl + s.log_q_z - self.log_r(s.z, s.W)
        return kl

    def log_r(self, z: Tensor, W: Tensor) -> Tensor:
        """log r(z | W): Gaussian base whose moments depend on tanh(W c), reached via inverse flow."""
        a = T.reshape(T.tanh(W @ self.r_c * (1.0 / self.out_width)), (self.in_width,))
        mu_r = self.r_mean0 + self.r_b1 * a
        lv_r = self.r_log_var0 + self.r_b2 * a
        zb, logdet = self.aux_flow(z)
        log_base = -0.5 * T.reduce_sum(LOG_2PI + lv_r + T.square(zb - mu_r) / T.exp(lv_r))
        return log_base + logdet


class BatchNorm:
    def __init__(self, width: int, name: str = "bn", momentum: float = 0.1, eps: float = 1e-5):
        self.gamma = Tensor(np.ones(width), True, f"{name}.gamma")
        self.beta = Tensor(np.zeros(width), True, f"{name}.beta")
        self.running_mean = np.zeros(width)
        self.running_var = np.ones(width)
        self.momentum = momentum
        self.eps = eps

    def parameters(self) -> list[Tensor]:
        return [self.gamma, self.beta]

    def __call__(self, x: Tensor, train: bool, update_stats: bool = True) -> Tensor:
        return T.batch_norm(
            x, self.gamma, self.beta, self.running_mean, self.running_var,
            train=train, momentum=self.momentum, eps=self.eps, update_stats=update_stats,
        )


MODES = ("bayesian", "deterministic")


class BayesianModel:
    """Stack of variational blocks ending in a two-column (f, s) head.

    ``mode='deterministic'`` runs the same architecture on weight means with
    no KL and no latent sampling (the DNN baseline).  ``aleatoric=False``
    keeps the bayesian weights but trains on sigmoid(f) alone, ignoring s.
    """

    def __init__(
        self,
        in_width: int,
        hidden: tuple[int, ...] = (64, 32, 16),
        flow_length: int = 2,
        mode: str = "bayesian",
        kl_scale: float = 1e-4,
        aleatoric: bool = True,
        batch_norm: bool = True,
        weight_sampling: str = "shared",
        init_log_var: float = -9.0,
        seed: int = 0,
    ):
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
        if weight_sampling not in ("shared", "local"):
            raise ValueError("weight_sampling must be 'shared' or 'local'")
        self.in_width = in_width
        self.hidden = tuple(hidden)
        self.flow_length = flow_length
        self.mode = mode
        self.kl_scale = kl_scale
        self.aleatoric = aleatoric and mode == "bayesian"
        self.use_batch_norm = batch_norm
        self.weight_sampling = weight_sampling
        self.init_log_var = init_log_var
        self.seed = seed
        rng = np.random.default_rng(seed)
        widths = (in_width, *self.hidden)
        self.layers = [
            VariationalLinearLayer(widths[i], widths[i + 1], flow_length, rng, init_log_var, f"layer{i}")
            for i in range(len(self.hidden))
        ]
        self.norms = [BatchNorm(w, f"bn{i}") for i, w in enumerate(self.hidden)] if batch_norm else []
        self.head = VariationalLinearLayer(widths[-1], 2, flow_length, rng, init_log_var, "head")
        self.optimizer_state = None

    @property
    def deterministic(self) -> bool:
        return self.mode == "deterministic"

    def all_layers(self) -> list[VariationalLinearLayer]:
        return [*self.layers, self.head]

    def parameters(self) -> list[Tensor]:
        ps = [p for layer in self.all_layers() for p in layer.parameters()]
        ps += [p for bn in self.norms for p in bn.parameters()]
        return ps

    def named_parameters(self) -> dict[str, Tensor]:
        return {p.name: p for p in self.parameters()}

    def forward(
        self, x, rng: np.random.Generator | None = None, train: bool = False, update_stats: bool = True
    ) -> tuple[Tensor, Tensor]:
        """One weight draw for the whole batch; returns (f, s), each shape (batch,)."""
        h = T.as_tensor(x)
        if h.ndim != 2 or h.shape[1] != self.in_width:
            raise ValueError(f"expected input of shape (batch, {self.in_width}), got {h.shape}")
        det = self.deterministic
        local = self.weight_sampling == "local" and train
        for i, layer in enumerate(self.layers):
            h = layer(h, rng, det, local)
            if self.norms:
                h = self.norms[i](h, train, update_stats)
            h = T.selu(h)
        out = self.head(h, rng, det, local)
        return out[:, 0], out[:, 1]

    def kl(self) -> Tensor:
        if self.deterministic:
            return Tensor(0.0)
        total = Tensor(0.0)
        for layer in self.all_layers():
            total = total + layer.kl()
        return total

    # persistence ------------------------------------------------------------
    def config(self) -> dict:
        return {
            "in_width": self.in_width,
            "hidden": list(self.hidden),
            "flow_length": self.flow_length,
            "mode": self.mode,
            "kl_scale": self.kl_scale,
            "aleatoric": self.aleatoric,
            "batch_norm": self.use_batch_norm,
            "weight_sampling": self.weight_sampling,
            "init_log_var": self.init_log_var,
            "seed": self.seed,
        }

    def state(self) -> dict[str, np.ndarray]:
        st = {name: p.values.copy() for name, p in self.named_parameters().items()}
        for i, bn in enumerate(self.norms):
            st[f"bn{i}.running_mean"] = bn.running_mean.copy()
            st[f"bn{i}.running_var"] = bn.running_var.copy()
        return st

    def load_state(self, st: dict[str, np.ndarray]) -> None:
        named = self.named_parameters()
        expected = set(named) | {f"bn{i}.{k}" for i in range(len(self.norms)) for k in ("running_mean", "running_var")}
        if set(st) != expected:
            missing, extra = expected - set(st), set(st) - expected
            raise ValueError(f"state mismatch; missing={sorted(missing)} unexpected={sorted(extra)}")
        for name, p in named.items():
            arr = np.asarray(st[name], dtype=np.float64)
            if arr.shape != p.shape:
                raise ValueError(f"{name}: shape {arr.shape} != {p.shape}")
            p.values = arr.copy()
        for i, bn in enumerate(self.norms):
            bn.running_mean[...] = st[f"bn{i}.running_mean"]
            bn.running_var[...] = st[f"bn{i}.running_var"]

    @classmethod
    def from_config(cls, cfg: dict) -> "BayesianModel":
        cfg = dict(cfg)
        cfg["hidden"] = tuple(cfg["hidden"])
        return cls(**cfg)


# ---- losses -----------------------------------------------------------------

def sample_latent(f, s, rng: np.random.Generator, n: int, eps: np.ndarray | None = None) -> Tensor:
    """n reparameterised draws f + exp(s) * eps per account; shape (batch, n).

    eps is stratified per account unless given, which keeps the Monte-Carlo
    loss unbiased for the mean probability at a fraction of the variance.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    f, s = T.as_tensor(f), T.as_tensor(s)
    f2 = T.reshape(f, (-1, 1))
    sig = T.reshape(T.exp(s), (-1, 1))
    if eps is None:
        eps = stratified_normal(rng, n, rows=f2.shape[0])
    return T.gaussian_sample(f2, sig, eps)


def aleatoric_nll(f, s, y, n_samples: int, rng: np.random.Generator, eps: np.ndarray | None = None) -> Tensor:
    """Batch mean of -log (1/n) sum_k p_c(f + sigma eps_k), computed in log space."""
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    fhat = sample_latent(f, s, rng, n_samples, eps)
    sign = (2.0 * y - 1.0)[:, None]
    ll = T.log_sigmoid(fhat * sign)
    log_pc = T.logsumexp(ll, axis=1) - math.log(n_samples)
    log_pc = T.clip_min(log_pc, math.log(PROB_FLOOR))
    return -T.reduce_mean(log_pc)


def bce(p, y) -> Tensor:
    """Binary cross-entropy on probabilities (clamped to [1e-12, 1 - 1e-12])."""
    p = T.as_tensor(p)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if y.size == 0:
        raise ValueError("bce on an empty batch")
    pv = np.clip(p.values, PROB_FLOOR, 1.0 - PROB_FLOOR)
    pc = T.Tensor(pv) if not p.requires_grad else p + T.Tensor(pv - p.values)
    terms = y * T.log(pc) + (1.0 - y) * T.log(1.0 - pc)
    return -T.reduce_mean(terms)


def bce_logits(f, y) -> Tensor:
    """Same value as bce(sigmoid(f), y), evaluated stably from logits."""
    f = T.as_tensor(f)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if y.size == 0:
        raise ValueError("bce on an empty batch")
    return -T.reduce_mean(T.log_sigmoid(f * (2.0 * y - 1.0)))


def total_loss(
    model: BayesianModel,
    x,
    y,
    rng: np.random.Generator | None,
    n_samples: int = 1000,
    train: bool = True,
    update_stats: bool = True,
    latent_rng: np.random.Generator | None = None,
) -> tuple[Tensor, dict[str, float]]:
    """Data term + kl_scale * KL; the data term depends on the model mode.

    Weight noise comes from ``rng``; latent noise from ``latent_rng`` when
    given (so runs with and without the aleatoric term share weight draws),
    otherwise from ``rng`` as well.
    """
    f, s = model.forward(x, rng, train=train, update_stats=update_stats)
    if model.deterministic:
        data = bce_logits(f, y)
        return data, {"data": data.item(), "kl": 0.0}
    if model.aleatoric:
        data = aleatoric_nll(f, s, y, n_samples, latent_rng if latent_rng is not None else rng)
    else:
        data = bce_logits(f, y)
    kl = model.kl()
    loss = data + model.kl_scale * kl
    return loss, {"data": data.item(), "kl": kl.item()}
