"""Conditional DDPM grasp sampler.

The denoiser embeds p, r, q and the diffusion step as four grasp tokens, mixes
them with self-attention, then lets them attend to object tokens projected from
the BPS feature. Training regresses the injected Gaussian noise.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import nn
from .bps import BasisSet
from .core import Grasp, GraspDiffError, NormalizationStats, ShapeMismatch, array_to_grasps, denormalize_grasp, normalize_grasp

log = logging.getLogger(__name__)


class BadScheduleParams(GraspDiffError):
    pass


class DimensionMismatch(ShapeMismatch):
    pass


class UntrainedModel(GraspDiffError):
    pass


class EmptyDataset(GraspDiffError):
    pass


class NonFiniteLoss(GraspDiffError):
    pass


@dataclass(frozen=True)
class NoiseSchedule:
    T: int
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray

    def abar(self, t):
        """Cumulative product at step ``t`` with the convention abar(0) = 1."""
        t = np.asarray(t)
        return np.where(t > 0, self.alpha_bar[np.maximum(t, 1) - 1], 1.0)

    def posterior_variance(self, t: int) -> float:
        if t <= 1:
            return 0.0
        b = self.beta[t - 1]
        return float(b * (1.0 - self.alpha_bar[t - 2]) / (1.0 - self.alpha_bar[t - 1]))


def make_schedule(T: int = 100, beta_start: float = 1e-4, beta_end: float = 1e-2) -> NoiseSchedule:
    if T < 1 or not (0 < beta_start <= beta_end < 1):
        raise BadScheduleParams(f"need T >= 1 and 0 < beta_start <= beta_end < 1, got {T}, {beta_start}, {beta_end}")
    if T == 1:
        beta = np.array([beta_start], dtype=np.float64)
    else:
        beta = beta_start + np.arange(T) / (T - 1) * (beta_end - beta_start)
        beta[-1] = beta_end
    alpha = 1.0 - beta
    return NoiseSchedule(T, beta, alpha, np.cumprod(alpha))


def q_sample(g0, t, eps, sched: NoiseSchedule) -> np.ndarray:
    """Closed-form forward diffusion ``sqrt(abar_t) g0 + sqrt(1 - abar_t) eps``.

    ``t`` may be a scalar or one step per row of ``g0``.
    """
    g0 = np.asarray(g0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if g0.shape != eps.shape:
        raise DimensionMismatch(f"g0 {g0.shape} vs eps {eps.shape}")
    t = np.asarray(t)
    if np.any(t < 1) or np.any(t > sched.T):
        raise ValueError(f"t must lie in 1..{sched.T}")
    ab = sched.alpha_bar[t - 1]
    if g0.ndim > 1 and ab.ndim == 1:
        ab = ab[:, None]
    return np.sqrt(ab) * g0 + np.sqrt(1.0 - ab) * eps


# ------------------------------------------------------------------ the model


@dataclass
class DenoiserConfig:
    k: int = 16
    n_basis: int = 1024
    width: int = 128
    heads: int = 4
    obj_tokens: int = 32
    self_layers: int = 2
    cross_layers: int = 2
    head_hidden: int = 256
    T: int = 100
    beta_start: float = 1e-4
    beta_end: float = 1e-2

    @property
    def dim(self) -> int:
        return 9 + self.k


@dataclass
class DenoiserModel:
    store: nn.ParamStore
    config: DenoiserConfig
    basis: BasisSet
    stats: NormalizationStats
    trained: bool = False
    schedule: NoiseSchedule = field(init=False)

    def __post_init__(self):
        self.schedule = make_schedule(self.config.T, self.config.beta_start, self.config.beta_end)
        if self.stats.k != self.config.k:
            raise ShapeMismatch("normalization stats and config disagree on k")
        if self.basis.size != self.config.n_basis:
            raise ShapeMismatch("basis size and config disagree")


def init_denoiser(config: DenoiserConfig, basis: BasisSet, stats: NormalizationStats, seed: int = 0, dtype=np.float32) -> DenoiserModel:
    rng = np.random.default_rng(seed)
    d = config.width
    P: dict[str, np.ndarray] = {}
    nn.init_dense(P, "embed.p", 3, d, rng, dtype=dtype)
    nn.init_dense(P, "embed.r", 6, d, rng, dtype=dtype)
    nn.init_dense(P, "embed.q", config.k, d, rng, dtype=dtype)
    nn.init_dense(P, "embed.t", d, d, rng, dtype=dtype)
    nn.init_dense(P, "obj.proj", config.n_basis, config.obj_tokens * d, rng, dtype=dtype)
    nn.init_layer_norm(P, "obj.ln", d, dtype=dtype)
    for i in range(config.self_layers):
        _init_block(P, f"self{i}", d, rng, dtype)
    for i in range(config.cross_layers):
        _init_block(P, f"cross{i}", d, rng, dtype)
    nn.init_dense(P, "head.0", 4 * d, config.head_hidden, rng, dtype=dtype)
    nn.init_dense(P, "head.1", config.head_hidden, config.dim, rng, scale_=0.1, dtype=dtype)
    return DenoiserModel(nn.ParamStore(P), config, basis, stats)


def _init_block(P, name, d, rng, dtype):
    nn.init_layer_norm(P, name + ".ln1", d, dtype=dtype)
    nn.init_attention(P, name + ".attn", d, rng, dtype=dtype)
    nn.init_layer_norm(P, name + ".ln2", d, dtype=dtype)
    nn.init_dense(P, name + ".mlp0", d, 2 * d, rng, dtype=dtype)
    nn.init_dense(P, name + ".mlp1", 2 * d, d, rng, dtype=dtype)


def time_embedding(t, width: int) -> np.ndarray:
    """Sinusoidal embedding of integer steps, shape (len(t), width)."""
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    half = width // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / half)
    ang = t[:, None] * freqs[None, :]
    emb = np.concatenate([np.sin(ang), np.cos(ang)], axis=1)
    if width % 2:
        emb = np.concatenate([emb, np.zeros((len(t), 1))], axis=1)
    return emb


def _block(x, kv, P, name, heads, cross: bool):
    h = nn.layer_norm(x, P[name + ".ln1.g"], P[name + ".ln1.b"])
    src = kv if cross else h
    x = x + nn.multi_head_attention(h, src, P, name + ".attn", heads)
    h = nn.layer_norm(x, P[name + ".ln2.g"], P[name + ".ln2.b"])
    h = nn.dense(nn.gelu(nn.dense(h, P[name + ".mlp0.w"], P[name + ".mlp0.b"])), P[name + ".mlp1.w"], P[name + ".mlp1.b"])
    return x + h


def denoiser_forward(P: dict, cfg: DenoiserConfig, g_t: nn.Tensor, t, feat: nn.Tensor, obj_onehot=None) -> nn.Tensor:
    """Noise prediction for a batch.

    ``feat`` holds one BPS row per example, or one row per distinct cloud with
    ``obj_onehot`` (B, U) selecting the row for each example.
    """
    B = g_t.shape[0]
    d = cfg.width
    if g_t.shape[1] != cfg.dim:
        raise ShapeMismatch(f"grasp width {g_t.shape[1]} != {cfg.dim}")
    if feat.shape[-1] != cfg.n_basis:
        raise ShapeMismatch(f"feature width {feat.shape[-1]} != {cfg.n_basis}")
    dtype = P["embed.p.w"].data.dtype
    tp = nn.dense(g_t[:, 0:3], P["embed.p.w"], P["embed.p.b"])
    tr = nn.dense(g_t[:, 3:9], P["embed.r.w"], P["embed.r.b"])
    tq = nn.dense(g_t[:, 9:], P["embed.q.w"], P["embed.q.b"])
    temb = nn.Tensor(time_embedding(np.broadcast_to(t, (B,)), d).astype(dtype))
    tt = nn.gelu(nn.dense(temb, P["embed.t.w"], P["embed.t.b"]))
    x = nn.stack([tp, tr, tq, tt], axis=1)

    obj = nn.dense(feat, P["obj.proj.w"], P["obj.proj.b"])
    if obj_onehot is not None:
        obj = nn.matmul(nn.Tensor(obj_onehot.astype(dtype)), obj)
    elif obj.shape[0] != B:
        raise ShapeMismatch("one feature row per example is required without obj_onehot")
    obj = nn.reshape(obj, (B, cfg.obj_tokens, d))
    kv = nn.layer_norm(obj, P["obj.ln.g"], P["obj.ln.b"])

    for i in range(cfg.self_layers):
        x = _block(x, None, P, f"self{i}", cfg.heads, cross=False)
    for i in range(cfg.cross_layers):
        x = _block(x, kv, P, f"cross{i}", cfg.heads, cross=True)
    h = nn.gelu(nn.dense(nn.reshape(x, (B, 4 * d)), P["head.0.w"], P["head.0.b"]))
    return nn.dense(h, P["head.1.w"], P["head.1.b"])


def _batch_features(f_O, B: int) -> np.ndarray:
    f = np.asarray(f_O, dtype=np.float64)
    if f.ndim == 1:
        f = np.broadcast_to(f, (B, f.shape[0]))
    return f


def predict_noise(model: DenoiserModel, g_t, t, f_O) -> np.ndarray:
    """Predicted noise for one model-space vector (D,) or a batch (B, D)."""
    g = np.asarray(g_t, dtype=np.float64)
    single = g.ndim == 1
    G = np.atleast_2d(g)
    if G.shape[1] != model.config.dim:
        raise ShapeMismatch(f"grasp width {G.shape[1]} != {model.config.dim}")
    dtype = model.store.params["embed.p.w"].dtype
    tape = nn.Tape()
    P = model.store.leaves(tape, requires_grad=False)
    f = np.asarray(f_O, dtype=np.float64)
    if f.ndim == 1:
        feat, onehot = nn.Tensor(f[None, :].astype(dtype)), np.ones((G.shape[0], 1))
    else:
        feat, onehot = nn.Tensor(f.astype(dtype)), None
    out = denoiser_forward(P, model.config, nn.Tensor(G.astype(dtype)), t, feat, onehot)
    eps = out.data.astype(np.float64)
    return eps[0] if single else eps


def reverse_step(model: DenoiserModel, g_t, t: int, f_O, rng: np.random.Generator, eps_hat=None, guide=None) -> np.ndarray:
    """One ancestral step g_t -> g_{t-1}.

    ``eps_hat`` overrides the network prediction; ``guide`` is added to the
    posterior mean (used by evaluator guidance). No noise is added at t = 1.
    """
    sched = model.schedule
    g_t = np.asarray(g_t, dtype=np.float64)
    if not 1 <= t <= sched.T:
        raise ValueError(f"t must lie in 1..{sched.T}")
    if eps_hat is None:
        eps_hat = predict_noise(model, g_t, t, f_O)
    return _posterior_step(sched, g_t, t, eps_hat, rng, guide)


def _posterior_step(sched: NoiseSchedule, g_t, t, eps_hat, rng, guide=None, sigma_scale: float = 1.0):
    beta, alpha, abar = sched.beta[t - 1], sched.alpha[t - 1], sched.alpha_bar[t - 1]
    mean = (g_t - beta / math.sqrt(1.0 - abar) * eps_hat) / math.sqrt(alpha)
    if guide is not None:
        mean = mean + guide
    if t == 1:
        return mean
    z = rng.standard_normal(g_t.shape)
    return mean + sigma_scale * math.sqrt(sched.posterior_variance(t)) * z


def sample_model_space(model: DenoiserModel, f_O, n: int, rng: np.random.Generator, guide_fn=None, allow_untrained: bool = False) -> np.ndarray:
    """Run the full reverse chain for ``n`` chains; returns model-space vectors (n, D).

    ``guide_fn(g_t, t)`` may return an additive shift for each step's mean.
    """
    if not model.trained and not allow_untrained:
        raise UntrainedModel("sampling from an untrained model; pass allow_untrained=True")
    D = model.config.dim
    if n == 0:
        return np.zeros((0, D))
    g = rng.standard_normal((n, D))
    for t in range(model.schedule.T, 0, -1):
        eps_hat = predict_noise(model, g, t, f_O)
        guide = guide_fn(g, t) if guide_fn is not None else None
        g = _posterior_step(model.schedule, g, t, eps_hat, rng, guide)
    return g


def sample(model: DenoiserModel, f_O, n: int, rng: np.random.Generator, allow_untrained: bool = False) -> list[Grasp]:
    X = sample_model_space(model, f_O, n, rng, allow_untrained=allow_untrained)
    return array_to_grasps(denormalize_grasp(X, model.stats)) if n else []


# ------------------------------------------------------------------- training


@dataclass
class SamplerHyper:
    """Training hyperparameters. Defaults follow the reference recipe except the batch size."""

    lr: float = 1e-4
    gamma: float = 0.9
    batch_size: int = 256
    epochs: int = 200
    seed: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


REFERENCE_SAMPLER_HYPER = SamplerHyper(lr=1e-4, gamma=0.9, batch_size=16384, epochs=200)


def denoiser_loss_and_grads(model: DenoiserModel, X, t, eps, feats, onehot=None):
    """Mean squared noise-regression loss and parameter gradients for one batch."""
    dtype = model.store.params["embed.p.w"].dtype
    g_t = q_sample(X, t, eps, model.schedule)
    tape = nn.Tape()
    P = model.store.leaves(tape)
    pred = denoiser_forward(P, model.config, nn.Tensor(g_t.astype(dtype)), t, nn.Tensor(feats.astype(dtype)), onehot)
    diff = nn.sub(pred, nn.Tensor(eps.astype(dtype)))
    loss = nn.mean(nn.square(diff))
    tape.backward(loss)
    return float(loss.data), nn.collect_grads(P)


def train_sampler(features, grasps, feature_index, basis: BasisSet, stats: NormalizationStats, config: DenoiserConfig | None = None, hyper: SamplerHyper | None = None, labels=None, model: DenoiserModel | None = None):
    """Fit the denoiser on successful grasps.

    ``features`` is (V, B) with one BPS row per cloud; ``grasps`` (n, 9+k)
    physical grasps and ``feature_index`` (n,) the cloud row of each grasp.
    Returns the model and a dict with the per-epoch loss history.
    """
    grasps = np.asarray(grasps, dtype=np.float64)
    feature_index = np.asarray(feature_index)
    if grasps.shape[0] == 0:
        raise EmptyDataset("no grasps to train on")
    if labels is not None and not np.all(np.asarray(labels)):
        raise ValueError("the sampler trains on successful grasps only")
    config = config or DenoiserConfig(k=stats.k, n_basis=basis.size)
    hyper = hyper or SamplerHyper()
    if model is None:
        model = init_denoiser(config, basis, stats, seed=hyper.seed)
    X, _ = normalize_grasp(grasps, stats)
    features = np.asarray(features, dtype=np.float64)
    rng = np.random.default_rng(hyper.seed + 1)
    n = X.shape[0]
    history = {"loss": [], "lr": []}
    t0 = time.perf_counter()
    for epoch in range(hyper.epochs):
        lr = hyper.lr * hyper.gamma**epoch
        perm = rng.permutation(n)
        total, count = 0.0, 0
        for start in range(0, n, hyper.batch_size):
            idx = perm[start : start + hyper.batch_size]
            views, inv = np.unique(feature_index[idx], return_inverse=True)
            onehot = np.eye(len(views))[inv]
            t = rng.integers(1, model.schedule.T + 1, size=len(idx))
            eps = rng.standard_normal((len(idx), config.dim))
            loss, grads = denoiser_loss_and_grads(model, X[idx], t, eps, features[views], onehot)
            if not math.isfinite(loss):
                raise NonFiniteLoss(f"loss became {loss} at epoch {epoch}, step {model.store.step}")
            nn.adam_step(model.store, grads, lr)
            total += loss * len(idx)
            count += len(idx)
        history["loss"].append(total / count)
        history["lr"].append(lr)
        log.debug("sampler epoch %d loss %.5f lr %.2e", epoch, total / count, lr)
    history["seconds"] = time.perf_counter() - t0
    model.trained = True
    return model, history
