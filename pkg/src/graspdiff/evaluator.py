"""Grasp success classifier with sinusoidal frequency encoding of the grasp."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass

import numpy as np

from . import nn
from .bps import BasisSet
from .core import Grasp, GraspDiffError, NormalizationStats, ShapeMismatch, normalize_grasp
from .sampler import EmptyDataset, NonFiniteLoss

log = logging.getLogger(__name__)

PROB_CLAMP = 1e-7


class SingleClassDataset(GraspDiffError):
    pass


@dataclass(frozen=True)
class FreqConfig:
    """Number of sinusoid octaves for p, r and q; 0 passes the raw value through."""

    F_p: int = 10
    F_r: int = 4
    F_q: int = 0

    def __post_init__(self):
        if min(self.F_p, self.F_r, self.F_q) < 0:
            raise ValueError("frequency counts must be nonnegative")

    def encoded_width(self, k: int) -> int:
        per = lambda F: 2 * F if F > 0 else 1  # noqa: E731
        return 3 * per(self.F_p) + 6 * per(self.F_r) + k * per(self.F_q)

    def label(self) -> str:
        return f"({self.F_p},{self.F_r},{self.F_q})"

    @classmethod
    def parse(cls, text: str) -> "FreqConfig":
        parts = [int(x) for x in text.strip("() ").split(",")]
        if len(parts) != 3:
            raise ValueError(f"expected three comma-separated counts, got {text!r}")
        return cls(*parts)


def freq_encode(x, F: int) -> np.ndarray:
    """Per scalar: [sin(2^0 pi x), cos(2^0 pi x), ..., sin(2^(F-1) pi x), cos(2^(F-1) pi x)].

    F = 0 returns the input unchanged. Works on the last axis.
    """
    x = np.asarray(x, dtype=np.float64)
    if F < 0:
        raise ValueError("F must be >= 0")
    if F == 0:
        return x.copy()
    ang = x[..., :, None] * (np.pi * 2.0 ** np.arange(F))
    enc = np.stack([np.sin(ang), np.cos(ang)], axis=-1)
    return enc.reshape(*x.shape[:-1], x.shape[-1] * 2 * F)


def _freq_encode_tensor(x: nn.Tensor, F: int) -> nn.Tensor:
    if F == 0:
        return x
    B, n = x.shape
    mult = (np.pi * 2.0 ** np.arange(F)).astype(x.data.dtype)
    ang = nn.mul(nn.reshape(x, (B, n, 1)), nn.Tensor(mult))
    enc = nn.stack([nn.sin(ang), nn.cos(ang)], axis=-1)
    return nn.reshape(enc, (B, n * 2 * F))


def encode_grasp_tensor(x: nn.Tensor, freq: FreqConfig) -> nn.Tensor:
    return nn.concat(
        [
            _freq_encode_tensor(x[:, 0:3], freq.F_p),
            _freq_encode_tensor(x[:, 3:9], freq.F_r),
            _freq_encode_tensor(x[:, 9:], freq.F_q),
        ],
        axis=1,
    )


def encode_grasp(x, freq: FreqConfig) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return np.concatenate(
        [freq_encode(x[..., 0:3], freq.F_p), freq_encode(x[..., 3:9], freq.F_r), freq_encode(x[..., 9:], freq.F_q)],
        axis=-1,
    )


@dataclass
class EvaluatorConfig:
    k: int = 16
    n_basis: int = 1024
    freq: FreqConfig = FreqConfig()
    obj_dim: int = 256
    hidden: tuple = (512, 256, 64)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["freq"] = [self.freq.F_p, self.freq.F_r, self.freq.F_q]
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EvaluatorConfig":
        d = dict(d)
        d["freq"] = FreqConfig(*d["freq"])
        d["hidden"] = tuple(d["hidden"])
        return cls(**d)


@dataclass
class EvaluatorModel:
    store: nn.ParamStore
    config: EvaluatorConfig
    basis: BasisSet
    stats: NormalizationStats
    trained: bool = False


def init_evaluator(config: EvaluatorConfig, basis: BasisSet, stats: NormalizationStats, seed: int = 0, dtype=np.float32) -> EvaluatorModel:
    if stats.k != config.k or basis.size != config.n_basis:
        raise ShapeMismatch("config disagrees with basis or normalization stats")
    rng = np.random.default_rng(seed)
    P: dict[str, np.ndarray] = {}
    nn.init_dense(P, "obj", config.n_basis, config.obj_dim, rng, dtype=dtype)
    width = config.freq.encoded_width(config.k) + config.obj_dim
    for i, h in enumerate(config.hidden):
        nn.init_dense(P, f"fc{i}", width, h, rng, dtype=dtype)
        width = h
    nn.init_dense(P, "out", width, 1, rng, dtype=dtype)
    return EvaluatorModel(nn.ParamStore(P), config, basis, stats)


def evaluator_forward(P: dict, cfg: EvaluatorConfig, x: nn.Tensor, feat: nn.Tensor, obj_onehot=None) -> nn.Tensor:
    """Success logits (B,) for model-space grasps ``x`` (B, 9+k)."""
    if x.shape[1] != 9 + cfg.k:
        raise ShapeMismatch(f"grasp width {x.shape[1]} != {9 + cfg.k}")
    if feat.shape[-1] != cfg.n_basis:
        raise ShapeMismatch(f"feature width {feat.shape[-1]} != {cfg.n_basis}")
    obj = nn.dense(feat, P["obj.w"], P["obj.b"])
    if obj_onehot is not None:
        obj = nn.matmul(nn.Tensor(obj_onehot.astype(obj.data.dtype)), obj)
    h = nn.concat([encode_grasp_tensor(x, cfg.freq), obj], axis=1)
    for i in range(len(cfg.hidden)):
        h = nn.gelu(nn.dense(h, P[f"fc{i}.w"], P[f"fc{i}.b"]))
    out = nn.dense(h, P["out.w"], P["out.b"])
    return nn.reshape(out, (x.shape[0],))


def _prepare(model: EvaluatorModel, X, f_O, tape: nn.Tape, requires_grad: bool):
    dtype = model.store.params["obj.w"].dtype
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    f = np.asarray(f_O, dtype=np.float64)
    if f.ndim == 1:
        feat, onehot = nn.Tensor(f[None, :].astype(dtype)), np.ones((X.shape[0], 1))
    else:
        feat, onehot = nn.Tensor(f.astype(dtype)), None
    x = tape.leaf(X.astype(dtype), requires_grad=requires_grad)
    return x, feat, onehot


def logits_model_space(model: EvaluatorModel, X, f_O) -> np.ndarray:
    tape = nn.Tape()
    P = model.store.leaves(tape, requires_grad=False)
    x, feat, onehot = _prepare(model, X, f_O, tape, False)
    return evaluator_forward(P, model.config, x, feat, onehot).data.astype(np.float64)


def score_model_space(model: EvaluatorModel, X, f_O) -> np.ndarray:
    """Success probabilities for model-space grasps (n, 9+k)."""
    return nn._sigmoid(logits_model_space(model, X, f_O))


def score(model: EvaluatorModel, grasps, f_O) -> np.ndarray:
    """Success probabilities for physical grasps, an (n, 9+k) array."""
    X, _ = normalize_grasp(np.atleast_2d(np.asarray(grasps, dtype=np.float64)), model.stats)
    return score_model_space(model, X, f_O)


def evaluate(model: EvaluatorModel, g: Grasp, f_O, allow_untrained: bool = True) -> float:
    if not model.trained and not allow_untrained:
        from .sampler import UntrainedModel

        raise UntrainedModel("evaluating with an untrained model")
    return float(score(model, g.flatten()[None, :], f_O)[0])


def bce_loss(y, y_hat) -> float:
    """Binary cross-entropy with the probability clamped to [1e-7, 1 - 1e-7]."""
    y_hat = np.clip(np.asarray(y_hat, dtype=np.float64), PROB_CLAMP, 1.0 - PROB_CLAMP)
    y = np.asarray(y, dtype=np.float64)
    return float(np.mean(-(y * np.log(y_hat) + (1.0 - y) * np.log(1.0 - y_hat))))


def grad_log_score(model: EvaluatorModel, X, f_O) -> np.ndarray:
    """Gradient of log D(S=1 | x, f_O) with respect to model-space grasp(s)."""
    X = np.asarray(X, dtype=np.float64)
    single = X.ndim == 1
    tape = nn.Tape()
    P = model.store.leaves(tape, requires_grad=False)
    x, feat, onehot = _prepare(model, X, f_O, tape, True)
    logp = nn.sum_(nn.log_sigmoid(evaluator_forward(P, model.config, x, feat, onehot)))
    tape.backward(logp)
    g = x.grad.astype(np.float64) if x.grad is not None else np.zeros(x.shape)
    if not np.all(np.isfinite(g)):
        raise nn.NonFiniteValue("non-finite evaluator gradient")
    return g[0] if single else g


# ------------------------------------------------------------------- training


@dataclass
class EvaluatorHyper:
    lr: float = 1e-4
    batch_size: int = 256
    epochs: int = 20
    plateau_patience: int = 3
    plateau_factor: float = 0.5
    val_fraction: float = 0.15
    keep_best: bool = True
    seed: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


REFERENCE_EVALUATOR_HYPER = EvaluatorHyper(lr=1e-4, batch_size=25600, epochs=20)


def _bce_logits(tape_logits: nn.Tensor, y: np.ndarray) -> nn.Tensor:
    # -[y log s(z) + (1-y) log s(-z)]
    yt = nn.Tensor(y.astype(tape_logits.data.dtype))
    pos = nn.mul(nn.log_sigmoid(tape_logits), yt)
    neg = nn.mul(nn.log_sigmoid(nn.scale(tape_logits, -1.0)), nn.Tensor((1.0 - y).astype(tape_logits.data.dtype)))
    return nn.scale(nn.mean(nn.add(pos, neg)), -1.0)


def split_by_object(object_ids, val_fraction: float, rng: np.random.Generator):
    """Boolean validation mask that holds out whole objects."""
    object_ids = np.asarray(object_ids)
    uniq = np.unique(object_ids)
    n_val = max(1, int(round(val_fraction * len(uniq)))) if len(uniq) > 1 else 0
    val_objs = rng.choice(uniq, size=n_val, replace=False) if n_val else np.array([], dtype=uniq.dtype)
    return np.isin(object_ids, val_objs)


class PlateauScheduler:
    """Halve the learning rate after ``patience`` epochs without validation improvement."""

    def __init__(self, lr: float, patience: int = 3, factor: float = 0.5):
        self.lr = lr
        self.patience = patience
        self.factor = factor
        self.best = math.inf
        self.stale = 0

    def step(self, metric: float) -> float:
        if metric < self.best - 1e-12:
            self.best = metric
            self.stale = 0
        else:
            self.stale += 1
            if self.stale >= self.patience:
                self.lr *= self.factor
                self.stale = 0
        return self.lr


def classification_metrics(y_true, y_pred) -> dict:
    """Recall on positives, recall on negatives and their mean (percent)."""
    y_true = np.asarray(y_true, dtype=bool)
    y_pred = np.asarray(y_pred, dtype=bool)
    rp = 100.0 * np.mean(y_pred[y_true]) if y_true.any() else float("nan")
    rn = 100.0 * np.mean(~y_pred[~y_true]) if (~y_true).any() else float("nan")
    return {
        "recall_pos": float(rp),
        "recall_neg": float(rn),
        "total_acc": float(np.nanmean([rp, rn])),
        "plain_acc": float(100.0 * np.mean(y_true == y_pred)),
    }


def train_evaluator(features, grasps, feature_index, labels, object_ids, basis: BasisSet, stats: NormalizationStats, config: EvaluatorConfig | None = None, hyper: EvaluatorHyper | None = None):
    """Fit the classifier; validation objects are held out entirely.

    Returns the model and a history dict with train loss, validation loss,
    validation metrics and learning rate per epoch.
    """
    grasps = np.asarray(grasps, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    if grasps.shape[0] == 0:
        raise EmptyDataset("no grasps to train on")
    if labels.all() or not labels.any():
        raise SingleClassDataset("training needs both successful and failed grasps")
    config = config or EvaluatorConfig(k=stats.k, n_basis=basis.size)
    hyper = hyper or EvaluatorHyper()
    model = init_evaluator(config, basis, stats, seed=hyper.seed)
    features = np.asarray(features, dtype=np.float64)
    feature_index = np.asarray(feature_index)
    X, _ = normalize_grasp(grasps, stats)
    rng = np.random.default_rng(hyper.seed + 1)
    val = split_by_object(object_ids, hyper.val_fraction, rng)
    tr_idx = np.flatnonzero(~val)
    va_idx = np.flatnonzero(val)
    sched = PlateauScheduler(hyper.lr, hyper.plateau_patience, hyper.plateau_factor)
    history = {"loss": [], "val_loss": [], "val_metrics": [], "lr": []}
    lr = hyper.lr
    best = (math.inf, None)
    t0 = time.perf_counter()
    for epoch in range(hyper.epochs):
        perm = rng.permutation(tr_idx)
        total, count = 0.0, 0
        for start in range(0, len(perm), hyper.batch_size):
            idx = perm[start : start + hyper.batch_size]
            views, inv = np.unique(feature_index[idx], return_inverse=True)
            onehot = np.eye(len(views))[inv]
            tape = nn.Tape()
            P = model.store.leaves(tape)
            dtype = model.store.params["obj.w"].dtype
            logits = evaluator_forward(P, config, nn.Tensor(X[idx].astype(dtype)), nn.Tensor(features[views].astype(dtype)), onehot)
            loss = _bce_logits(logits, labels[idx].astype(np.float64))
            lval = float(loss.data)
            if not math.isfinite(lval):
                raise NonFiniteLoss(f"evaluator loss became {lval} at epoch {epoch}")
            tape.backward(loss)
            nn.adam_step(model.store, nn.collect_grads(P), lr)
            total += lval * len(idx)
            count += len(idx)
        history["loss"].append(total / count)
        history["lr"].append(lr)
        if len(va_idx):
            p = predict_indexed(model, X[va_idx], features, feature_index[va_idx])
            vloss = bce_loss(labels[va_idx], p)
            history["val_loss"].append(vloss)
            history["val_metrics"].append(classification_metrics(labels[va_idx], p >= 0.5))
            lr = sched.step(vloss)
            if hyper.keep_best and vloss < best[0]:
                best = (vloss, {n: a.copy() for n, a in model.store.params.items()}, epoch)
        log.debug("evaluator epoch %d loss %.4f", epoch, total / count)
    if best[1] is not None:
        model.store.params.update(best[1])
        history["best_epoch"] = best[2]
    history["seconds"] = time.perf_counter() - t0
    history["n_train"] = int(len(tr_idx))
    history["n_val"] = int(len(va_idx))
    model.trained = True
    return model, history


def predict_indexed(model: EvaluatorModel, X, features, feature_index, chunk: int = 4096) -> np.ndarray:
    """Probabilities for model-space grasps whose clouds are rows of ``features``."""
    out = np.empty(len(X))
    for start in range(0, len(X), chunk):
        sl = slice(start, start + chunk)
        views, inv = np.unique(feature_index[sl], return_inverse=True)
        tape = nn.Tape()
        P = model.store.leaves(tape, requires_grad=False)
        dtype = model.store.params["obj.w"].dtype
        logits = evaluator_forward(P, model.config, nn.Tensor(np.asarray(X[sl]).astype(dtype)), nn.Tensor(features[views].astype(dtype)), np.eye(len(views))[inv])
        out[sl] = nn._sigmoid(logits.data.astype(np.float64))
    return out


def ablation_report(results: dict) -> str:
    """Markdown table from ``{label: metrics}`` where metrics come from :func:`classification_metrics`."""
    lines = [
        "| Evaluator | Recall Pos. (%) | Recall Neg. (%) | Total Acc. (%) |",
        "|---|---|---|---|",
    ]
    for label, m in results.items():
        lines.append(f"| {label} | {m['recall_pos']:.2f} | {m['recall_neg']:.2f} | {m['total_acc']:.2f} |")
    return "\n".join(lines) + "\n"


def run_ablation(train, test, freqs, basis: BasisSet, stats: NormalizationStats, hyper: EvaluatorHyper | None = None, config_kwargs: dict | None = None):
    """Train one evaluator per frequency config and score it on ``test``.

    ``train``/``test`` are dicts with keys features, grasps, feature_index,
    labels (and object_ids for train). Returns ``{label: metrics}``.
    """
    results = {}
    for freq in freqs:
        cfg = EvaluatorConfig(k=stats.k, n_basis=basis.size, freq=freq, **(config_kwargs or {}))
        model, _ = train_evaluator(
            train["features"], train["grasps"], train["feature_index"], train["labels"], train["object_ids"], basis, stats, cfg, hyper
        )
        X, _ = normalize_grasp(test["grasps"], stats)
        p = predict_indexed(model, X, test["features"], test["feature_index"])
        label = "No Freq. Enc." if (freq.F_p, freq.F_r, freq.F_q) == (0, 0, 0) else freq.label()
        results[label] = classification_metrics(test["labels"], p >= 0.5)
    return results
