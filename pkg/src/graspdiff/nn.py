"""Small reverse-mode autodiff over numpy arrays, plus layers and Adam.

A :class:`Tape` records every op applied to tensors that require gradients;
``tape.backward(out)`` replays the record in reverse and accumulates
vector-Jacobian products into ``Tensor.grad``. The op vocabulary is fixed to
what the two networks need: dense, attention, layer norm, GELU, softmax,
concatenation, slicing and a few elementwise maps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import GraspDiffError, ShapeMismatch


class NonFiniteValue(GraspDiffError):
    pass


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "tape", "name")

    def __init__(self, data, tape: "Tape | None" = None, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = requires_grad
        self.tape = tape
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


class Tape:
    def __init__(self, check_finite: bool = True):
        self.records: list = []
        self.check_finite = check_finite

    def leaf(self, data, requires_grad: bool = True, name: str | None = None) -> Tensor:
        return Tensor(data, self, requires_grad, name)

    def constant(self, data) -> Tensor:
        return Tensor(data, self, False)

    def backward(self, out: Tensor, grad=None) -> None:
        """Accumulate d(out)/d(leaf) into ``leaf.grad`` for every leaf on the tape."""
        if grad is None:
            if out.data.size != 1:
                raise ShapeMismatch("output gradient required for non-scalar output")
            grad = np.ones_like(out.data)
        grad = np.asarray(grad, dtype=out.data.dtype)
        if grad.shape != out.shape:
            raise ShapeMismatch(f"output gradient shape {grad.shape} != {out.shape}")
        grads = {id(out): grad}
        for node, parents, vjp in reversed(self.records):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            for parent, pg in zip(parents, vjp(g)):
                if pg is None or not isinstance(parent, Tensor) or not parent.requires_grad:
                    continue
                if self.check_finite and not _all_finite(pg):
                    raise NonFiniteValue("non-finite gradient in backward pass")
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
                if _is_leaf(parent, self):
                    parent.grad = pg if parent.grad is None else parent.grad + pg
        # outputs that are leaves themselves
        if _is_leaf(out, self) and out.requires_grad and out.grad is None:
            out.grad = grad


def _all_finite(x) -> bool:
    # a NaN or inf anywhere poisons the sum
    return bool(np.isfinite(np.sum(x)))


def _is_leaf(t: Tensor, tape: Tape) -> bool:
    return t.requires_grad and t.name != "__op__"


def _as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.data.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype), like.tape if like is not None else None, False)


def _record(data, parents, vjp) -> Tensor:
    tape = next((p.tape for p in parents if isinstance(p, Tensor) and p.tape is not None), None)
    needs = any(isinstance(p, Tensor) and p.requires_grad for p in parents)
    if tape is not None and tape.check_finite and not _all_finite(data):
        raise NonFiniteValue("non-finite value in forward pass")
    out = Tensor(data, tape, needs, "__op__")
    if needs and tape is not None:
        tape.records.append((out, parents, vjp))
    return out


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)
    sa, sb = a.shape, b.shape
    return _record(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)
    sa, sb = a.shape, b.shape
    return _record(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def mul(a, b) -> Tensor:
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)
    ad, bd = a.data, b.data
    return _record(
        ad * bd, (a, b), lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape))
    )


def scale(a: Tensor, c: float) -> Tensor:
    return _record(a.data * c, (a,), lambda g: (g * c,))


def square(a: Tensor) -> Tensor:
    ad = a.data
    return _record(ad * ad, (a,), lambda g: (2.0 * g * ad,))


def sin(a: Tensor) -> Tensor:
    ad = a.data
    return _record(np.sin(ad), (a,), lambda g: (g * np.cos(ad),))


def cos(a: Tensor) -> Tensor:
    ad = a.data
    return _record(np.cos(ad), (a,), lambda g: (-g * np.sin(ad),))


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(a: Tensor) -> Tensor:
    """tanh approximation of GELU."""
    x = a.data
    x2 = x * x
    inner = _GELU_C * x * (1.0 + 0.044715 * x2)
    th = np.tanh(inner)
    out = 0.5 * x * (1.0 + th)

    def vjp(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * x2)
        return (g * (0.5 * (1.0 + th) + 0.5 * x * (1.0 - th**2) * dinner),)

    return _record(out, (a,), vjp)


def sigmoid(a: Tensor) -> Tensor:
    s = _sigmoid(a.data)
    return _record(s, (a,), lambda g: (g * s * (1.0 - s),))


def log_sigmoid(a: Tensor) -> Tensor:
    """log(sigmoid(x)) without overflow."""
    x = a.data
    out = -np.logaddexp(0.0, -x)
    return _record(out, (a,), lambda g: (g * _sigmoid(-x),))


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


# ----------------------------------------------------------------- reductions


def sum_(a: Tensor, axis=None, keepdims=False) -> Tensor:
    shape = a.shape
    out = np.sum(a.data, axis=axis, keepdims=keepdims, dtype=np.float64).astype(a.data.dtype)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _record(out, (a,), vjp)


def mean(a: Tensor, axis=None, keepdims=False) -> Tensor:
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return scale(sum_(a, axis, keepdims), 1.0 / float(n))


# ------------------------------------------------------------------ structure


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product with numpy broadcasting on leading axes."""
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)
    if a.shape[-1] != b.shape[-2 if b.data.ndim > 1 else 0]:
        raise ShapeMismatch(f"matmul {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data
    need_a, need_b = a.requires_grad, b.requires_grad

    def vjp(g):
        ga = gb = None
        if need_a:
            ga = _unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape)
        if need_b:
            if bd.ndim == 2 and ad.ndim > 2:
                # shared weight: fold the batch axes into one product
                gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape)
        return ga, gb

    return _record(ad @ bd, (a, b), vjp)


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    return _record(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def transpose(a: Tensor, axes) -> Tensor:
    inv = np.argsort(axes)
    return _record(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),))


def concat(tensors, axis: int = -1) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    return _record(out, tuple(tensors), lambda g: tuple(np.split(g, splits, axis=axis)))


def stack(tensors, axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    out = np.stack([t.data for t in tensors], axis=axis)
    n = len(tensors)
    return _record(
        out,
        tuple(tensors),
        lambda g: tuple(np.take(g, i, axis=axis) for i in range(n)),
    )


def getitem(a: Tensor, idx) -> Tensor:
    shape, dtype = a.shape, a.data.dtype

    def vjp(g):
        full = np.zeros(shape, dtype=dtype)
        np.add.at(full, idx, g)
        return (full,)

    return _record(a.data[idx], (a,), vjp)


# --------------------------------------------------------------------- layers


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    x = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(x)
    s = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        return (s * (g - np.sum(g * s, axis=axis, keepdims=True)),)

    return _record(s, (a,), vjp)


def layer_norm(a: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    x = a.data
    mu = x.mean(axis=-1, keepdims=True, dtype=np.float64)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True, dtype=np.float64)
    inv = (1.0 / np.sqrt(var + eps)).astype(x.dtype)
    xhat = ((x - mu) * inv).astype(x.dtype)
    gd = gamma.data
    out = xhat * gd + beta.data

    def vjp(g):
        gx = g * gd
        n = x.shape[-1]
        dx = inv / n * (n * gx - gx.sum(-1, keepdims=True) - xhat * (gx * xhat).sum(-1, keepdims=True))
        dgamma = (g * xhat).reshape(-1, n).sum(0)
        dbeta = g.reshape(-1, n).sum(0)
        return dx, dgamma, dbeta

    return _record(out, (a, gamma, beta), vjp)


def dense(x: Tensor, W: Tensor, b: Tensor | None = None) -> Tensor:
    y = matmul(x, W)
    return add(y, b) if b is not None else y


def attention(q: Tensor, k: Tensor, v: Tensor) -> Tensor:
    """Scaled dot-product attention over the last two axes."""
    d = q.shape[-1]
    scores = scale(matmul(q, transpose(k, _swap_last(k.data.ndim))), 1.0 / math.sqrt(d))
    return matmul(softmax(scores, axis=-1), v)


def _swap_last(ndim):
    axes = list(range(ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return tuple(axes)


def multi_head_attention(x: Tensor, kv: Tensor, P: dict, prefix: str, heads: int) -> Tensor:
    """Multi-head attention; ``x`` (B, Lq, d) queries ``kv`` (B, Lk, d)."""
    B, Lq, d = x.shape
    Lk = kv.shape[1]
    if d % heads:
        raise ShapeMismatch(f"width {d} not divisible by {heads} heads")
    dh = d // heads

    def split(t, L):
        return transpose(reshape(t, (B, L, heads, dh)), (0, 2, 1, 3))

    q = split(dense(x, P[prefix + ".wq"], P[prefix + ".bq"]), Lq)
    k = split(dense(kv, P[prefix + ".wk"], P[prefix + ".bk"]), Lk)
    v = split(dense(kv, P[prefix + ".wv"], P[prefix + ".bv"]), Lk)
    o = attention(q, k, v)
    o = reshape(transpose(o, (0, 2, 1, 3)), (B, Lq, d))
    return dense(o, P[prefix + ".wo"], P[prefix + ".bo"])


# ---------------------------------------------------------------- parameters


def init_dense(params: dict, name: str, n_in: int, n_out: int, rng, scale_: float = 1.0, dtype=np.float32):
    bound = scale_ * math.sqrt(6.0 / (n_in + n_out))
    params[name + ".w"] = rng.uniform(-bound, bound, (n_in, n_out)).astype(dtype)
    params[name + ".b"] = np.zeros(n_out, dtype=dtype)


def init_layer_norm(params: dict, name: str, d: int, dtype=np.float32):
    params[name + ".g"] = np.ones(d, dtype=dtype)
    params[name + ".b"] = np.zeros(d, dtype=dtype)


def init_attention(params: dict, name: str, d: int, rng, dtype=np.float32):
    for part in ("q", "k", "v", "o"):
        init_dense(params, f"{name}.tmp_{part}", d, d, rng, dtype=dtype)
        params[f"{name}.w{part}"] = params.pop(f"{name}.tmp_{part}.w")
        params[f"{name}.b{part}"] = params.pop(f"{name}.tmp_{part}.b")


@dataclass
class ParamStore:
    """Named parameters with Adam moment buffers."""

    params: dict[str, np.ndarray]
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0

    def __post_init__(self):
        for name, p in self.params.items():
            self.m.setdefault(name, np.zeros_like(p))
            self.v.setdefault(name, np.zeros_like(p))

    def leaves(self, tape: Tape, requires_grad: bool = True) -> dict[str, Tensor]:
        return {n: tape.leaf(p, requires_grad, n) for n, p in self.params.items()}

    def astype(self, dtype) -> "ParamStore":
        return ParamStore({n: p.astype(dtype) for n, p in self.params.items()})

    def copy(self) -> "ParamStore":
        return ParamStore(
            {n: p.copy() for n, p in self.params.items()},
            {n: p.copy() for n, p in self.m.items()},
            {n: p.copy() for n, p in self.v.items()},
            self.step,
        )

    def n_params(self) -> int:
        return int(sum(p.size for p in self.params.values()))


def adam_step(store: ParamStore, grads: dict, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> ParamStore:
    """One bias-corrected Adam update, in place. Parameters without a gradient are left alone."""
    for name, g in grads.items():
        if name not in store.params:
            raise KeyError(name)
        if g.shape != store.params[name].shape:
            raise ShapeMismatch(f"gradient for {name}: {g.shape} != {store.params[name].shape}")
    store.step += 1
    t = store.step
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for name, g in grads.items():
        p = store.params[name]
        m, v = store.m[name], store.v[name]
        g = g.astype(p.dtype, copy=False)
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        denom = np.sqrt(v / c2)
        denom += eps
        update = (m / c1) / denom
        update *= lr
        store.params[name] = p - update.astype(p.dtype, copy=False)
    return store


def collect_grads(leaves: dict[str, Tensor]) -> dict[str, np.ndarray]:
    return {n: (t.grad if t.grad is not None else np.zeros_like(t.data)) for n, t in leaves.items()}
