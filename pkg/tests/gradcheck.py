"""Central finite-difference oracle shared by the gradient tests."""

import numpy as np

from graspdiff import nn

H = 1e-4


def rel_error(a, b) -> float:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    scale = max(np.max(np.abs(a), initial=0.0), np.max(np.abs(b), initial=0.0), 1e-6)
    return float(np.max(np.abs(a - b), initial=0.0) / scale)


def check(fn, arrays, rng, h: float = H) -> float:
    """Worst relative error of tape gradients against central differences.

    ``fn`` maps a list of Tensors to a Tensor; it is contracted with a fixed
    random weight so every output entry contributes.
    """
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    tape = nn.Tape()
    leaves = [tape.leaf(a.copy(), True, f"x{i}") for i, a in enumerate(arrays)]
    out = fn(leaves)
    w = rng.standard_normal(out.shape)
    tape.backward(out, w)

    def value(vals):
        t = nn.Tape()
        return float(np.sum(fn([t.leaf(v, True, f"x{i}") for i, v in enumerate(vals)]).data * w))

    worst = 0.0
    for i, a in enumerate(arrays):
        num = np.zeros_like(a)
        for idx in np.ndindex(a.shape):
            plus = [x.copy() for x in arrays]
            minus = [x.copy() for x in arrays]
            plus[i][idx] += h
            minus[i][idx] -= h
            num[idx] = (value(plus) - value(minus)) / (2 * h)
        got = leaves[i].grad if leaves[i].grad is not None else np.zeros_like(a)
        worst = max(worst, rel_error(got, num))
    return worst
