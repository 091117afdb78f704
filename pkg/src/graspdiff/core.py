"""Grasp representation, 6-D rotations and model-space normalization."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

GS_EPS = 1e-8


class GraspDiffError(Exception):
    """Base class for all package errors."""


class DegenerateRotation(GraspDiffError):
    pass


class NotARotation(GraspDiffError):
    pass


class ShapeMismatch(GraspDiffError):
    pass


@dataclass
class Grasp:
    """A dexterous grasp: palm position, 6-D rotation and joint angles."""

    p: np.ndarray
    r: np.ndarray
    q: np.ndarray

    def __post_init__(self):
        self.p = np.asarray(self.p, dtype=np.float64).reshape(3)
        self.r = np.asarray(self.r, dtype=np.float64).reshape(6)
        self.q = np.asarray(self.q, dtype=np.float64).reshape(-1)

    @property
    def k(self) -> int:
        return self.q.shape[0]

    def flatten(self) -> np.ndarray:
        return np.concatenate([self.p, self.r, self.q])

    @classmethod
    def from_vector(cls, g, k: int | None = None) -> "Grasp":
        g = np.asarray(g, dtype=np.float64).reshape(-1)
        if k is None:
            k = g.shape[0] - 9
        if k < 0 or g.shape[0] != 9 + k:
            raise ShapeMismatch(f"grasp vector of length {g.shape[0]} does not match k={k}")
        return cls(g[:3], g[3:9], g[9:])

    def rotation(self) -> np.ndarray:
        return rot6d_to_matrix(self.r)


def split_grasps(G: np.ndarray):
    """Views (p, r, q) into a batch of flattened grasps."""
    G = np.asarray(G)
    return G[..., :3], G[..., 3:9], G[..., 9:]


@dataclass
class NormalizationStats:
    """Affine map between physical grasps and the model space."""

    p_center: np.ndarray = field(default_factory=lambda: np.zeros(3))
    p_scale: float = 1.0
    q_lo: np.ndarray = field(default_factory=lambda: np.zeros(16))
    q_hi: np.ndarray = field(default_factory=lambda: np.full(16, np.pi / 2))

    def __post_init__(self):
        self.p_center = np.asarray(self.p_center, dtype=np.float64).reshape(3)
        self.q_lo = np.asarray(self.q_lo, dtype=np.float64).reshape(-1)
        self.q_hi = np.asarray(self.q_hi, dtype=np.float64).reshape(-1)
        self.p_scale = float(self.p_scale)
        if not self.p_scale > 0:
            raise ValueError("p_scale must be positive")
        if self.q_lo.shape != self.q_hi.shape or not np.all(self.q_lo < self.q_hi):
            raise ValueError("joint limits must satisfy q_lo < q_hi elementwise")

    @property
    def k(self) -> int:
        return self.q_lo.shape[0]

    @property
    def dim(self) -> int:
        return 9 + self.k

    def to_dict(self) -> dict:
        return {
            "p_center": self.p_center.tolist(),
            "p_scale": self.p_scale,
            "q_lo": self.q_lo.tolist(),
            "q_hi": self.q_hi.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NormalizationStats":
        return cls(d["p_center"], d["p_scale"], d["q_lo"], d["q_hi"])

    def __eq__(self, other):
        if not isinstance(other, NormalizationStats):
            return NotImplemented
        return (
            self.p_scale == other.p_scale
            and np.array_equal(self.p_center, other.p_center)
            and np.array_equal(self.q_lo, other.q_lo)
            and np.array_equal(self.q_hi, other.q_hi)
        )


def rot6d_to_matrix(r) -> np.ndarray:
    """Gram-Schmidt map from a 6-D vector (or a batch, shape (..., 6)) to rotation matrices.

    The two 3-vectors become the first two columns after orthonormalization;
    the third column is their cross product.
    """
    r = np.asarray(r, dtype=np.float64)
    a1, a2 = r[..., :3], r[..., 3:6]
    n1 = np.linalg.norm(a1, axis=-1, keepdims=True)
    if np.any(n1 <= GS_EPS):
        raise DegenerateRotation("first 6-D column has (near) zero norm")
    b1 = a1 / n1
    u2 = a2 - np.sum(b1 * a2, axis=-1, keepdims=True) * b1
    n2 = np.linalg.norm(u2, axis=-1, keepdims=True)
    if np.any(n2 <= GS_EPS):
        raise DegenerateRotation("second 6-D column is (nearly) parallel to the first")
    b2 = u2 / n2
    b3 = np.cross(b1, b2)
    return np.stack([b1, b2, b3], axis=-1)


def matrix_to_rot6d(R, atol: float = 1e-4) -> np.ndarray:
    R = np.asarray(R, dtype=np.float64)
    if R.shape[-2:] != (3, 3):
        raise ShapeMismatch(f"expected (..., 3, 3), got {R.shape}")
    RtR = np.swapaxes(R, -1, -2) @ R
    if not np.allclose(RtR, np.eye(3), atol=atol):
        raise NotARotation("matrix is not orthonormal")
    return np.concatenate([R[..., :, 0], R[..., :, 1]], axis=-1)


def random_rotations(n: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-uniform rotations via QR of Gaussian matrices."""
    A = rng.standard_normal((n, 3, 3))
    Q, Rm = np.linalg.qr(A)
    Q = Q * np.sign(np.diagonal(Rm, axis1=-2, axis2=-1))[:, None, :]
    flip = np.linalg.det(Q) < 0
    Q[flip, :, 2] *= -1
    return Q


def normalize_grasp(g, stats: NormalizationStats):
    """Map physical grasp(s) to model space.

    Accepts a Grasp or an array of flattened grasps (..., 9+k). Joint values
    outside the limits are clamped; returns ``(vector, clamped_mask)`` where the
    mask flags which grasps needed clamping.
    """
    G = g.flatten() if isinstance(g, Grasp) else np.asarray(g, dtype=np.float64)
    if G.shape[-1] != stats.dim:
        raise ShapeMismatch(f"grasp length {G.shape[-1]} != {stats.dim}")
    p, r, q = split_grasps(G)
    qc = np.clip(q, stats.q_lo, stats.q_hi)
    clamped = np.any(qc != q, axis=-1)
    pn = (p - stats.p_center) / stats.p_scale
    qn = 2.0 * (qc - stats.q_lo) / (stats.q_hi - stats.q_lo) - 1.0
    return np.concatenate([pn, r, qn], axis=-1), clamped


def denormalize_grasp(x, stats: NormalizationStats) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != stats.dim:
        raise ShapeMismatch(f"vector length {x.shape[-1]} != {stats.dim}")
    pn, r, qn = split_grasps(x)
    p = pn * stats.p_scale + stats.p_center
    q = (qn + 1.0) * 0.5 * (stats.q_hi - stats.q_lo) + stats.q_lo
    # sampled joints can overshoot [-1, 1]; physical grasps always respect the limits
    q = np.clip(q, stats.q_lo, stats.q_hi)
    return np.concatenate([p, r, q], axis=-1)


def grasps_to_array(grasps) -> np.ndarray:
    if len(grasps) == 0:
        return np.zeros((0, 0))
    return np.stack([g.flatten() for g in grasps])


def array_to_grasps(G: np.ndarray) -> list[Grasp]:
    return [Grasp.from_vector(row) for row in np.atleast_2d(G)] if len(G) else []
