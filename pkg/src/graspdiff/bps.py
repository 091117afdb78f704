"""Basis point set encoding of point clouds."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .core import GraspDiffError

DEFAULT_RADIUS = 0.3
DEFAULT_SIZE = 1024
REFERENCE_SIZE = 4096


class EmptyCloud(GraspDiffError):
    pass


@dataclass(frozen=True)
class BasisSet:
    basis: np.ndarray
    seed: int
    radius: float

    @property
    def size(self) -> int:
        return self.basis.shape[0]

    def __eq__(self, other):
        if not isinstance(other, BasisSet):
            return NotImplemented
        return (
            self.seed == other.seed
            and self.radius == other.radius
            and np.array_equal(self.basis, other.basis)
        )

    def __hash__(self):
        return hash((self.seed, self.radius, self.basis.shape))


def sample_basis(B: int = DEFAULT_SIZE, radius: float = DEFAULT_RADIUS, seed: int = 0) -> BasisSet:
    """Draw ``B`` points uniformly from the ball of ``radius``.

    Coordinates are rounded through float32 so the basis survives the weights
    file bit-for-bit.
    """
    if B < 1 or not radius > 0:
        raise ValueError("need B >= 1 and radius > 0")
    rng = np.random.default_rng(seed)
    d = rng.standard_normal((B, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    rad = radius * rng.random(B) ** (1.0 / 3.0)
    pts = (d * rad[:, None]).astype(np.float32)
    # float32 rounding can push a point a hair outside the ball
    norms = np.linalg.norm(pts.astype(np.float64), axis=1)
    over = norms > radius
    if np.any(over):
        pts[over] = np.nextafter(pts[over], np.float32(0))
    return BasisSet(pts.astype(np.float64), int(seed), float(radius))


def _check_cloud(cloud) -> np.ndarray:
    cloud = np.asarray(cloud, dtype=np.float64).reshape(-1, 3)
    if cloud.shape[0] == 0:
        raise EmptyCloud("cannot encode an empty point cloud")
    return cloud


def encode(cloud, basis: BasisSet) -> np.ndarray:
    """Distance from every basis point to its nearest cloud point (k-d tree)."""
    cloud = _check_cloud(cloud)
    dist, _ = cKDTree(cloud).query(basis.basis, k=1)
    return np.asarray(dist, dtype=np.float64)


def encode_brute(cloud, basis: BasisSet) -> np.ndarray:
    """Reference O(B*N) encoder."""
    cloud = _check_cloud(cloud)
    out = np.empty(basis.size)
    for i, b in enumerate(basis.basis):
        out[i] = np.sqrt(np.min(np.sum((cloud - b) ** 2, axis=1)))
    return out


def encode_many(clouds, basis: BasisSet) -> np.ndarray:
    return np.stack([encode(c, basis) for c in clouds]) if len(clouds) else np.zeros((0, basis.size))
