"""
Basis point set encoding
========================

A partial cloud of any size becomes a fixed-length vector of distances from
random basis points to their nearest cloud point.
"""

import numpy as np

from graspdiff import bps
from graspdiff import toyworld as tw

rng = np.random.default_rng(1)
basis = bps.sample_basis(1024, 0.3, seed=0)

obj = tw.ToyObject("cylinder", [0.04, 0.06])
pts, normals = obj.sample_surface(2048, rng)
cloud, _, _ = tw.partial_view(pts, normals, [1.0, 0.0, 0.2])
cloud = cloud - cloud.mean(axis=0)

f = bps.encode(cloud, basis)
print(f.shape, f.min().round(4), f.max().round(4))

# order of the points does not matter
print(np.array_equal(f, bps.encode(cloud[rng.permutation(len(cloud))], basis)))

# the kd-tree and a brute-force search agree
print(np.max(np.abs(f - bps.encode_brute(cloud, basis))))

# a sphere and the cylinder give different codes
sph = tw.ToyObject("sphere", [0.05])
pts, normals = sph.sample_surface(2048, rng)
c2, _, _ = tw.partial_view(pts, normals, [1.0, 0.0, 0.2])
print("code distance", np.linalg.norm(f - bps.encode(c2 - c2.mean(axis=0), basis)).round(3))
