"""
The toy grasping world
======================

Primitive objects, a partial view, a four-finger hand and the oracle that
decides whether a grasp holds.
"""

import numpy as np

from graspdiff import toyworld as tw

rng = np.random.default_rng(0)
hand = tw.ToyGripper()

# a random box, seen from one side
obj = tw.ToyObject("box", [0.05, 0.04, 0.06], np.eye(3))
pts, normals = obj.sample_surface(2048, rng)
cloud, _, _ = tw.partial_view(pts, normals, [0.3, 0.2, 1.0])
print(f"full cloud {len(pts)} points, visible {len(cloud)}")

# constructive proposals: palm outside the surface, fingers curled to touch it
G = tw.propose_grasps(obj, hand, 200, rng)
checks = tw.oracle_checks(G, obj, hand)
for name, ok in checks.items():
    print(f"{name:9s} {ok.mean():.2f}")
print(f"success {tw.success_rate(G, obj, hand):.1f}%")

# uninformed grasps almost never work
R = tw.random_grasps(100_000, hand, rng)
print(f"random success {tw.success_rate(R, obj, hand):.4f}%")
R = tw.random_grasps_near(obj, 100_000, hand, rng)
print(f"random near the object {tw.success_rate(R, obj, hand):.4f}%")

# fingertips of the first successful proposal
good = G[tw.oracle_labels(G, obj, hand)][0]
print(np.round(tw.fingertip_fk(good, hand), 3))
print("distance to surface (mm)", np.round(1000 * obj.sdf(tw.fingertip_fk(good, hand)), 2))
