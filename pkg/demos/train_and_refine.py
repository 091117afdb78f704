"""
Training, sampling and refinement
=================================

A small end-to-end run: dataset, evaluator, diffusion sampler, then guided
sampling and Metropolis-Hastings refinement on a held-out object. Takes a
few minutes on one core; scale ``N_OBJECTS`` and the epochs up for real use.
"""

import numpy as np

from graspdiff import bps
from graspdiff import evaluator as ev
from graspdiff import refine as rf
from graspdiff import sampler as sp
from graspdiff import toyworld as tw
from graspdiff.core import denormalize_grasp

N_OBJECTS = 40
hand = tw.ToyGripper()
ds = tw.gen_dataset(N_OBJECTS, 4, 25, seed=0)
print(len(ds.labels), "grasps,", ds.labels.mean().round(3), "positive")

basis = bps.sample_basis(1024, 0.3, seed=0)
feats = bps.encode_many([v.cloud for v in ds.views], basis)
stats = hand.stats(p_scale=0.1)

###############################################################################
# the evaluator sees every labeled grasp

tr = ds.arrays("train", feats)
evm, hist = ev.train_evaluator(
    tr["features"], tr["grasps"], tr["feature_index"], tr["labels"], tr["object_ids"],
    basis, stats, hyper=ev.EvaluatorHyper(lr=1e-3, epochs=5),
)
print("validation", hist["val_metrics"][-1])

###############################################################################
# the sampler sees positives only

pos = ds.arrays("train", feats, positives_only=True)
den, hist = sp.train_sampler(
    pos["features"], pos["grasps"], pos["feature_index"], basis, stats,
    sp.DenoiserConfig(width=64, heads=4, obj_tokens=8),
    sp.SamplerHyper(lr=1e-3, gamma=0.97, batch_size=64, epochs=30),
)
print("loss", hist["loss"][0], "->", hist["loss"][-1])

###############################################################################
# every pipeline on one held-out view

vi = ds.views_in("test")[0]
obj = ds.views[vi].obj
for method in rf.METHODS:
    G, rep = rf.refine_batch(method, den, evm, feats[vi], 20, np.random.default_rng(1))
    print(f"{method:10s} success {tw.success_rate(G, obj, hand):5.1f}%  "
          f"score {np.mean(rep['score_before']):.3f} -> {np.mean(rep['score_after']):.3f}  "
          f"{1000 * rep['timing']['total'] / 20:.0f} ms/grasp")

X = sp.sample_model_space(den, feats[vi], 200, np.random.default_rng(2))
print("diversity", tw.diversity_entropy(denormalize_grasp(X, stats), hand))
