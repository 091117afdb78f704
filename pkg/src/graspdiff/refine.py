"""Evaluator-guided diffusion and Metropolis-Hastings grasp refinement."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from . import evaluator as ev
from . import sampler as sp
from .core import Grasp, GraspDiffError, array_to_grasps, denormalize_grasp, normalize_grasp

METHODS = ("sampler", "esr1", "esr2", "egd", "egd+esr1", "egd+esr2")


class ModelMismatch(GraspDiffError):
    pass


class UnknownMethod(GraspDiffError):
    pass


@dataclass
class ProposalConfig:
    """Gaussian proposal widths (meters, unitless, radians) and iteration counts."""

    sigma_p: float = 0.01
    sigma_r: float = 0.05
    sigma_q: float = 0.05
    iterations: int = 20
    stage1_iterations: int = 10
    stage2_iterations: int = 10

    def __post_init__(self):
        if min(self.sigma_p, self.sigma_r, self.sigma_q) < 0:
            raise ValueError("proposal widths must be nonnegative")
        if min(self.iterations, self.stage1_iterations, self.stage2_iterations) < 0:
            raise ValueError("iteration counts must be nonnegative")

    def sigmas(self, k: int) -> np.ndarray:
        return np.concatenate([np.full(3, self.sigma_p), np.full(6, self.sigma_r), np.full(k, self.sigma_q)])


@dataclass
class GuidanceConfig:
    lam: float = 0.5

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("guidance strength must be nonnegative")


def guidance_weight(T: int, t: int) -> float:
    """Time modulation log(T - t + 1); zero at the first reverse step t = T."""
    return math.log(T - t + 1)


def check_compatible(denoiser: sp.DenoiserModel, evaluator: ev.EvaluatorModel) -> None:
    if denoiser.basis != evaluator.basis:
        raise ModelMismatch("sampler and evaluator use different BPS bases")
    if denoiser.stats != evaluator.stats:
        raise ModelMismatch("sampler and evaluator use different normalization")


def egd_sample_model_space(denoiser, evaluator, f_O, n: int, lam: float, rng: np.random.Generator) -> np.ndarray:
    check_compatible(denoiser, evaluator)
    T = denoiser.schedule.T

    def guide(g_t, t):
        w = guidance_weight(T, t)
        if w == 0.0:
            return None
        return lam * w * ev.grad_log_score(evaluator, g_t, f_O)

    return sp.sample_model_space(denoiser, f_O, n, rng, guide_fn=guide)


def egd_sample(denoiser, evaluator, f_O, n: int, lam: float, rng: np.random.Generator) -> list[Grasp]:
    """Reverse diffusion whose step means are pushed along the evaluator's log-score gradient."""
    X = egd_sample_model_space(denoiser, evaluator, f_O, n, lam, rng)
    return array_to_grasps(denormalize_grasp(X, denoiser.stats)) if n else []


# ------------------------------------------------------------- MH refinement


def mh_accept(score_old, score_new, rng: np.random.Generator):
    """Accept where alpha = score_new / score_old >= u, u ~ U[0, 1]."""
    score_old = np.asarray(score_old, dtype=np.float64)
    score_new = np.asarray(score_new, dtype=np.float64)
    alpha = score_new / score_old
    u = rng.random(alpha.shape)
    return alpha >= u, alpha


def metropolis_refine(score_fn, G0, sigmas, iterations: int, rng: np.random.Generator, mask=None, trace_out=None, proposals_out=None):
    """Run MH chains on rows of ``G0`` (n, D) with Gaussian steps of per-coordinate ``sigmas``.

    ``score_fn`` maps (n, D) to success probabilities. ``mask`` zeroes proposal
    coordinates that are frozen. Returns the final states and a score trace of
    shape (iterations + 1, n) holding the score of the current state.
    """
    G = np.array(G0, dtype=np.float64, copy=True)
    if G.ndim == 1:
        G = G[None, :]
    sig = np.asarray(sigmas, dtype=np.float64)
    if mask is not None:
        sig = sig * np.asarray(mask, dtype=np.float64)
    s = np.asarray(score_fn(G), dtype=np.float64)
    trace = [s.copy()]
    n_acc = np.zeros(G.shape[0], dtype=int)
    for _ in range(iterations):
        dg = rng.standard_normal(G.shape) * sig
        if proposals_out is not None:
            proposals_out.append(dg)
        cand = G + dg
        s_new = np.asarray(score_fn(cand), dtype=np.float64)
        acc, _ = mh_accept(s, s_new, rng)
        G[acc] = cand[acc]
        s[acc] = s_new[acc]
        n_acc += acc
        trace.append(s.copy())
    trace = np.stack(trace)
    if trace_out is not None:
        trace_out["acceptance"] = n_acc / max(iterations, 1)
    return G, trace


def _physical_scorer(evaluator: ev.EvaluatorModel, f_O):
    stats = evaluator.stats

    def score_fn(G):
        # joint proposals are clamped into the limits before scoring
        X, _ = normalize_grasp(G, stats)
        return ev.score_model_space(evaluator, X, f_O)

    return score_fn


def _clamp_q(G, stats):
    G = np.array(G, copy=True)
    G[:, 9:] = np.clip(G[:, 9:], stats.q_lo, stats.q_hi)
    return G


def _as_batch(g):
    if isinstance(g, Grasp):
        return g.flatten()[None, :], True
    G = np.asarray(g, dtype=np.float64)
    return (G[None, :], True) if G.ndim == 1 else (G, False)


def esr1(evaluator: ev.EvaluatorModel, g, f_O, cfg: ProposalConfig, rng: np.random.Generator, proposals_out=None):
    """Refine all of p, r, q jointly. Accepts a Grasp or an (n, 9+k) array."""
    G, single = _as_batch(g)
    k = G.shape[1] - 9
    Gf, trace = metropolis_refine(
        _physical_scorer(evaluator, f_O), G, cfg.sigmas(k), cfg.iterations, rng, proposals_out=proposals_out
    )
    Gf = _clamp_q(Gf, evaluator.stats)
    if single:
        return Grasp.from_vector(Gf[0]), trace[:, 0]
    return Gf, trace


def esr2(evaluator: ev.EvaluatorModel, g, f_O, cfg: ProposalConfig, rng: np.random.Generator, proposals_out=None):
    """Refine the pose (p, r) first, then the joints q."""
    G, single = _as_batch(g)
    k = G.shape[1] - 9
    score_fn = _physical_scorer(evaluator, f_O)
    pose_mask = np.concatenate([np.ones(9), np.zeros(k)])
    G1, tr1 = metropolis_refine(score_fn, G, cfg.sigmas(k), cfg.stage1_iterations, rng, mask=pose_mask, proposals_out=proposals_out)
    G2, tr2 = metropolis_refine(score_fn, G1, cfg.sigmas(k), cfg.stage2_iterations, rng, mask=1.0 - pose_mask, proposals_out=proposals_out)
    trace = np.concatenate([tr1, tr2[1:]])
    G2 = _clamp_q(G2, evaluator.stats)
    if single:
        return Grasp.from_vector(G2[0]), trace[:, 0]
    return G2, trace


# ----------------------------------------------------------------- pipelines


def refine_batch(method: str, denoiser, evaluator, f_O, n: int, rng: np.random.Generator, proposal: ProposalConfig | None = None, guidance: GuidanceConfig | None = None, grasps=None) -> tuple[np.ndarray, dict]:
    """Run a named sampling/refinement pipeline.

    ``method`` is one of :data:`METHODS`. ESR-only methods refine ``grasps``
    when given, otherwise fresh sampler output. Returns physical grasps
    (n, 9+k) and a report with evaluator scores before/after and per-stage
    wall-clock seconds.
    """
    if method not in METHODS:
        raise UnknownMethod(f"unknown method {method!r}; choose from {', '.join(METHODS)}")
    proposal = proposal or ProposalConfig()
    guidance = guidance or GuidanceConfig()
    check_compatible(denoiser, evaluator)
    report: dict = {"method": method, "n": n, "timing": {}}
    stats = denoiser.stats

    t0 = time.perf_counter()
    if grasps is not None:
        G = np.atleast_2d(np.asarray(grasps, dtype=np.float64))
    elif method.startswith("egd"):
        G = denormalize_grasp(egd_sample_model_space(denoiser, evaluator, f_O, n, guidance.lam, rng), stats)
    else:
        G = denormalize_grasp(sp.sample_model_space(denoiser, f_O, n, rng), stats)
    report["timing"]["sample" if not method.startswith("egd") else "egd"] = time.perf_counter() - t0

    if len(G) == 0:
        report["score_before"] = report["score_after"] = []
        return G.reshape(0, stats.dim), report

    scorer = _physical_scorer(evaluator, f_O)
    before = scorer(G)
    report["score_before"] = before.tolist()
    stage = method.split("+")[-1]
    if stage in ("esr1", "esr2"):
        t1 = time.perf_counter()
        G, trace = (esr1 if stage == "esr1" else esr2)(evaluator, G, f_O, proposal, rng)
        report["timing"][stage] = time.perf_counter() - t1
        report["trace_mean"] = trace.mean(axis=1).tolist()
    report["score_after"] = scorer(G).tolist()
    report["timing"]["total"] = time.perf_counter() - t0
    return G, report
