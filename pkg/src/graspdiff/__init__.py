"""Diffusion grasp sampling with evaluator guidance and MH refinement, on numpy."""

from .bps import BasisSet, EmptyCloud, encode, encode_brute, sample_basis
from .core import (
    DegenerateRotation,
    Grasp,
    GraspDiffError,
    NormalizationStats,
    NotARotation,
    ShapeMismatch,
    denormalize_grasp,
    matrix_to_rot6d,
    normalize_grasp,
    rot6d_to_matrix,
)
from .evaluator import (
    EvaluatorConfig,
    EvaluatorHyper,
    EvaluatorModel,
    FreqConfig,
    ablation_report,
    bce_loss,
    evaluate,
    freq_encode,
    grad_log_score,
    train_evaluator,
)
from .refine import GuidanceConfig, ProposalConfig, egd_sample, esr1, esr2, refine_batch
from .sampler import (
    DenoiserConfig,
    DenoiserModel,
    NoiseSchedule,
    SamplerHyper,
    make_schedule,
    predict_noise,
    q_sample,
    reverse_step,
    sample,
    train_sampler,
)

__version__ = "0.1.0"
