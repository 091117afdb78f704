"""Saving and loading trained models through the versioned weights file."""

from __future__ import annotations

from dataclasses import asdict

import numpy as np

from . import nn
from .bps import BasisSet
from .core import NormalizationStats
from .evaluator import EvaluatorConfig, EvaluatorModel
from .io import WeightsFormatError, load_weights, save_weights
from .sampler import DenoiserConfig, DenoiserModel

_BASIS_KEY = "__basis__"


def _meta(kind, model, extra):
    meta = {
        "kind": kind,
        "basis": {"seed": model.basis.seed, "radius": model.basis.radius, "size": model.basis.size},
        "stats": model.stats.to_dict(),
        "trained": bool(model.trained),
    }
    if extra:
        meta["extra"] = extra
    return meta


def _tensors(model):
    tensors = dict(model.store.params)
    tensors[_BASIS_KEY] = model.basis.basis
    return tensors


def _split(path, kind):
    tensors, meta = load_weights(path)
    if meta.get("kind") != kind:
        raise WeightsFormatError(f"{path}: holds a {meta.get('kind')!r} model, expected {kind!r}")
    pts = tensors.pop(_BASIS_KEY).astype(np.float64)
    basis = BasisSet(pts, int(meta["basis"]["seed"]), float(meta["basis"]["radius"]))
    stats = NormalizationStats.from_dict(meta["stats"])
    return tensors, meta, basis, stats


def save_denoiser(path, model: DenoiserModel, extra: dict | None = None) -> None:
    meta = _meta("denoiser", model, extra)
    meta["config"] = asdict(model.config)
    save_weights(path, _tensors(model), meta)


def load_denoiser(path) -> DenoiserModel:
    tensors, meta, basis, stats = _split(path, "denoiser")
    return DenoiserModel(nn.ParamStore(tensors), DenoiserConfig(**meta["config"]), basis, stats, trained=meta["trained"])


def save_evaluator(path, model: EvaluatorModel, extra: dict | None = None) -> None:
    meta = _meta("evaluator", model, extra)
    meta["config"] = model.config.to_dict()
    save_weights(path, _tensors(model), meta)


def load_evaluator(path) -> EvaluatorModel:
    tensors, meta, basis, stats = _split(path, "evaluator")
    return EvaluatorModel(nn.ParamStore(tensors), EvaluatorConfig.from_dict(meta["config"]), basis, stats, trained=meta["trained"])


def read_meta(path) -> dict:
    return load_weights(path)[1]
