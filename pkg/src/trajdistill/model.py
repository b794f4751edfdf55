"""Full network assembly: parameter construction and forward passes."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import decoder as dec
from . import encoder as enc
from .batching import SceneBatch
from .nn import autodiff as ad
from .nn.blocks import ParameterSet
from .scene import ModelConfig


@dataclass
class ModelOutput:
    queries: ad.FeatureArray        # (B, A, K, D) fused trajectory queries
    predictions: dec.PredictionSet
    encoder_state: enc.EncoderState


def init_model_params(cfg: ModelConfig, seed: int, with_map: bool, dtype=np.float64) -> ParameterSet:
    """Build a fresh parameter set; the map-free set is a strict subset of
    the map-aware one (same names and shapes for all shared blocks)."""
    ps = ParameterSet(dtype=dtype)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x9E3779B9]))
    enc.init_encoder_params(ps, cfg, rng, with_map)
    dec.init_decoder_params(ps, cfg, rng, with_map)
    return ps


def forward(ps: ParameterSet, batch: SceneBatch, cfg: ModelConfig, use_map: bool) -> ModelOutput:
    """Encode, then iteratively decode; pure given (batch, parameters)."""
    queries, state = enc.encode(ps, batch, cfg, use_map)
    map_feats = state.map_feats if use_map else None
    preds = dec.decode(ps, queries, map_feats, batch, cfg)
    return ModelOutput(queries=queries, predictions=preds, encoder_state=state)


def student_param_names(cfg: ModelConfig) -> set:
    """Names shared between networks (everything except map-related blocks)."""
    probe = init_model_params(cfg, seed=0, with_map=False)
    return set(probe.names())
