"""Iterative decoder: K modes per agent, a fixed-length segment per pass.

Each iteration adds an iteration embedding, refines the queries through
L_D shared attention layers (lane cross-attention first on the map-aware
path, then per-agent mode self-attention), and reads out step_len points
of (dx, dy, log-variances) through an MLP head. Absolute positions come
from a cumulative sum anchored at the last observed position.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .batching import SceneBatch
from .nn import autodiff as ad
from .nn.blocks import ParameterSet, init_interaction_block, init_mlp2, interaction_block, mlp2
from .scene import ModelConfig

LOG_VAR_MIN = -10.0
LOG_VAR_MAX = 10.0


@dataclass
class DecoderStepOutput:
    deltas: ad.FeatureArray              # (B, A, K, step_len, 2)
    log_vars: ad.FeatureArray            # (B, A, K, step_len, 2), clamped
    query_feats_pre_mlp: ad.FeatureArray  # (B, A, K, D), distillation site


@dataclass
class PredictionSet:
    trajectories: ad.FeatureArray  # (B, A, K, N_T, 2) absolute positions
    deltas: ad.FeatureArray        # (B, A, K, N_T, 2)
    log_vars: ad.FeatureArray      # (B, A, K, N_T, 2)
    confidences: ad.FeatureArray   # (B, A, K), softmax over modes
    step_feats: list = field(default_factory=list)  # I_T pre-MLP query features

    @property
    def variances(self) -> np.ndarray:
        return np.exp(self.log_vars.data)


def init_decoder_params(ps: ParameterSet, cfg: ModelConfig, rng, with_map: bool) -> None:
    D = cfg.D
    if with_map:
        init_mlp2(ps, "rel.querymap", 4, D, D, rng)
    for layer in range(cfg.L_D):
        if with_map:
            init_interaction_block(ps, f"dec{layer}.querymap", D, rng)
        if cfg.use_qqa:
            init_interaction_block(ps, f"dec{layer}.qqa", D, rng)
    ps.add("iter_emb", np.zeros((cfg.I_T, D)))
    init_mlp2(ps, "head", D, D, cfg.step_len * 4, rng)
    init_mlp2(ps, "score", D, D, 1, rng)


def query_map_attention(ps, layer, queries, map_feats, batch: SceneBatch, cfg: ModelConfig, rel):
    """Cross-attention from trajectory queries to in-radius lane features."""
    if map_feats is None:
        raise ValueError("query-map attention requires map features")
    B, A, M = batch.B, batch.A, batch.M
    K, D = cfg.K, cfg.D
    q = ad.reshape(queries, (B * A, K, D))
    kv = ad.reshape(ad.broadcast_to(ad.reshape(map_feats, (B, 1, M, D)), (B, A, M, D)), (B * A, M, D))
    out = interaction_block(ps, f"dec{layer}.querymap", q, kv, batch.querymap_mask, cfg.heads, rel_emb=rel)
    return ad.reshape(out, (B, A, K, D))


def query_query_attention(ps, layer, queries, batch: SceneBatch, cfg: ModelConfig):
    """Self-attention among the K queries of each agent; no cross-agent mixing."""
    B, A = batch.B, batch.A
    K, D = cfg.K, cfg.D
    q = ad.reshape(queries, (B * A, K, D))
    out = interaction_block(ps, f"dec{layer}.qqa", q, q, batch.qqa_mask, cfg.heads)
    return ad.reshape(out, (B, A, K, D))


def decode_step(ps, queries, map_feats, batch: SceneBatch, cfg: ModelConfig, iter_index: int, rel_qm=None):
    """One decoder iteration: returns (DecoderStepOutput, updated queries)."""
    if not 0 <= iter_index < cfg.I_T:
        raise ValueError(f"iter_index {iter_index} outside [0, {cfg.I_T})")
    B, A = batch.B, batch.A
    it = ps["iter_emb"][iter_index]
    q = queries + ad.reshape(it, (1, 1, 1, cfg.D))
    for layer in range(cfg.L_D):
        if map_feats is not None:
            q = query_map_attention(ps, layer, q, map_feats, batch, cfg, rel_qm)
        if cfg.use_qqa:
            q = query_query_attention(ps, layer, q, batch, cfg)
    head = mlp2(ps, "head", q)  # (B,A,K,step_len*4)
    head = ad.reshape(head, (B, A, cfg.K, cfg.step_len, 4))
    deltas = head[:, :, :, :, 0:2]
    log_vars = ad.clip(head[:, :, :, :, 2:4], LOG_VAR_MIN, LOG_VAR_MAX)
    return DecoderStepOutput(deltas, log_vars, q), q


def score_head(ps, queries, cfg: ModelConfig) -> ad.FeatureArray:
    """Per-agent mode confidences: MLP logits -> softmax over K."""
    logits = mlp2(ps, "score", queries)  # (B,A,K,1)
    logits = ad.reshape(logits, queries.shape[:-1])
    return ad.softmax(logits, axis=-1)


def decode(ps, queries, map_feats, batch: SceneBatch, cfg: ModelConfig) -> PredictionSet:
    """Run I_T iterations and assemble absolute trajectories."""
    rel_qm = None
    if map_feats is not None:
        rel_qm = mlp2(ps, "rel.querymap", ad.FeatureArray(batch.rel_querymap_raw))  # (B,A,M,D)
        B, A, M = batch.B, batch.A, batch.M
        rel_qm = ad.broadcast_to(
            ad.reshape(rel_qm, (B, A, 1, M, cfg.D)), (B, A, cfg.K, M, cfg.D)
        )
        rel_qm = ad.reshape(rel_qm, (B * A, cfg.K, M, cfg.D))
    q = queries
    step_deltas, step_logvars, step_feats = [], [], []
    for it in range(cfg.I_T):
        step, q = decode_step(ps, q, map_feats, batch, cfg, it, rel_qm=rel_qm)
        step_deltas.append(step.deltas)
        step_logvars.append(step.log_vars)
        step_feats.append(step.query_feats_pre_mlp)
    deltas = ad.concat(step_deltas, axis=3)      # (B,A,K,N_T,2)
    log_vars = ad.concat(step_logvars, axis=3)
    anchor = batch.last_pos.astype(batch.dtype)[:, :, None, None, :]
    traj = ad.cumsum(deltas, axis=3) + ad.FeatureArray(anchor)
    conf = score_head(ps, q, cfg)
    return PredictionSet(traj, deltas, log_vars, conf, step_feats)
