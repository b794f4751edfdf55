"""Hierarchical encoder: context modelling and query aggregation/fusion.

The map-aware network interleaves [lane-lane -> agent-lane -> temporal ->
spatial -> feature aggregation] per layer; the map-free network drops the
two lane blocks but shares names and shapes for everything else, so its
parameter set is a strict subset of the map-aware one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .batching import SceneBatch
from .nn import autodiff as ad
from .nn.blocks import (
    ParameterSet,
    init_interaction_block,
    init_linear,
    init_mlp2,
    interaction_block,
    maxpool_polyline,
    mlp2,
)
from .scene import ModelConfig

MAP_SITES = ("mapmap", "agentmap")
AGENT_SITES = ("temporal", "spatial", "fa")


@dataclass
class EncoderState:
    """Intermediate activations carried through the encoder layers."""

    agent_feats: ad.FeatureArray        # (B, A, S, D)
    hier_queries: ad.FeatureArray       # (B, A, K, H, D)
    map_feats: ad.FeatureArray | None   # (B, M, D) or None on the map-free path
    layer: int = 0


def init_encoder_params(ps: ParameterSet, cfg: ModelConfig, rng, with_map: bool) -> None:
    D = cfg.D
    init_mlp2(ps, "embed.agent", 2, D, D, rng)
    if with_map:
        init_mlp2(ps, "embed.map", 2, D, D, rng)
    sites = (MAP_SITES + AGENT_SITES) if with_map else AGENT_SITES
    for site in sites:
        init_mlp2(ps, f"rel.{site}", 4, D, D, rng)
    for layer in range(cfg.L_E):
        for site in sites:
            init_interaction_block(ps, f"enc{layer}.{site}", D, rng)
    bound = 1.0 / np.sqrt(D)
    ps.add("hier_seeds", rng.uniform(-bound, bound, size=(cfg.K, cfg.H, D)))
    if cfg.use_fa:
        init_mlp2(ps, "fuse", cfg.H * D, D, D, rng)
    else:
        # aggregation-off variant: most recent agent feature + K mode seeds
        ps.add("mode_seeds", rng.uniform(-bound, bound, size=(cfg.K, D)))
        init_linear(ps, "faoff", 2 * D, D, rng)


def embed_inputs(ps: ParameterSet, batch: SceneBatch, cfg: ModelConfig, use_map: bool) -> EncoderState:
    """Project motion vectors to feature space; pool map point features."""
    B, A, S = batch.B, batch.A, batch.S
    agent = mlp2(ps, "embed.agent", ad.FeatureArray(batch.motion))  # (B,A,S,D)
    map_feats = None
    if use_map:
        pt = mlp2(ps, "embed.map", ad.FeatureArray(batch.map_vec))  # (B,M,L-1,D)
        map_feats = maxpool_polyline(pt, batch.map_vec_mask, allow_empty=True)
    seeds = ps["hier_seeds"]
    hier = ad.broadcast_to(ad.reshape(seeds, (1, 1, cfg.K, cfg.H, cfg.D)), (B, A, cfg.K, cfg.H, cfg.D))
    return EncoderState(agent_feats=agent, hier_queries=hier, map_feats=map_feats)


def _site_rel_embeddings(ps: ParameterSet, batch: SceneBatch, cfg: ModelConfig, use_map: bool) -> dict:
    """Relative-pose embeddings per attention site, computed once per pass."""
    T = {}
    B, A, S, M = batch.B, batch.A, batch.S, batch.M
    D, K, H = cfg.D, cfg.K, cfg.H
    if cfg.use_aata:
        e = mlp2(ps, "rel.temporal", ad.FeatureArray(batch.rel_temporal_raw))  # (S,S,D)
        T["temporal"] = ad.broadcast_to(ad.reshape(e, (1, S, S, D)), (B * A, S, S, D))
    if cfg.use_aasa:
        T["spatial"] = mlp2(ps, "rel.spatial", ad.FeatureArray(batch.rel_spatial_raw))
    if cfg.use_fa:
        e = mlp2(ps, "rel.fa", ad.FeatureArray(batch.rel_fa_raw))  # (S,D)
        T["fa"] = ad.broadcast_to(ad.reshape(e, (1, 1, S, D)), (B * A, K * H, S, D))
    if use_map:
        T["mapmap"] = mlp2(ps, "rel.mapmap", ad.FeatureArray(batch.rel_mapmap_raw))
        T["agentmap"] = mlp2(ps, "rel.agentmap", ad.FeatureArray(batch.rel_agentmap_raw))
    return T


def map_map_attention(ps, state: EncoderState, batch: SceneBatch, cfg: ModelConfig, rel) -> EncoderState:
    if state.map_feats is None:
        raise ValueError("map-map attention requires map features")
    m = interaction_block(
        ps, f"enc{state.layer}.mapmap", state.map_feats, state.map_feats,
        batch.mapmap_mask, cfg.heads, rel_emb=rel,
    )
    return EncoderState(state.agent_feats, state.hier_queries, m, state.layer)


def agent_map_attention(ps, state: EncoderState, batch: SceneBatch, cfg: ModelConfig, rel) -> EncoderState:
    if state.map_feats is None:
        raise ValueError("agent-map attention requires map features")
    B, A, S = batch.B, batch.A, batch.S
    q = ad.reshape(state.agent_feats, (B, A * S, cfg.D))
    out = interaction_block(
        ps, f"enc{state.layer}.agentmap", q, state.map_feats,
        batch.agentmap_mask, cfg.heads, rel_emb=rel,
    )
    agent = ad.reshape(out, (B, A, S, cfg.D))
    return EncoderState(agent, state.hier_queries, state.map_feats, state.layer)


def agent_agent_temporal(ps, state: EncoderState, batch: SceneBatch, cfg: ModelConfig, rel) -> EncoderState:
    B, A, S = batch.B, batch.A, batch.S
    x = ad.reshape(state.agent_feats, (B * A, S, cfg.D))
    out = interaction_block(
        ps, f"enc{state.layer}.temporal", x, x, batch.temporal_mask, cfg.heads, rel_emb=rel
    )
    agent = ad.reshape(out, (B, A, S, cfg.D))
    return EncoderState(agent, state.hier_queries, state.map_feats, state.layer)


def agent_agent_spatial(ps, state: EncoderState, batch: SceneBatch, cfg: ModelConfig, rel) -> EncoderState:
    B, A, S = batch.B, batch.A, batch.S
    x = ad.transpose(state.agent_feats, (0, 2, 1, 3))  # (B,S,A,D)
    x = ad.reshape(x, (B * S, A, cfg.D))
    out = interaction_block(
        ps, f"enc{state.layer}.spatial", x, x, batch.spatial_mask, cfg.heads, rel_emb=rel
    )
    agent = ad.transpose(ad.reshape(out, (B, S, A, cfg.D)), (0, 2, 1, 3))
    return EncoderState(agent, state.hier_queries, state.map_feats, state.layer)


def feature_aggregation(ps, state: EncoderState, batch: SceneBatch, cfg: ModelConfig, rel) -> EncoderState:
    B, A, S = batch.B, batch.A, batch.S
    K, H, D = cfg.K, cfg.H, cfg.D
    q = ad.reshape(state.hier_queries, (B * A, K * H, D))
    kv = ad.reshape(state.agent_feats, (B * A, S, D))
    out = interaction_block(ps, f"enc{state.layer}.fa", q, kv, batch.fa_mask, cfg.heads, rel_emb=rel)
    hier = ad.reshape(out, (B, A, K, H, D))
    return EncoderState(state.agent_feats, hier, state.map_feats, state.layer)


def fuse_queries(ps, state: EncoderState, batch: SceneBatch, cfg: ModelConfig) -> ad.FeatureArray:
    """Concatenate the H hierarchical queries per mode and compress to D."""
    B, A = batch.B, batch.A
    flat = ad.reshape(state.hier_queries, (B, A, cfg.K, cfg.H * cfg.D))
    return mlp2(ps, "fuse", flat)


def _recent_feature_queries(ps, state: EncoderState, batch: SceneBatch, cfg: ModelConfig) -> ad.FeatureArray:
    """Aggregation-off fallback: latest agent feature joined with mode seeds."""
    B, A, S = batch.B, batch.A, batch.S
    K, D = cfg.K, cfg.D
    last = np.zeros((B, A), dtype=np.int64)
    for b in range(B):
        for a in range(A):
            idx = np.flatnonzero(batch.motion_mask[b, a])
            last[b, a] = idx[-1] if len(idx) else 0
    idx_full = np.broadcast_to(last[:, :, None, None], (B, A, 1, D)).copy()
    recent = ad.take_along(state.agent_feats, idx_full, axis=2)  # (B,A,1,D)
    recent = ad.broadcast_to(recent, (B, A, K, D))
    seeds = ad.broadcast_to(ad.reshape(ps["mode_seeds"], (1, 1, K, D)), (B, A, K, D))
    joint = ad.concat([recent, seeds], axis=-1)
    return ad.matmul(joint, ps["faoff.w"]) + ps["faoff.b"]


def encode(ps: ParameterSet, batch: SceneBatch, cfg: ModelConfig, use_map: bool):
    """Run L_E encoder layers and fuse hierarchical queries.

    Returns (queries (B,A,K,D), final EncoderState).
    """
    if use_map and not batch.has_map:
        raise ValueError("use_map requested on a batch with no map polylines")
    state = embed_inputs(ps, batch, cfg, use_map)
    rel = _site_rel_embeddings(ps, batch, cfg, use_map)
    for layer in range(cfg.L_E):
        state.layer = layer
        if use_map:
            state = map_map_attention(ps, state, batch, cfg, rel["mapmap"])
            state = agent_map_attention(ps, state, batch, cfg, rel["agentmap"])
        if cfg.use_aata:
            state = agent_agent_temporal(ps, state, batch, cfg, rel["temporal"])
        if cfg.use_aasa:
            state = agent_agent_spatial(ps, state, batch, cfg, rel["spatial"])
        if cfg.use_fa:
            state = feature_aggregation(ps, state, batch, cfg, rel["fa"])
    if cfg.use_fa:
        queries = fuse_queries(ps, state, batch, cfg)
    else:
        queries = _recent_feature_queries(ps, state, batch, cfg)
    return queries, state
