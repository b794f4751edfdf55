"""Padded scene batches: masks and relative-pose features for the networks.

Scenes of different sizes are padded to the batch maximum with validity
masks; padded agents and lanes are excluded from every attention mask, so
they are exact no-ops through the network. Everything here is a constant
with respect to the parameters — only numpy arrays, no tape.

Relative translation features are scaled by 1/d_n and relative time steps
by 1/(T-2) before entering the embedding MLPs (input conditioning).
"""

from __future__ import annotations

import numpy as np

from .errors import DataError
from .scene import (
    ModelConfig,
    Scene,
    agent_heading,
    compute_map_vectors,
    compute_motion_vectors,
    last_observed_position,
    step_positions,
)

FAR_AWAY = 1.0e9


def hier_key_steps(h: int, n_steps: int) -> np.ndarray:
    """Key indices for hierarchy level h (1-based): stride 2^(h-1) anchored
    at the most recent step, walking backwards."""
    stride = 2 ** (h - 1)
    idx = np.arange(n_steps - 1, -1, -stride)
    return np.sort(idx)


class SceneBatch:
    """Arrays for a list of scenes, padded to the batch maxima."""

    def __init__(self, scenes: list[Scene], cfg: ModelConfig, dtype=np.float64, with_map_inputs=True):
        if not scenes:
            raise DataError("empty batch")
        self.scenes = scenes
        self.cfg = cfg
        self.dtype = np.dtype(dtype)
        self.with_map_inputs = bool(with_map_inputs)
        ft = self.dtype
        T, NT, K, H = cfg.T, cfg.N_T, cfg.K, cfg.H
        S = T - 1  # motion steps per agent
        B = len(scenes)
        A = max(len(s.agents) for s in scenes)
        M = max((len(s.map_polylines) for s in scenes), default=0)
        M = max(M, 1)  # keep map arrays well-formed even for map-free scenes
        self.B, self.A, self.M, self.S = B, A, M, S

        self.motion = np.zeros((B, A, S, 2), dtype=ft)
        self.motion_mask = np.zeros((B, A, S), dtype=bool)
        self.present = np.zeros((B, A), dtype=bool)
        self.usable = np.zeros((B, A), dtype=bool)
        self.step_pos = np.full((B, A, S, 2), FAR_AWAY, dtype=np.float64)
        self.headings = np.zeros((B, A), dtype=np.float64)
        self.last_pos = np.zeros((B, A, 2), dtype=np.float64)
        self.fut = np.zeros((B, A, NT, 2), dtype=ft)
        self.fut_mask = np.zeros((B, A, NT), dtype=bool)
        self.focal = np.zeros(B, dtype=np.int64)

        self.map_vec = np.zeros((B, M, cfg.L - 1, 2), dtype=ft)
        self.map_vec_mask = np.zeros((B, M, cfg.L - 1), dtype=bool)
        self.lane_present = np.zeros((B, M), dtype=bool)
        self.lane_ref = np.zeros((B, M, 3), dtype=np.float64)
        self.lane_ref[:, :, :2] = FAR_AWAY

        for b, scene in enumerate(scenes):
            self.focal[b] = scene.focal_index
            for a, track in enumerate(scene.agents):
                if track.history.shape[0] != T:
                    raise DataError(f"track {track.id}: history length {track.history.shape[0]} != T={T}")
                seq = compute_motion_vectors(track)
                self.present[b, a] = True
                self.usable[b, a] = bool(seq.mask.any())
                self.motion[b, a] = seq.vectors.astype(ft)
                self.motion_mask[b, a] = seq.mask
                self.step_pos[b, a] = step_positions(track)
                self.headings[b, a] = agent_heading(track)
                self.last_pos[b, a] = last_observed_position(track)
                if track.future is not None:
                    n = min(NT, len(track.future))
                    self.fut[b, a, :n] = track.future[:n].astype(ft)
                    self.fut_mask[b, a, :n] = track.future_valid[:n]
            if not self.usable[b, scene.focal_index]:
                raise DataError(f"scene {scene.id}: focal track has no valid motion pair")
            if not with_map_inputs:
                continue
            for m, poly in enumerate(scene.map_polylines):
                if poly.points.shape[0] != cfg.L:
                    raise DataError(f"polyline {poly.id}: {poly.points.shape[0]} points != L={cfg.L}")
                seq = compute_map_vectors(poly)
                self.lane_present[b, m] = True
                self.map_vec[b, m] = seq.vectors.astype(ft)
                self.map_vec_mask[b, m] = seq.mask
                ref = poly.reference_pose()
                self.lane_ref[b, m] = (ref.x, ref.y, ref.heading)

        self.has_map = bool(self.lane_present.any())
        self._build_attention_inputs()

    # ------------------------------------------------------------------
    def _build_attention_inputs(self):
        cfg, ft = self.cfg, self.dtype
        B, A, M, S = self.B, self.A, self.M, self.S
        K, H = cfg.K, cfg.H
        d_n = cfg.d_n

        # temporal: causal x key validity, one row block per (scene, agent)
        causal = np.tril(np.ones((S, S), dtype=bool))
        key_ok = self.motion_mask[:, :, None, :]  # (B,A,1,S)
        tm = causal[None, None] & key_ok & self.usable[:, :, None, None]
        self.temporal_mask = tm.reshape(B * A, S, S)
        dt = (np.arange(S)[None, :] - np.arange(S)[:, None]).astype(ft)  # t_key - t_query
        self.rel_temporal_raw = np.stack(
            [dt / max(S - 1, 1), np.zeros_like(dt), np.ones_like(dt), np.zeros_like(dt)], axis=-1
        )  # (S, S, 4)

        # spatial: per timestep, agents within d_n, both steps valid
        sp = self.step_pos.transpose(0, 2, 1, 3)  # (B,S,A,2)
        d = sp[:, :, None, :, :] - sp[:, :, :, None, :]  # [b,t,i,j] = pos_j - pos_i
        dist2 = (d ** 2).sum(-1)
        valid_t = self.motion_mask.transpose(0, 2, 1)  # (B,S,A)
        ok = valid_t[:, :, :, None] & valid_t[:, :, None, :] & (dist2 <= d_n * d_n)
        self.spatial_mask = ok.reshape(B * S, A, A)
        ch, sh = np.cos(self.headings), np.sin(self.headings)  # (B,A)
        ci = ch[:, None, :, None]
        si = sh[:, None, :, None]
        dxr = ci * d[..., 0] + si * d[..., 1]
        dyr = -si * d[..., 0] + ci * d[..., 1]
        dth = self.headings[:, None, None, :] - self.headings[:, None, :, None]
        rel = np.stack(
            [dxr / d_n, dyr / d_n, np.broadcast_to(np.cos(dth), dxr.shape), np.broadcast_to(np.sin(dth), dxr.shape)],
            axis=-1,
        )
        self.rel_spatial_raw = np.where(ok[..., None], rel, 0.0).reshape(B * S, A, A, 4).astype(ft)

        # feature aggregation: per hierarchy level, strided keys anchored at now
        fa_base = np.zeros((H, S), dtype=bool)
        for h in range(1, H + 1):
            fa_base[h - 1, hier_key_steps(h, S)] = True
        fa = fa_base[None, None] & self.motion_mask[:, :, None, :] & self.usable[:, :, None, None]
        fa = np.repeat(fa[:, :, None, :, :], K, axis=2)  # (B,A,K,H,S)
        self.fa_mask = fa.reshape(B * A, K * H, S)
        dt_fa = (np.arange(S) - (S - 1)).astype(ft) / max(S - 1, 1)
        self.rel_fa_raw = np.stack(
            [dt_fa, np.zeros(S, dtype=ft), np.ones(S, dtype=ft), np.zeros(S, dtype=ft)], axis=-1
        )  # (S, 4)

        # query-query: full within usable agents
        qq = np.zeros((B, A, K, K), dtype=bool)
        qq |= self.usable[:, :, None, None]
        self.qqa_mask = qq.reshape(B * A, K, K)

        if not self.has_map:
            return

        # map-map: lane reference points within d_n
        lr = self.lane_ref
        dl = lr[:, None, :, :2] - lr[:, :, None, :2]  # [b,i,j] = ref_j - ref_i
        ldist2 = (dl ** 2).sum(-1)
        lok = (
            self.lane_present[:, :, None]
            & self.lane_present[:, None, :]
            & (ldist2 <= d_n * d_n)
        )
        self.mapmap_mask = lok
        chl, shl = np.cos(lr[:, :, 2]), np.sin(lr[:, :, 2])
        dxr = chl[:, :, None] * dl[..., 0] + shl[:, :, None] * dl[..., 1]
        dyr = -shl[:, :, None] * dl[..., 0] + chl[:, :, None] * dl[..., 1]
        dth = lr[:, None, :, 2] - lr[:, :, None, 2]
        relm = np.stack([dxr / d_n, dyr / d_n, np.cos(dth), np.sin(dth)], axis=-1)
        self.rel_mapmap_raw = np.where(lok[..., None], relm, 0.0).astype(ft)

        # agent-map: agent step positions against lane references
        dam = lr[:, None, None, :, :2] - self.step_pos[:, :, :, None, :]  # (B,A,S,M,2)
        adist2 = (dam ** 2).sum(-1)
        am_ok = (
            self.motion_mask[:, :, :, None]
            & self.lane_present[:, None, None, :]
            & (adist2 <= d_n * d_n)
            & self.usable[:, :, None, None]
        )
        self.agentmap_mask = am_ok.reshape(B, A * S, M)
        ca = ch[:, :, None, None]
        sa = sh[:, :, None, None]
        dxr = ca * dam[..., 0] + sa * dam[..., 1]
        dyr = -sa * dam[..., 0] + ca * dam[..., 1]
        dth = lr[:, None, None, :, 2] - self.headings[:, :, None, None]
        rela = np.stack(
            [dxr / d_n, dyr / d_n, np.broadcast_to(np.cos(dth), dxr.shape), np.broadcast_to(np.sin(dth), dxr.shape)],
            axis=-1,
        )
        self.rel_agentmap_raw = np.where(am_ok[..., None], rela, 0.0).reshape(B, A * S, M, 4).astype(ft)

        # query-map: agent anchor position against lane references
        dqm = lr[:, None, :, :2] - self.last_pos[:, :, None, :]  # (B,A,M,2)
        qdist2 = (dqm ** 2).sum(-1)
        qm_ok = (
            self.usable[:, :, None]
            & self.lane_present[:, None, :]
            & (qdist2 <= d_n * d_n)
        )
        self.querymap_mask = np.repeat(qm_ok[:, :, None, :], K, axis=2).reshape(B * A, K, M)
        ca = ch[:, :, None]
        sa = sh[:, :, None]
        dxr = ca * dqm[..., 0] + sa * dqm[..., 1]
        dyr = -sa * dqm[..., 0] + ca * dqm[..., 1]
        dth = lr[:, None, :, 2] - self.headings[:, :, None]
        relq = np.stack([dxr / d_n, dyr / d_n, np.cos(dth), np.sin(dth)], axis=-1)
        self.rel_querymap_raw = np.where(qm_ok[..., None], relq, 0.0).astype(ft)

    # ------------------------------------------------------------------
    def loss_agent_weights(self, require_future=True) -> np.ndarray:
        """Per-agent weights realizing mean-over-agents then mean-over-scenes.

        With require_future, agents without a single valid future point are
        excluded (regression/classification); distillation weights only need
        usable tracks.
        """
        eligible = self.usable & self.fut_mask.any(axis=-1) if require_future else self.usable.copy()
        counts = eligible.sum(axis=1)
        w = np.zeros((self.B, self.A), dtype=np.float64)
        for b in range(self.B):
            if counts[b] > 0:
                w[b, eligible[b]] = 1.0 / (counts[b] * self.B)
        return w.astype(self.dtype)
