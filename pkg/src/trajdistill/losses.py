"""Training losses: winner-take-all matching, Gaussian NLL, mode
cross-entropy, and feature-alignment distillation.

Matching is a constant with respect to the parameters (the selected index
does not backpropagate); the regression loss sums over the valid points of
the matched mode per agent, then averages over agents of a scene and over
scenes of a batch. Distillation treats the reference (teacher) features as
constants. "L2 distance" is the unsquared Euclidean norm by default, with
a squared variant behind a switch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn import autodiff as ad

LOG_2PI = float(np.log(2.0 * np.pi))
CONF_FLOOR = 1e-12


@dataclass
class MatchResult:
    """Per-agent best mode (first index wins ties) and its mean L2 error."""

    indices: np.ndarray  # (..., ) int
    ade: np.ndarray      # (..., ) meters; inf where no valid future point


def match_best_mode(trajectories: np.ndarray, gt: np.ndarray, gt_mask: np.ndarray) -> MatchResult:
    """Mode minimizing mean displacement over valid future points.

    trajectories: (..., K, N_T, 2); gt: (..., N_T, 2); gt_mask: (..., N_T).
    """
    traj = np.asarray(trajectories, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    mask = np.asarray(gt_mask, dtype=bool)
    d = np.linalg.norm(traj - gt[..., None, :, :], axis=-1)  # (..., K, N_T)
    m = mask[..., None, :]
    count = m.sum(axis=-1)  # (..., K)
    s = (d * m).sum(axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        ade = np.where(count > 0, s / np.maximum(count, 1), np.inf)
    idx = np.argmin(ade, axis=-1)
    best = np.take_along_axis(ade, idx[..., None], axis=-1)[..., 0]
    return MatchResult(indices=idx, ade=best)


def _gather_mode(x: ad.FeatureArray, idx: np.ndarray) -> ad.FeatureArray:
    """Select one mode per agent: (B,A,K,...) -> (B,A,...)."""
    B, A = x.shape[0], x.shape[1]
    tail = x.shape[3:]
    full = np.broadcast_to(idx.reshape(B, A, 1, *([1] * len(tail))), (B, A, 1, *tail)).copy()
    out = ad.take_along(x, full, axis=2)
    return ad.reshape(out, (B, A, *tail))


def nll_loss(trajectories, log_vars, gt, gt_mask, match: MatchResult, agent_weights) -> ad.FeatureArray:
    """Negative log-likelihood of the matched mode under diagonal Gaussians.

    Summed over the valid points of each agent's matched trajectory, then
    weighted by agent_weights (which encode the per-scene agent average).
    """
    traj = ad.as_feature(trajectories)
    lv = ad.as_feature(log_vars)
    mu = _gather_mode(traj, match.indices)   # (B,A,N_T,2)
    lvm = _gather_mode(lv, match.indices)
    res = mu - ad.FeatureArray(np.asarray(gt))
    point = ad.asum(
        0.5 * lvm + 0.5 * (res * res * ad.exp(-lvm)), axis=-1
    ) + LOG_2PI  # (B,A,N_T)
    masked = point * np.asarray(gt_mask, dtype=traj.dtype)
    per_agent = ad.asum(masked, axis=-1)  # (B,A)
    return ad.asum(per_agent * np.asarray(agent_weights))


def cls_loss(confidences, match: MatchResult, agent_weights) -> ad.FeatureArray:
    """Cross-entropy pushing the matched mode's confidence up."""
    conf = ad.as_feature(confidences)
    picked = _gather_mode(conf, match.indices)  # (B,A)
    ce = -ad.log(ad.maximum_const(picked, CONF_FLOOR))
    return ad.asum(ce * np.asarray(agent_weights))


def _pair_distance(delta: ad.FeatureArray, squared: bool) -> ad.FeatureArray:
    if squared:
        return ad.asum(delta * delta, axis=-1)
    return ad.l2norm_last(delta)


def kd_encoder_loss(student_queries, teacher_queries, agent_weights, squared=False) -> ad.FeatureArray:
    """Feature alignment of fused trajectory queries, averaged per query pair.

    teacher_queries is a plain array (no gradient flows into the teacher).
    """
    s = ad.as_feature(student_queries)
    t = np.asarray(teacher_queries)
    if s.shape != t.shape:
        raise ValueError(f"query shape mismatch: student {s.shape} vs teacher {t.shape}")
    K = s.shape[2]
    d = _pair_distance(s - ad.FeatureArray(t), squared)  # (B,A,K)
    per_agent = ad.asum(d, axis=-1) * (1.0 / K)
    return ad.asum(per_agent * np.asarray(agent_weights))


def kd_decoder_loss(student_step_feats, teacher_step_feats, agent_weights, squared=False) -> ad.FeatureArray:
    """Alignment of per-iteration pre-readout query features (mean over
    iterations of the per-pair mean)."""
    if len(student_step_feats) != len(teacher_step_feats):
        raise ValueError(
            f"iteration count mismatch: {len(student_step_feats)} vs {len(teacher_step_feats)}"
        )
    total = None
    for s, t in zip(student_step_feats, teacher_step_feats):
        term = kd_encoder_loss(s, t, agent_weights, squared=squared)
        total = term if total is None else total + term
    return total * (1.0 / len(student_step_feats))


def total_loss(reg, cls, kd, alpha=1.0, beta=1.0, gamma=1.0) -> ad.FeatureArray:
    """Weighted sum of the components; kd enters only when gamma != 0."""
    out = alpha * ad.as_feature(reg) + beta * ad.as_feature(cls)
    if kd is not None and gamma != 0.0:
        out = out + gamma * ad.as_feature(kd)
    return out
