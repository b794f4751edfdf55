"""Evaluation metrics: minADE, minFDE, miss rate, brier-minFDE, DAC.

All of them are computed per evaluated agent and averaged; by default only
the focal agent of each scene is evaluated. The drivable-area test uses
even-odd ray casting with a half-open edge rule, and points exactly on a
polygon edge count as inside.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .scene import DrivableArea

DEFAULT_MISS_RADIUS = 2.0


# ---------------------------------------------------------------- geometry
def polygon_area(poly: np.ndarray) -> float:
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def points_in_polygon(points: np.ndarray, poly: np.ndarray) -> np.ndarray:
    """Even-odd containment for an array of points; boundary counts inside.

    points: (P, 2); poly: (V, 2) simple closed polygon (not repeated).
    """
    poly = np.asarray(poly, dtype=np.float64)
    if poly.shape[0] < 3 or polygon_area(poly) == 0.0:
        raise DataError("degenerate polygon")
    px = points[:, 0][:, None]
    py = points[:, 1][:, None]
    x1, y1 = poly[:, 0][None, :], poly[:, 1][None, :]
    x2, y2 = np.roll(poly[:, 0], -1)[None, :], np.roll(poly[:, 1], -1)[None, :]

    cross = (x2 - x1) * (py - y1) - (y2 - y1) * (px - x1)
    on_edge = (
        (cross == 0.0)
        & (px >= np.minimum(x1, x2))
        & (px <= np.maximum(x1, x2))
        & (py >= np.minimum(y1, y2))
        & (py <= np.maximum(y1, y2))
    ).any(axis=1)

    straddles = (y1 > py) != (y2 > py)  # half-open in y, skips horizontal edges
    with np.errstate(divide="ignore", invalid="ignore"):
        x_int = x1 + (py - y1) * (x2 - x1) / (y2 - y1)
    crossings = (straddles & (px < x_int)).sum(axis=1)
    return on_edge | (crossings % 2 == 1)


def points_in_drivable(points: np.ndarray, drivable: DrivableArea) -> np.ndarray:
    """Inside the union of the drivable polygons."""
    if not drivable.polygons:
        return np.zeros(len(points), dtype=bool)
    inside = np.zeros(len(points), dtype=bool)
    for poly in drivable.polygons:
        todo = ~inside
        if not todo.any():
            break
        inside[todo] |= points_in_polygon(points[todo], poly)
    return inside


# ---------------------------------------------------------------- metrics
def min_fde(trajectories: np.ndarray, gt: np.ndarray, gt_mask: np.ndarray) -> float:
    """Min over modes of the endpoint displacement; requires a valid endpoint."""
    mask = np.asarray(gt_mask, dtype=bool)
    if not mask[-1]:
        raise DataError("ground-truth endpoint missing")
    d = np.linalg.norm(np.asarray(trajectories)[:, -1] - np.asarray(gt)[-1], axis=-1)
    return float(d.min())


def endpoint_best_mode(trajectories: np.ndarray, gt: np.ndarray) -> int:
    d = np.linalg.norm(np.asarray(trajectories)[:, -1] - np.asarray(gt)[-1], axis=-1)
    return int(np.argmin(d))


def min_ade(trajectories: np.ndarray, gt: np.ndarray, gt_mask: np.ndarray) -> float:
    """Min over modes of the mean displacement over valid points."""
    mask = np.asarray(gt_mask, dtype=bool)
    if not mask.any():
        raise DataError("no valid ground-truth point")
    d = np.linalg.norm(np.asarray(trajectories) - np.asarray(gt)[None], axis=-1)  # (K, N_T)
    ade = d[:, mask].mean(axis=-1)
    return float(ade.min())


def is_miss(trajectories: np.ndarray, gt: np.ndarray, gt_mask: np.ndarray, radius: float) -> bool:
    """Miss when every mode's endpoint is farther than `radius` from GT."""
    return min_fde(trajectories, gt, gt_mask) > radius


def brier_min_fde(trajectories: np.ndarray, confidences: np.ndarray, gt: np.ndarray, gt_mask: np.ndarray) -> float:
    """minFDE plus (1-p)^2, p the confidence of the endpoint-best mode."""
    fde = min_fde(trajectories, gt, gt_mask)
    p = float(np.asarray(confidences)[endpoint_best_mode(trajectories, gt)])
    return fde + (1.0 - p) ** 2


def dac(trajectories: np.ndarray, drivable: DrivableArea) -> float:
    """Fraction of the K trajectories whose every point is drivable."""
    traj = np.asarray(trajectories)
    K, n, _ = traj.shape
    inside = points_in_drivable(traj.reshape(K * n, 2), drivable).reshape(K, n)
    return float(inside.all(axis=1).mean())


@dataclass
class MetricReport:
    minADE: float
    minFDE: float
    MR: float
    brier_minFDE: float
    DAC: float
    n_agents: int
    K: int = 6

    def lines(self) -> list[str]:
        k = self.K
        return [
            f"minADE_{k}={self.minADE:.6f}",
            f"minFDE_{k}={self.minFDE:.6f}",
            f"MR_{k}={self.MR:.6f}",
            f"brier_minFDE_{k}={self.brier_minFDE:.6f}",
            f"DAC_{k}={self.DAC:.6f}",
            f"n_agents={self.n_agents}",
        ]

    def format(self) -> str:
        return "\n".join(self.lines()) + "\n"

    @classmethod
    def parse(cls, text: str) -> "MetricReport":
        kv = {}
        for line in text.strip().splitlines():
            key, _, val = line.partition("=")
            kv[key.strip()] = val.strip()
        k = next(int(key.split("_")[-1]) for key in kv if key.startswith("minADE_"))
        return cls(
            minADE=float(kv[f"minADE_{k}"]),
            minFDE=float(kv[f"minFDE_{k}"]),
            MR=float(kv[f"MR_{k}"]),
            brier_minFDE=float(kv[f"brier_minFDE_{k}"]),
            DAC=float(kv[f"DAC_{k}"]),
            n_agents=int(kv["n_agents"]),
            K=k,
        )


@dataclass
class AgentMetrics:
    scene_id: str
    agent_id: str
    minADE: float
    minFDE: float
    miss: bool
    brier_minFDE: float
    dac: float


def aggregate(per_agent: list, k: int = 6) -> MetricReport:
    if not per_agent:
        raise DataError("no agents evaluated")
    return MetricReport(
        minADE=float(np.mean([m.minADE for m in per_agent])),
        minFDE=float(np.mean([m.minFDE for m in per_agent])),
        MR=float(np.mean([m.miss for m in per_agent])),
        brier_minFDE=float(np.mean([m.brier_minFDE for m in per_agent])),
        DAC=float(np.mean([m.dac for m in per_agent])),
        n_agents=len(per_agent),
        K=k,
    )


def evaluate_agent(trajectories, confidences, gt, gt_mask, drivable, scene_id, agent_id,
                   miss_radius=DEFAULT_MISS_RADIUS) -> AgentMetrics:
    return AgentMetrics(
        scene_id=scene_id,
        agent_id=agent_id,
        minADE=min_ade(trajectories, gt, gt_mask),
        minFDE=min_fde(trajectories, gt, gt_mask),
        miss=is_miss(trajectories, gt, gt_mask, miss_radius),
        brier_minFDE=brier_min_fde(trajectories, confidences, gt, gt_mask),
        dac=dac(trajectories, drivable),
    )
