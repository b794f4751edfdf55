"""Scene domain types and the relative-representation preprocessing.

Positions are stored as float arrays with boolean validity flags; invalid
entries are zero-filled and the masks are the single source of truth.
All operations here are pure functions of their inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DataError


@dataclass(frozen=True)
class Point2:
    x: float
    y: float

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y], dtype=np.float64)


@dataclass(frozen=True)
class Pose:
    x: float
    y: float
    heading: float


@dataclass
class AgentTrack:
    """One agent: T history points plus an optional N_T-point future.

    history has exactly T rows (padded with invalid entries). Tracks used
    for training or evaluation must have the most recent step valid.
    """

    id: str
    history: np.ndarray          # (T, 2)
    history_valid: np.ndarray    # (T,) bool
    future: np.ndarray | None = None        # (N_T, 2)
    future_valid: np.ndarray | None = None  # (N_T,) bool
    is_focal: bool = False
    type_tag: str = "vehicle"

    def __post_init__(self):
        self.history = np.asarray(self.history, dtype=np.float64)
        self.history_valid = np.asarray(self.history_valid, dtype=bool)
        if self.history.shape != (self.history_valid.shape[0], 2):
            raise DataError(f"track {self.id}: history shape {self.history.shape}")
        if not self.history_valid.any():
            raise DataError(f"track {self.id}: no valid history step")
        if self.future is not None:
            self.future = np.asarray(self.future, dtype=np.float64)
            if self.future_valid is None:
                self.future_valid = np.ones(len(self.future), dtype=bool)
            self.future_valid = np.asarray(self.future_valid, dtype=bool)


@dataclass
class MapPolyline:
    """A lane centerline chunk: L points with validity and headings."""

    id: str
    points: np.ndarray    # (L, 2)
    valid: np.ndarray     # (L,) bool
    headings: np.ndarray  # (L,) radians

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        self.valid = np.asarray(self.valid, dtype=bool)
        self.headings = np.asarray(self.headings, dtype=np.float64)
        if int(self.valid.sum()) < 2:
            raise DataError(f"polyline {self.id}: fewer than 2 valid points")
        if not np.isfinite(self.headings[self.valid]).all():
            raise DataError(f"polyline {self.id}: non-finite headings")

    def reference_pose(self) -> Pose:
        """Middle valid point; used for radius masks and relative embeddings."""
        idx = np.flatnonzero(self.valid)
        i = idx[len(idx) // 2]
        return Pose(float(self.points[i, 0]), float(self.points[i, 1]), float(self.headings[i]))


@dataclass
class DrivableArea:
    polygons: list = field(default_factory=list)  # each (V, 2) array, V >= 3

    def __post_init__(self):
        self.polygons = [np.asarray(p, dtype=np.float64) for p in self.polygons]
        for p in self.polygons:
            if p.shape[0] < 3:
                raise DataError("drivable polygon with fewer than 3 vertices")


@dataclass
class Scene:
    id: str
    agents: list            # list[AgentTrack], exactly one focal
    map_polylines: list     # list[MapPolyline], may be empty
    drivable: DrivableArea = field(default_factory=DrivableArea)

    def __post_init__(self):
        if len(self.agents) < 1:
            raise DataError(f"scene {self.id}: needs at least one agent")
        n_focal = sum(1 for a in self.agents if a.is_focal)
        if n_focal != 1:
            raise DataError(f"scene {self.id}: {n_focal} focal agents, expected 1")

    @property
    def focal_index(self) -> int:
        return next(i for i, a in enumerate(self.agents) if a.is_focal)

    def without_map(self) -> "Scene":
        """The map-free view of this scene (student input purity)."""
        return Scene(self.id, self.agents, [], self.drivable)


@dataclass
class MotionSequence:
    """Displacements between consecutive points plus a pair-validity mask."""

    vectors: np.ndarray  # (n, 2)
    mask: np.ndarray     # (n,) bool


@dataclass(frozen=True)
class ModelConfig:
    T: int = 20
    N_T: int = 30
    K: int = 6
    H: int = 3
    L_E: int = 3
    L_D: int = 3
    I_T: int = 3
    D: int = 64
    heads: int = 4
    d_n: float = 100.0
    step_len: int = 10
    sample_rate: float = 10.0
    L: int = 10
    # ablation switches (all on in the full model)
    use_aata: bool = True
    use_aasa: bool = True
    use_fa: bool = True
    use_qqa: bool = True

    def __post_init__(self):
        if self.I_T * self.step_len != self.N_T:
            raise ValueError(f"I_T*step_len must equal N_T ({self.I_T}*{self.step_len} != {self.N_T})")
        if 2 ** (self.H - 1) > self.T - 1:
            raise ValueError(f"2^(H-1) must not exceed T-1 (H={self.H}, T={self.T})")
        if self.D % self.heads != 0:
            raise ValueError(f"heads must divide D ({self.heads} !| {self.D})")
        if self.K < 1:
            raise ValueError("K must be >= 1")

    def with_iterations(self, i_t: int) -> "ModelConfig":
        if self.N_T % i_t != 0:
            raise ValueError(f"N_T={self.N_T} not divisible by I_T={i_t}")
        return replace(self, I_T=i_t, step_len=self.N_T // i_t)


def _diff_with_mask(points: np.ndarray, valid: np.ndarray) -> MotionSequence:
    vec = points[1:] - points[:-1]
    mask = valid[1:] & valid[:-1]
    vec = np.where(mask[:, None], vec, 0.0)
    return MotionSequence(vectors=vec, mask=mask)


def compute_motion_vectors(track: AgentTrack) -> MotionSequence:
    """Displacements between consecutive history points.

    mask[t] is true only when both endpoints are valid; broken pairs are
    zero-filled. A track with no valid pair yields an all-false mask (such
    tracks are unusable and rejected where a usable track is required).
    """
    return _diff_with_mask(track.history, track.history_valid)


def compute_map_vectors(polyline: MapPolyline) -> MotionSequence:
    """Displacements between consecutive lane points; needs >= 1 valid pair."""
    seq = _diff_with_mask(polyline.points, polyline.valid)
    if not seq.mask.any():
        raise DataError(f"polyline {polyline.id}: no consecutive valid point pair")
    return seq


def relative_pose(a: Pose, b: Pose) -> tuple[float, float, float, float]:
    """(dx, dy, cos dtheta, sin dtheta) of b expressed in a's frame."""
    ca, sa = math.cos(a.heading), math.sin(a.heading)
    px, py = b.x - a.x, b.y - a.y
    dx = ca * px + sa * py
    dy = -sa * px + ca * py
    dt = b.heading - a.heading
    return (dx, dy, math.cos(dt), math.sin(dt))


def agent_heading(track: AgentTrack) -> float:
    """Direction of the most recent valid, nonzero motion vector (0 if none)."""
    seq = compute_motion_vectors(track)
    for t in range(len(seq.mask) - 1, -1, -1):
        if seq.mask[t]:
            vx, vy = seq.vectors[t]
            if abs(vx) > 1e-12 or abs(vy) > 1e-12:
                return math.atan2(vy, vx)
    return 0.0


def step_positions(track: AgentTrack) -> np.ndarray:
    """Position of the agent at each motion step (endpoint of each vector).

    Invalid endpoints fall back to the nearest valid position (backward in
    time first, then forward), so radius masks always have a position.
    """
    pos = track.history
    valid = track.history_valid
    filled = np.empty_like(pos)
    have = np.zeros(len(pos), dtype=bool)
    last = None
    for i in range(len(pos)):
        if valid[i]:
            last = pos[i]
        if last is not None:
            filled[i] = last
            have[i] = True
    nxt = None
    for i in range(len(pos) - 1, -1, -1):
        if valid[i]:
            nxt = pos[i]
        if not have[i]:
            filled[i] = nxt
    return filled[1:].copy()


def last_observed_position(track: AgentTrack) -> np.ndarray:
    """Most recent valid history point (decoding anchor)."""
    idx = np.flatnonzero(track.history_valid)
    return track.history[idx[-1]].copy()
