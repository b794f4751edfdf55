"""Procedural driving scenes: lane networks, drivable corridors, and
lane-following agents, all deterministic in the scenario seed.

Geometry conventions: right-hand traffic, lane width 3.5 m, drivable
corridor width 4.0 m, map polylines sampled at 2.0 m nominal spacing.
Agents follow a sampled route at a piecewise-accelerating speed profile
with optional positional noise and occlusion of the oldest history steps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError
from .scene import AgentTrack, DrivableArea, MapPolyline, Scene

LANE_WIDTH = 3.5
CORRIDOR_HALF = 2.0
MAP_SPACING = 2.0
DENSE_SPACING = 0.25
JUNCTION_HALF = 6.0
ARM_LEN = 40.0
STRAIGHT_HALF = 50.0
CURVE_RADIUS = 45.0
LANE_CHANGE_LEN = 25.0
MAX_ACCEL = 1.5
SPEED_RANGE = (5.0, 10.0)
SPEED_CLIP = (2.0, 13.0)

LAYOUTS = ("straight", "curve", "t_junction", "crossroads")
MANEUVERS = ("keep_lane", "turn_left", "turn_right", "lane_change")
_MANEUVER_RANK = {"keep_lane": 1, "lane_change": 2, "turn_right": 3, "turn_left": 3}


@dataclass
class ScenarioSpec:
    seed: int
    layout: str = "straight"
    n_agents: int = 3
    noise_std: float = 0.0
    maneuver_mix: dict = field(
        default_factory=lambda: {"keep_lane": 0.4, "turn_left": 0.2, "turn_right": 0.2, "lane_change": 0.2}
    )
    T: int = 20
    N_T: int = 30
    sample_rate: float = 10.0
    occlusion_prob: float = 0.15
    lead_prob: float = 0.5

    def __post_init__(self):
        if self.layout not in LAYOUTS:
            raise DataError(f"unknown layout {self.layout!r}")
        if not 1 <= self.n_agents <= 16:
            raise DataError(f"n_agents must be in [1, 16], got {self.n_agents}")
        if self.noise_std < 0:
            raise DataError("noise_std must be >= 0")
        total = sum(self.maneuver_mix.get(m, 0.0) for m in MANEUVERS)
        if abs(total - 1.0) > 1e-9:
            raise DataError(f"maneuver probabilities sum to {total}, expected 1")


# ------------------------------------------------------------------ geometry
def _line_pts(p0, p1, spacing=DENSE_SPACING):
    p0, p1 = np.asarray(p0, float), np.asarray(p1, float)
    length = float(np.linalg.norm(p1 - p0))
    n = max(2, int(round(length / spacing)) + 1)
    t = np.linspace(0.0, 1.0, n)[:, None]
    pts = p0 + t * (p1 - p0)
    h = math.atan2(p1[1] - p0[1], p1[0] - p0[0])
    return pts, np.full(n, h)


def _arc_pts(center, radius, a0, a1, spacing=DENSE_SPACING):
    sweep = a1 - a0
    length = abs(sweep) * radius
    n = max(2, int(round(length / spacing)) + 1)
    ang = np.linspace(a0, a1, n)
    pts = np.stack([center[0] + radius * np.cos(ang), center[1] + radius * np.sin(ang)], axis=-1)
    headings = ang + (np.pi / 2 if sweep > 0 else -np.pi / 2)
    return pts, headings


def _left_normal(h):
    return np.stack([-np.sin(h), np.cos(h)], axis=-1)


def _turn_arc(p_in, h_in, p_out, h_out, left: bool):
    """Fillet arc tangent to heading h_in at p_in and h_out at p_out."""
    sign = 1.0 if left else -1.0
    n_in = sign * _left_normal(np.asarray(h_in))
    n_out = sign * _left_normal(np.asarray(h_out))
    d = np.asarray(p_out, float) - np.asarray(p_in, float)
    denom = n_in - n_out
    i = int(np.argmax(np.abs(denom)))
    radius = float(d[i] / denom[i])
    center = np.asarray(p_in, float) + radius * n_in
    a0 = math.atan2(p_in[1] - center[1], p_in[0] - center[0])
    a1 = math.atan2(p_out[1] - center[1], p_out[0] - center[0])
    if left:  # counterclockwise, increasing angle
        while a1 <= a0:
            a1 += 2 * math.pi
    else:
        while a1 >= a0:
            a1 -= 2 * math.pi
    return _arc_pts(center, radius, a0, a1)


@dataclass
class _Segment:
    id: str
    pts: np.ndarray       # dense (n, 2)
    headings: np.ndarray  # (n,)

    @property
    def length(self) -> float:
        return float(np.linalg.norm(np.diff(self.pts, axis=0), axis=1).sum())

    @property
    def is_straight(self) -> bool:
        return bool(np.max(np.abs(self.headings - self.headings[0])) < 1e-9)


@dataclass
class _Route:
    maneuver: str
    pts: np.ndarray
    headings: np.ndarray
    s_event: float | None  # arc length where the maneuver/junction begins

    def __post_init__(self):
        steps = np.linalg.norm(np.diff(self.pts, axis=0), axis=1)
        self.cum = np.concatenate([[0.0], np.cumsum(steps)])

    @property
    def length(self) -> float:
        return float(self.cum[-1])

    def position(self, s):
        s = np.clip(np.asarray(s, float), 0.0, self.length)
        x = np.interp(s, self.cum, self.pts[:, 0])
        y = np.interp(s, self.cum, self.pts[:, 1])
        return np.stack([x, y], axis=-1)


@dataclass
class _Layout:
    segments: list
    routes: list
    drivable: DrivableArea


def _chain(parts) -> tuple[np.ndarray, np.ndarray]:
    """Concatenate dense polylines, dropping duplicated joint points."""
    pts = [parts[0][0]]
    hds = [parts[0][1]]
    for p, h in parts[1:]:
        pts.append(p[1:])
        hds.append(h[1:])
    return np.concatenate(pts, axis=0), np.concatenate(hds, axis=0)


def _offset_route(base_pts, base_headings, delta, s0, length=LANE_CHANGE_LEN):
    """Lateral cosine-ramp offset (lane change) applied to a base path."""
    steps = np.linalg.norm(np.diff(base_pts, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(steps)])
    u = np.clip((cum - s0) / length, 0.0, 1.0)
    off = delta * 0.5 * (1.0 - np.cos(np.pi * u))
    pts = base_pts + off[:, None] * _left_normal(base_headings)
    d = np.gradient(pts, axis=0)
    headings = np.arctan2(d[:, 1], d[:, 0])
    return pts, headings


def _corridor_polygon(seg: _Segment) -> np.ndarray:
    if seg.is_straight:
        pts = seg.pts[[0, -1]]
        n = _left_normal(seg.headings[[0, -1]])
    else:
        stride = max(1, int(round(MAP_SPACING / DENSE_SPACING)))
        idx = np.unique(np.concatenate([np.arange(0, len(seg.pts), stride), [len(seg.pts) - 1]]))
        pts = seg.pts[idx]
        n = _left_normal(seg.headings[idx])
    left = pts + CORRIDOR_HALF * n
    right = pts - CORRIDOR_HALF * n
    return np.concatenate([left, right[::-1]], axis=0)


def _segment_to_polylines(seg: _Segment, L: int) -> list:
    """Chop a dense segment into L-point map polylines at MAP_SPACING."""
    stride = max(1, int(round(MAP_SPACING / DENSE_SPACING)))
    pts = seg.pts[::stride]
    hds = seg.headings[::stride]
    out = []
    step = L - 1
    k = 0
    for start in range(0, max(1, len(pts) - 1), step):
        chunk = pts[start:start + L]
        hc = hds[start:start + L]
        if len(chunk) < 2:
            break
        pad = L - len(chunk)
        if pad:
            chunk = np.concatenate([chunk, np.zeros((pad, 2))], axis=0)
            hc = np.concatenate([hc, np.zeros(pad)])
        valid = np.zeros(L, dtype=bool)
        valid[: L - pad] = True
        out.append(MapPolyline(id=f"{seg.id}#{k}", points=chunk, valid=valid, headings=hc))
        k += 1
    return out


# ------------------------------------------------------------------ layouts
def _layout_straight() -> _Layout:
    segs, routes = [], []
    ys = (-LANE_WIDTH / 2, LANE_WIDTH / 2)
    for j, y in enumerate(ys):
        pts, hds = _line_pts((-STRAIGHT_HALF, y), (STRAIGHT_HALF, y))
        segs.append(_Segment(f"lane{j}", pts, hds))
        routes.append(_Route("keep_lane", pts, hds, None))
    for j, y in enumerate(ys):
        delta = LANE_WIDTH if j == 0 else -LANE_WIDTH
        base = segs[j]
        s0 = base.length / 2 - LANE_CHANGE_LEN / 2
        pts, hds = _offset_route(base.pts, base.headings, delta, s0)
        routes.append(_Route("lane_change", pts, hds, s0))
    drv = DrivableArea([_corridor_polygon(s) for s in segs])
    return _Layout(segs, routes, drv)


def _layout_curve() -> _Layout:
    segs, routes = [], []
    center = (0.0, CURVE_RADIUS)
    a0, a1 = -math.pi / 2 - 0.8, -math.pi / 2 + 0.8
    radii = (CURVE_RADIUS - LANE_WIDTH / 2, CURVE_RADIUS + LANE_WIDTH / 2)
    for j, r in enumerate(radii):
        pts, hds = _arc_pts(center, r, a0, a1)
        segs.append(_Segment(f"lane{j}", pts, hds))
        routes.append(_Route("keep_lane", pts, hds, None))
    for j in range(2):
        delta = -LANE_WIDTH if j == 0 else LANE_WIDTH  # inner->outer is rightward
        base = segs[j]
        s0 = base.length / 2 - LANE_CHANGE_LEN / 2
        pts, hds = _offset_route(base.pts, base.headings, delta, s0)
        routes.append(_Route("lane_change", pts, hds, s0))
    drv = DrivableArea([_corridor_polygon(s) for s in segs])
    return _Layout(segs, routes, drv)


_DIRS = {"E": 0.0, "N": math.pi / 2, "W": math.pi, "S": -math.pi / 2}
_LEFT_OF = {"E": "N", "N": "W", "W": "S", "S": "E"}
_RIGHT_OF = {"E": "S", "S": "W", "W": "N", "N": "E"}


def _junction_pieces(direction: str):
    """Approach / through / exit endpoints for one travel direction."""
    h = _DIRS[direction]
    fwd = np.array([math.cos(h), math.sin(h)])
    right = np.array([math.sin(h), -math.cos(h)])
    off = right * (LANE_WIDTH / 2)
    app0 = off - fwd * (JUNCTION_HALF + ARM_LEN)
    app1 = off - fwd * JUNCTION_HALF
    ex0 = off + fwd * JUNCTION_HALF
    ex1 = off + fwd * (JUNCTION_HALF + ARM_LEN)
    return h, app0, app1, ex0, ex1


def _junction_layout(directions_in: list, directions_out: list, turns: list) -> _Layout:
    """Shared builder: through movements for directions present on both
    sides, plus (direction, kind) turn arcs."""
    segs = {}
    for d in set(directions_in) | set(directions_out):
        h, app0, app1, ex0, ex1 = _junction_pieces(d)
        if d in directions_in:
            pts, hds = _line_pts(app0, app1)
            segs[f"app_{d}"] = _Segment(f"app_{d}", pts, hds)
        if d in directions_out:
            pts, hds = _line_pts(ex0, ex1)
            segs[f"exit_{d}"] = _Segment(f"exit_{d}", pts, hds)
        if d in directions_in and d in directions_out:
            pts, hds = _line_pts(app1, ex0)
            segs[f"thru_{d}"] = _Segment(f"thru_{d}", pts, hds)
    for d, kind in turns:
        out_dir = _LEFT_OF[d] if kind == "turn_left" else _RIGHT_OF[d]
        _, _, app1, _, _ = _junction_pieces(d)
        h_in = _DIRS[d]
        h_out, _, _, ex0, _ = _junction_pieces(out_dir)
        pts, hds = _turn_arc(app1, h_in, ex0, h_out, left=(kind == "turn_left"))
        segs[f"{kind}_{d}"] = _Segment(f"{kind}_{d}", pts, hds)

    routes = []
    for d in directions_in:
        app = segs[f"app_{d}"]
        if f"thru_{d}" in segs:
            pts, hds = _chain([(app.pts, app.headings),
                               (segs[f"thru_{d}"].pts, segs[f"thru_{d}"].headings),
                               (segs[f"exit_{d}"].pts, segs[f"exit_{d}"].headings)])
            routes.append(_Route("keep_lane", pts, hds, app.length))
    for d, kind in turns:
        out_dir = _LEFT_OF[d] if kind == "turn_left" else _RIGHT_OF[d]
        app = segs[f"app_{d}"]
        arc = segs[f"{kind}_{d}"]
        ex = segs[f"exit_{out_dir}"]
        pts, hds = _chain([(app.pts, app.headings), (arc.pts, arc.headings), (ex.pts, ex.headings)])
        routes.append(_Route(kind, pts, hds, app.length))

    seg_list = list(segs.values())
    box = JUNCTION_HALF + 0.5
    box_poly = np.array([[-box, -box], [box, -box], [box, box], [-box, box]])
    drv = DrivableArea([_corridor_polygon(s) for s in seg_list] + [box_poly])
    return _Layout(seg_list, routes, drv)


def _layout_t_junction() -> _Layout:
    # east-west road plus a north branch: no through movement for N/S.
    return _junction_layout(
        directions_in=["E", "W", "S"],
        directions_out=["E", "W", "N"],
        turns=[("E", "turn_left"), ("W", "turn_right"), ("S", "turn_left"), ("S", "turn_right")],
    )


def _layout_crossroads() -> _Layout:
    dirs = ["E", "W", "N", "S"]
    turns = [(d, k) for d in dirs for k in ("turn_left", "turn_right")]
    return _junction_layout(dirs, dirs, turns)


_BUILDERS = {
    "straight": _layout_straight,
    "curve": _layout_curve,
    "t_junction": _layout_t_junction,
    "crossroads": _layout_crossroads,
}


def build_layout(spec: ScenarioSpec) -> _Layout:
    return _BUILDERS[spec.layout]()


def generate_lane_network(spec: ScenarioSpec, L: int = 10):
    """Map polylines (L points each, headings tangent) and drivable area."""
    layout = build_layout(spec)
    polylines = []
    for seg in layout.segments:
        polylines.extend(_segment_to_polylines(seg, L))
    return polylines, layout.drivable


# ------------------------------------------------------------------ agents
def _speed_profile(rng, n_steps: int, dt: float) -> np.ndarray:
    """Per-step speeds: base speed plus bounded per-second accelerations."""
    v0 = rng.uniform(*SPEED_RANGE)
    per_sec = max(1, int(round(1.0 / dt)))
    n_seg = n_steps // per_sec + 1
    acc = rng.uniform(-MAX_ACCEL, MAX_ACCEL, size=n_seg)
    v = np.empty(n_steps)
    cur = v0
    for t in range(n_steps):
        cur = float(np.clip(cur + acc[t // per_sec] * dt, *SPEED_CLIP))
        v[t] = cur
    return v


def simulate_agents(map_polylines, spec: ScenarioSpec, layout: _Layout | None = None) -> list:
    """Sample agents following layout routes; exactly one focal agent."""
    if not map_polylines:
        raise DataError("simulate_agents requires a non-empty map")
    if layout is None:
        layout = build_layout(spec)
    rng = np.random.default_rng(np.random.SeedSequence([int(spec.seed) & 0x7FFFFFFFFFFFFFFF, 1]))
    dt = 1.0 / spec.sample_rate
    n_steps = spec.T + spec.N_T

    available = {}
    for r in layout.routes:
        available.setdefault(r.maneuver, []).append(r)
    mix = {m: p for m, p in spec.maneuver_mix.items() if available.get(m)}
    norm = sum(mix.values())
    if norm <= 0:
        mix = {"keep_lane": 1.0}
        norm = 1.0
    names = sorted(mix)
    probs = np.array([mix[m] / norm for m in names])

    chosen = []
    for _ in range(spec.n_agents):
        m = names[int(rng.choice(len(names), p=probs))]
        route = available[m][int(rng.integers(len(available[m])))]
        chosen.append((m, route))
    ranks = [_MANEUVER_RANK[m] for m, _ in chosen]
    focal_idx = int(np.argmax(ranks))

    tracks = []
    focal_s0 = None
    focal_route = None
    for i, (man, route) in enumerate(chosen):
        speeds = _speed_profile(rng, n_steps - 1, dt)
        dist = np.concatenate([[0.0], np.cumsum(speeds * dt)])
        total = dist[-1]
        if total > route.length - 2.0:
            speeds = speeds * ((route.length - 2.0) / total)
            dist = np.concatenate([[0.0], np.cumsum(speeds * dt)])
            total = dist[-1]
        hist_dist = dist[spec.T - 1]
        max_s0 = max(0.5, route.length - total - 1.0)
        if i == focal_idx and route.s_event is not None:
            s0 = route.s_event - hist_dist + rng.uniform(-3.0, 3.0)
            s0 = float(np.clip(s0, 0.5, max_s0))
        elif (
            focal_s0 is not None
            and route is focal_route
            and rng.random() < spec.lead_prob
        ):
            s0 = float(np.clip(focal_s0 + rng.uniform(10.0, 30.0), 0.5, max_s0))
        else:
            s0 = float(rng.uniform(0.5, max_s0))
        if i == focal_idx:
            focal_s0, focal_route = s0, route

        pos = route.position(s0 + dist)
        if spec.noise_std > 0:
            pos = pos + rng.normal(0.0, spec.noise_std, size=pos.shape)
        valid = np.ones(spec.T, dtype=bool)
        if rng.random() < spec.occlusion_prob and spec.T > 3:
            k = int(rng.integers(1, spec.T - 1))
            valid[:k] = False
        tracks.append(
            AgentTrack(
                id=f"a{i}",
                history=pos[: spec.T],
                history_valid=valid,
                future=pos[spec.T:],
                future_valid=np.ones(spec.N_T, dtype=bool),
                is_focal=(i == focal_idx),
            )
        )
    return tracks


def generate_scene(spec: ScenarioSpec, scene_id: str, L: int = 10) -> Scene:
    layout = build_layout(spec)
    polylines = []
    for seg in layout.segments:
        polylines.extend(_segment_to_polylines(seg, L))
    agents = simulate_agents(polylines, spec, layout=layout)
    return Scene(id=scene_id, agents=agents, map_polylines=polylines, drivable=layout.drivable)


# ------------------------------------------------------------------ datasets
@dataclass
class GeneratorConfig:
    """Distribution over scenario specs for dataset generation."""

    layout_mix: dict = field(
        default_factory=lambda: {"straight": 0.25, "curve": 0.25, "t_junction": 0.2, "crossroads": 0.3}
    )
    n_agents_range: tuple = (2, 5)
    noise_std: float = 0.1
    maneuver_mix: dict = field(
        default_factory=lambda: {"keep_lane": 0.4, "turn_left": 0.2, "turn_right": 0.2, "lane_change": 0.2}
    )
    T: int = 20
    N_T: int = 30
    sample_rate: float = 10.0

    def __post_init__(self):
        total = sum(self.layout_mix.values())
        if abs(total - 1.0) > 1e-9:
            raise DataError(f"layout probabilities sum to {total}, expected 1")


def split_counts(n_scenes: int, ratios) -> list:
    """Largest-remainder apportionment of n_scenes over the ratios."""
    ratios = list(ratios)
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise DataError(f"split ratios sum to {sum(ratios)}, expected 1")
    raw = [r * n_scenes for r in ratios]
    counts = [int(x) for x in raw]
    rest = n_scenes - sum(counts)
    order = sorted(range(len(ratios)), key=lambda i: raw[i] - counts[i], reverse=True)
    for i in order[:rest]:
        counts[i] += 1
    return counts


def scenario_specs(n_scenes: int, gen: GeneratorConfig, master_seed: int) -> list:
    """Deterministic per-scene specs with disjoint seeds."""
    ss = np.random.SeedSequence(master_seed)
    children = ss.spawn(n_scenes)
    layouts = sorted(gen.layout_mix)
    probs = np.array([gen.layout_mix[l] for l in layouts])
    specs = []
    for child in children:
        rng = np.random.default_rng(child)
        seed = int(child.generate_state(1, dtype=np.uint64)[0] & 0x7FFFFFFFFFFFFFFF)
        layout = layouts[int(rng.choice(len(layouts), p=probs))]
        n_agents = int(rng.integers(gen.n_agents_range[0], gen.n_agents_range[1] + 1))
        specs.append(
            ScenarioSpec(
                seed=seed,
                layout=layout,
                n_agents=n_agents,
                noise_std=gen.noise_std,
                maneuver_mix=dict(gen.maneuver_mix),
                T=gen.T,
                N_T=gen.N_T,
                sample_rate=gen.sample_rate,
            )
        )
    return specs


def generate_dataset(n_scenes: int, gen: GeneratorConfig, split_ratios, out_dir, master_seed: int,
                     L: int = 10) -> dict:
    """Write train/val/test scene files; returns {split: [scene ids]}."""
    from . import sceneio  # file format is owned by the CLI layer

    counts = split_counts(n_scenes, split_ratios)
    specs = scenario_specs(n_scenes, gen, master_seed)
    names = ("train", "val", "test")
    out = {}
    idx = 0
    for split, count in zip(names, counts):
        ids = []
        for j in range(count):
            spec = specs[idx]
            scene_id = f"{split}_{j:06d}"
            scene = generate_scene(spec, scene_id, L=L)
            sceneio.write_scene(out_dir, split, scene, sample_rate=spec.sample_rate)
            ids.append(scene_id)
            idx += 1
        out[split] = ids
    return out
