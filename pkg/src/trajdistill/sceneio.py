"""Scene file format: one UTF-8 text file per scene, LF line endings,
fixed 6-decimal coordinates.

    SCENE,<id>,<T>,<N_T>,<sample_rate>
    AGENT,<agent_id>,<focal 0|1>,<t>,<valid 0|1>,<x>,<y>
    LANE,<lane_id>,<point_idx>,<x>,<y>,<heading>
    POLY,<poly_id>,<vertex_idx>,<x>,<y>

History rows use t in [-T+1, 0], future rows t in [1, N_T]. Only valid
lane points are written; the loader pads polylines back to L points.
"""

from __future__ import annotations

import os

import numpy as np

from .errors import DataError
from .scene import AgentTrack, DrivableArea, MapPolyline, Scene

SCENE_SUFFIX = ".scene.txt"


def _fmt(x: float) -> str:
    return f"{x:.6f}"


def scene_to_text(scene: Scene, sample_rate: float = 10.0) -> str:
    agents = scene.agents
    T = agents[0].history.shape[0]
    N_T = 0 if agents[0].future is None else agents[0].future.shape[0]
    lines = [f"SCENE,{scene.id},{T},{N_T},{sample_rate:g}"]
    for a in agents:
        focal = int(a.is_focal)
        for j in range(T):
            t = j - (T - 1)
            lines.append(
                f"AGENT,{a.id},{focal},{t},{int(a.history_valid[j])},"
                f"{_fmt(a.history[j, 0])},{_fmt(a.history[j, 1])}"
            )
        if a.future is not None:
            for j in range(a.future.shape[0]):
                lines.append(
                    f"AGENT,{a.id},{focal},{j + 1},{int(a.future_valid[j])},"
                    f"{_fmt(a.future[j, 0])},{_fmt(a.future[j, 1])}"
                )
    for poly in scene.map_polylines:
        idx = 0
        for j in range(poly.points.shape[0]):
            if not poly.valid[j]:
                continue
            lines.append(
                f"LANE,{poly.id},{idx},{_fmt(poly.points[j, 0])},{_fmt(poly.points[j, 1])},"
                f"{_fmt(poly.headings[j])}"
            )
            idx += 1
    for p, verts in enumerate(scene.drivable.polygons):
        for j in range(verts.shape[0]):
            lines.append(f"POLY,{p},{j},{_fmt(verts[j, 0])},{_fmt(verts[j, 1])}")
    return "\n".join(lines) + "\n"


def write_scene(out_dir, split: str, scene: Scene, sample_rate: float = 10.0) -> str:
    d = os.path.join(out_dir, split)
    os.makedirs(d, exist_ok=True)
    path = os.path.join(d, scene.id + SCENE_SUFFIX)
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write(scene_to_text(scene, sample_rate))
    except OSError as e:
        raise DataError(f"cannot write scene file {path}: {e}") from e
    return path


def parse_scene_text(text: str, L: int = 10) -> Scene:
    scene_id = None
    T = N_T = None
    agent_rows: dict = {}
    agent_order: list = []
    lane_rows: dict = {}
    lane_order: list = []
    poly_rows: dict = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        parts = line.split(",")
        kind = parts[0]
        try:
            if kind == "SCENE":
                scene_id, T, N_T = parts[1], int(parts[2]), int(parts[3])
            elif kind == "AGENT":
                aid, focal, t, valid = parts[1], int(parts[2]), int(parts[3]), int(parts[4])
                x, y = float(parts[5]), float(parts[6])
                if aid not in agent_rows:
                    agent_rows[aid] = []
                    agent_order.append(aid)
                agent_rows[aid].append((focal, t, valid, x, y))
            elif kind == "LANE":
                lid = parts[1]
                if lid not in lane_rows:
                    lane_rows[lid] = []
                    lane_order.append(lid)
                lane_rows[lid].append((int(parts[2]), float(parts[3]), float(parts[4]), float(parts[5])))
            elif kind == "POLY":
                pid = parts[1]
                poly_rows.setdefault(pid, []).append((int(parts[2]), float(parts[3]), float(parts[4])))
            else:
                raise DataError(f"unknown record {kind!r}")
        except (IndexError, ValueError) as e:
            raise DataError(f"malformed scene line {lineno}: {line!r} ({e})") from e
    if scene_id is None:
        raise DataError("scene file missing SCENE header")

    agents = []
    for aid in agent_order:
        rows = agent_rows[aid]
        focal = bool(rows[0][0])
        hist = np.zeros((T, 2))
        hvalid = np.zeros(T, dtype=bool)
        fut = np.zeros((N_T, 2))
        fvalid = np.zeros(N_T, dtype=bool)
        has_future = False
        for _, t, valid, x, y in rows:
            if t <= 0:
                j = t + (T - 1)
                if not 0 <= j < T:
                    raise DataError(f"agent {aid}: history step {t} outside [-{T - 1}, 0]")
                hist[j] = (x, y)
                hvalid[j] = bool(valid)
            else:
                if not 1 <= t <= N_T:
                    raise DataError(f"agent {aid}: future step {t} outside [1, {N_T}]")
                fut[t - 1] = (x, y)
                fvalid[t - 1] = bool(valid)
                has_future = True
        agents.append(
            AgentTrack(
                id=aid,
                history=hist,
                history_valid=hvalid,
                future=fut if has_future else None,
                future_valid=fvalid if has_future else None,
                is_focal=focal,
            )
        )

    polylines = []
    for lid in lane_order:
        rows = sorted(lane_rows[lid])
        if len(rows) > L:
            raise DataError(f"polyline {lid}: {len(rows)} points exceed L={L}")
        pts = np.zeros((L, 2))
        hds = np.zeros(L)
        valid = np.zeros(L, dtype=bool)
        for j, (_, x, y, h) in enumerate(rows):
            pts[j] = (x, y)
            hds[j] = h
            valid[j] = True
        polylines.append(MapPolyline(id=lid, points=pts, valid=valid, headings=hds))

    polygons = []
    for pid in sorted(poly_rows, key=lambda s: (len(s), s)):
        rows = sorted(poly_rows[pid])
        polygons.append(np.array([(x, y) for _, x, y in rows]))
    return Scene(id=scene_id, agents=agents, map_polylines=polylines, drivable=DrivableArea(polygons))


def read_scene(path, L: int = 10) -> Scene:
    try:
        with open(path, "r", encoding="utf-8") as f:
            text = f.read()
    except OSError as e:
        raise DataError(f"cannot read scene file {path}: {e}") from e
    return parse_scene_text(text, L=L)


def list_scene_files(data_dir, split: str) -> list:
    d = os.path.join(data_dir, split)
    if not os.path.isdir(d):
        raise DataError(f"missing split directory {d}")
    return sorted(
        os.path.join(d, name) for name in os.listdir(d) if name.endswith(SCENE_SUFFIX)
    )


def load_split(data_dir, split: str, L: int = 10, limit: int | None = None) -> list:
    files = list_scene_files(data_dir, split)
    if limit is not None:
        files = files[:limit]
    scenes = [read_scene(p, L=L) for p in files]
    if not scenes:
        raise DataError(f"split {split!r} in {data_dir} contains no scenes")
    return scenes
