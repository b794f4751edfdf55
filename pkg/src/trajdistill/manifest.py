"""Run manifests: every artifact directory records what produced it."""

from __future__ import annotations

import hashlib
import json
import os
import time

MANIFEST_NAME = "manifest.json"


def code_hash() -> str:
    """Content hash of the package sources (tree-style: path + bytes)."""
    root = os.path.dirname(os.path.abspath(__file__))
    h = hashlib.sha1()
    paths = []
    for base, _, files in os.walk(root):
        for name in files:
            if name.endswith((".py", ".pyx")):
                paths.append(os.path.join(base, name))
    for path in sorted(paths):
        rel = os.path.relpath(path, root)
        h.update(rel.encode())
        h.update(b"\0")
        with open(path, "rb") as f:
            h.update(f.read())
    return h.hexdigest()


def write_manifest(out_dir, command: str, config: dict, seeds: dict,
                   inputs: list, outputs: list, wall_clock_s: float) -> str:
    os.makedirs(out_dir, exist_ok=True)
    payload = {
        "command": command,
        "config": config,
        "seeds": seeds,
        "inputs": [str(p) for p in inputs],
        "outputs": [str(p) for p in outputs],
        "code_hash": code_hash(),
        "wall_clock_s": round(wall_clock_s, 3),
        "created_unix": round(time.time(), 3),
    }
    path = os.path.join(out_dir, MANIFEST_NAME)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")
    return path


def read_manifest(out_dir) -> dict:
    with open(os.path.join(out_dir, MANIFEST_NAME), "r", encoding="utf-8") as f:
        return json.load(f)


def manifest_identity(m: dict) -> dict:
    """The fields that determine outputs (excludes wall-clock noise)."""
    return {k: m[k] for k in ("command", "config", "seeds", "inputs", "code_hash")}
