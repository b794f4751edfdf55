"""Checkpoint archive: versioned magic header, JSON manifest (names,
shapes, dtype, byte offsets, little-endian), then raw array bytes.
Round-trips are bit-exact in the stored precision.
"""

from __future__ import annotations

import dataclasses
import json
import os
import struct

import numpy as np

from .errors import DataError
from .scene import ModelConfig

MAGIC = b"TDCKPT01"


@dataclasses.dataclass
class Checkpoint:
    values: dict                 # name -> np.ndarray
    model_config: ModelConfig
    train_config: dict
    epoch: int
    rng_state: dict
    metric_history: list
    with_map: bool
    dtype: str

    def config_dict(self) -> dict:
        return dataclasses.asdict(self.model_config)


def _dtype_tag(dtype) -> str:
    return {"float32": "<f4", "float64": "<f8"}[np.dtype(dtype).name]


def save_checkpoint(path, values: dict, model_config: ModelConfig, train_config: dict,
                    epoch: int, rng_state: dict, metric_history: list, with_map: bool) -> None:
    arrays = []
    blobs = []
    offset = 0
    for name in sorted(values):
        arr = np.ascontiguousarray(values[name])
        tag = _dtype_tag(arr.dtype)
        raw = arr.astype(tag, copy=False).tobytes()
        arrays.append({"name": name, "shape": list(arr.shape), "dtype": tag,
                       "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    manifest = {
        "format": "trajdistill-checkpoint",
        "version": 1,
        "arrays": arrays,
        "model_config": dataclasses.asdict(model_config),
        "train_config": train_config,
        "epoch": epoch,
        "rng_state": rng_state,
        "metric_history": metric_history,
        "with_map": with_map,
    }
    payload = json.dumps(manifest, sort_keys=True).encode("utf-8")
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(payload)))
        f.write(payload)
        for raw in blobs:
            f.write(raw)


def load_checkpoint(path) -> Checkpoint:
    try:
        with open(path, "rb") as f:
            magic = f.read(len(MAGIC))
            if magic != MAGIC:
                raise DataError(f"{path}: not a checkpoint (bad magic {magic!r})")
            (n,) = struct.unpack("<Q", f.read(8))
            manifest = json.loads(f.read(n).decode("utf-8"))
            blob = f.read()
    except OSError as e:
        raise DataError(f"cannot read checkpoint {path}: {e}") from e
    values = {}
    dtypes = set()
    for entry in manifest["arrays"]:
        raw = blob[entry["offset"]: entry["offset"] + entry["nbytes"]]
        arr = np.frombuffer(raw, dtype=entry["dtype"]).reshape(entry["shape"]).copy()
        values[entry["name"]] = arr
        dtypes.add(entry["dtype"])
    cfg = ModelConfig(**manifest["model_config"])
    dtype = "float64" if "<f8" in dtypes else "float32"
    return Checkpoint(
        values=values,
        model_config=cfg,
        train_config=manifest["train_config"],
        epoch=manifest["epoch"],
        rng_state=manifest["rng_state"],
        metric_history=manifest["metric_history"],
        with_map=manifest["with_map"],
        dtype=dtype,
    )
