"""Parameter container and the attention/normalization/MLP building blocks."""

from __future__ import annotations

import hashlib

import numpy as np

from . import autodiff as ad
from .autodiff import FeatureArray


class ParameterSet:
    """Named learnable arrays with gradient slots and optimizer state."""

    def __init__(self, dtype=np.float64):
        self.dtype = np.dtype(dtype)
        self._params: dict[str, FeatureArray] = {}
        self.opt_state: dict[str, dict] = {}

    def add(self, name: str, value: np.ndarray) -> FeatureArray:
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name!r}")
        p = FeatureArray(np.asarray(value, dtype=self.dtype), requires_grad=True, name=name)
        self._params[name] = p
        return p

    def __getitem__(self, name: str) -> FeatureArray:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params.keys())

    def items(self):
        return self._params.items()

    def zero_grad(self) -> None:
        for p in self._params.values():
            p.grad = None

    def n_values(self) -> int:
        return sum(p.data.size for p in self._params.values())

    def values_copy(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self._params.items()}

    def load_values(self, values: dict[str, np.ndarray]) -> None:
        missing = set(self._params) - set(values)
        if missing:
            raise ValueError(f"missing parameters: {sorted(missing)[:5]}")
        for name, p in self._params.items():
            v = np.asarray(values[name], dtype=self.dtype)
            if v.shape != p.data.shape:
                raise ValueError(f"shape mismatch for {name}: {v.shape} vs {p.data.shape}")
            p.data = v.copy()

    def content_hash(self) -> str:
        h = hashlib.sha256()
        for name in sorted(self._params):
            h.update(name.encode())
            h.update(np.ascontiguousarray(self._params[name].data).tobytes())
        return h.hexdigest()


def init_linear(ps: ParameterSet, name: str, fan_in: int, fan_out: int, rng) -> None:
    bound = 1.0 / np.sqrt(fan_in)
    ps.add(f"{name}.w", rng.uniform(-bound, bound, size=(fan_in, fan_out)))
    ps.add(f"{name}.b", np.zeros(fan_out))


def linear(ps: ParameterSet, name: str, x) -> FeatureArray:
    return ad.matmul(x, ps[f"{name}.w"]) + ps[f"{name}.b"]


def init_mlp2(ps: ParameterSet, name: str, d_in: int, d_hidden: int, d_out: int, rng) -> None:
    init_linear(ps, f"{name}.l1", d_in, d_hidden, rng)
    init_linear(ps, f"{name}.l2", d_hidden, d_out, rng)


def mlp2(ps: ParameterSet, name: str, x) -> FeatureArray:
    return linear(ps, f"{name}.l2", ad.silu(linear(ps, f"{name}.l1", x)))


def init_layer_norm(ps: ParameterSet, name: str, d: int) -> None:
    ps.add(f"{name}.g", np.ones(d))
    ps.add(f"{name}.b", np.zeros(d))


def layer_norm(ps: ParameterSet, name: str, x) -> FeatureArray:
    return ad.layer_norm(x, ps[f"{name}.g"], ps[f"{name}.b"])


def init_interaction_block(ps: ParameterSet, name: str, d: int, rng) -> None:
    for proj in ("q", "k", "v", "o"):
        init_linear(ps, f"{name}.{proj}", d, d, rng)
    init_layer_norm(ps, f"{name}.ln1", d)
    init_linear(ps, f"{name}.ffn.l1", d, 4 * d, rng)
    init_linear(ps, f"{name}.ffn.l2", 4 * d, d, rng)
    init_layer_norm(ps, f"{name}.ln2", d)


def attention(q, k, v, mask, rel_emb=None, heads=1) -> FeatureArray:
    """Multi-head masked attention; see autodiff.attention for semantics."""
    return ad.attention(q, k, v, mask, rel=rel_emb, heads=heads)


def interaction_block(ps: ParameterSet, name: str, q_in, kv_in, mask, heads, rel_emb=None) -> FeatureArray:
    """Pre-projection attention + residual LayerNorm + FFN, per query row.

    Rows whose mask admits no key pass through unchanged, so out-of-radius
    or fully padded queries are exact no-ops.
    """
    q = linear(ps, f"{name}.q", q_in)
    k = linear(ps, f"{name}.k", kv_in)
    v = linear(ps, f"{name}.v", kv_in)
    att = attention(q, k, v, mask, rel_emb=rel_emb, heads=heads)
    f = layer_norm(ps, f"{name}.ln1", q_in + linear(ps, f"{name}.o", att))
    ffn = linear(ps, f"{name}.ffn.l2", ad.silu(linear(ps, f"{name}.ffn.l1", f)))
    out = layer_norm(ps, f"{name}.ln2", f + ffn)
    active = np.asarray(mask, dtype=bool).any(axis=-1)
    return ad.where_mask(active[..., None], out, q_in)


def maxpool_polyline(feats, mask, allow_empty=False) -> FeatureArray:
    """Per-feature max over valid points: (..., L, D) x (..., L) -> (..., D)."""
    return ad.maxpool_masked(feats, mask, allow_empty=allow_empty)
