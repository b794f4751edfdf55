"""Numpy reference implementation of the attention kernels.

Shared conventions with the compiled backend:
  q:    (B, H, nq, dh)
  k, v: (B, H, nk, dh)
  mask: (B, nq, nk) uint8, 1 = admissible key for that query row
  rel:  (B, H, nq, nk, dh) or None; added to both K and V per pair
Rows with no admissible key get exactly zero output and zero weights.
Masked keys carry exactly zero weight, so their values cannot leak.
"""

import numpy as np

BACKEND_NAME = "python"


def attention_forward(q, k, v, mask, rel):
    dh = q.shape[-1]
    scale = 1.0 / np.sqrt(np.asarray(dh, dtype=q.dtype))
    m = mask.astype(bool)[:, None, :, :]
    if rel is None:
        s = np.matmul(q, np.swapaxes(k, -1, -2)) * scale
    else:
        s = np.einsum("bhqd,bhqkd->bhqk", q, k[:, :, None, :, :] + rel) * scale
    s = np.where(m, s, -np.inf)
    smax = s.max(axis=-1, keepdims=True)
    active = np.isfinite(smax)
    e = np.exp(s - np.where(active, smax, 0.0))
    e = np.where(m, e, 0.0)
    z = e.sum(axis=-1, keepdims=True)
    w = np.where(active, e / np.where(z == 0.0, 1.0, z), 0.0)
    if rel is None:
        out = np.matmul(w, v)
    else:
        out = np.einsum("bhqk,bhqkd->bhqd", w, v[:, :, None, :, :] + rel)
    return np.ascontiguousarray(out), np.ascontiguousarray(w)


def attention_backward(g, q, k, v, mask, rel, w):
    dh = q.shape[-1]
    scale = 1.0 / np.sqrt(np.asarray(dh, dtype=q.dtype))
    if rel is None:
        gw = np.matmul(g, np.swapaxes(v, -1, -2))
        gv = np.matmul(np.swapaxes(w, -1, -2), g)
    else:
        vp = v[:, :, None, :, :] + rel
        gw = np.einsum("bhqd,bhqkd->bhqk", g, vp)
        grel_v = w[..., None] * g[:, :, :, None, :]
        gv = grel_v.sum(axis=2)
    gs = w * (gw - (w * gw).sum(axis=-1, keepdims=True)) * scale
    if rel is None:
        gq = np.matmul(gs, k)
        gk = np.matmul(np.swapaxes(gs, -1, -2), q)
        grel = None
    else:
        kp = k[:, :, None, :, :] + rel
        gq = np.einsum("bhqk,bhqkd->bhqd", gs, kp)
        gk = np.einsum("bhqk,bhqd->bhkd", gs, q)
        grel = grel_v + gs[..., None] * q[:, :, :, None, :]
    return (
        np.ascontiguousarray(gq),
        np.ascontiguousarray(gk),
        np.ascontiguousarray(gv),
        grel if grel is None else np.ascontiguousarray(grel),
    )
