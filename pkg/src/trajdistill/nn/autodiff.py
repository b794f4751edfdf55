"""Reverse-mode automatic differentiation over numpy arrays.

A FeatureArray wraps an ndarray and records the operations applied to it;
calling backward() on a scalar result walks the recorded graph in reverse
topological order and accumulates exact gradients into every reachable
array that has requires_grad set.

The attention primitive delegates its forward/backward to the kernel
backend selected in trajdistill.nn.kernels (compiled extension when
available, numpy otherwise).
"""

from __future__ import annotations

import math

import numpy as np

from . import kernels

_GRAD_ENABLED = True
CHECK_FINITE = False


class no_grad:
    """Context manager disabling graph recording (inference / oracles)."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcasted gradient back to `shape`."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class FeatureArray:
    """Shaped array of reals, optionally carrying a gradient slot."""

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data)
        if self.data.dtype not in (np.float32, np.float64):
            self.data = self.data.astype(np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def accumulate_grad(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = g.copy() if isinstance(g, np.ndarray) else np.asarray(g)
        else:
            self.grad += g

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into every reachable requires_grad leaf.

        self must be scalar. Graph references of interior nodes are released
        afterwards so large activations are freed promptly.
        """
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar")
        topo = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None:
                node._backward(node.grad)
            if node._parents:
                node.grad = None
                node._parents = ()
                node._backward = None

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"FeatureArray(shape={self.shape}, dtype={self.dtype}{tag})"


def as_feature(x) -> FeatureArray:
    return x if isinstance(x, FeatureArray) else FeatureArray(x)


def _make(data, parents, backward_fn) -> FeatureArray:
    out = FeatureArray(data)
    if CHECK_FINITE and not np.all(np.isfinite(out.data)):
        raise FloatingPointError("non-finite values produced by an operation")
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(p for p in parents if p.requires_grad)
        out._backward = backward_fn
    return out


def add(a, b) -> FeatureArray:
    a, b = as_feature(a), as_feature(b)
    data = a.data + b.data

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(g, b.shape))

    return _make(data, (a, b), backward)


def sub(a, b) -> FeatureArray:
    a, b = as_feature(a), as_feature(b)
    data = a.data - b.data

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(-g, b.shape))

    return _make(data, (a, b), backward)


def neg(a) -> FeatureArray:
    a = as_feature(a)

    def backward(g):
        a.accumulate_grad(-g)

    return _make(-a.data, (a,), backward)


def mul(a, b) -> FeatureArray:
    a, b = as_feature(a), as_feature(b)
    data = a.data * b.data

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(g * a.data, b.shape))

    return _make(data, (a, b), backward)


def div(a, b) -> FeatureArray:
    a, b = as_feature(a), as_feature(b)
    data = a.data / b.data

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g / b.data, a.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return _make(data, (a, b), backward)


def matmul(a, b) -> FeatureArray:
    a, b = as_feature(a), as_feature(b)
    data = np.matmul(a.data, b.data)

    def backward(g):
        if a.requires_grad:
            ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
            a.accumulate_grad(_unbroadcast(ga, a.shape))
        if b.requires_grad:
            gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
            b.accumulate_grad(_unbroadcast(gb, b.shape))

    return _make(data, (a, b), backward)


def exp(a) -> FeatureArray:
    a = as_feature(a)
    data = np.exp(a.data)

    def backward(g):
        a.accumulate_grad(g * data)

    return _make(data, (a,), backward)


def log(a) -> FeatureArray:
    a = as_feature(a)
    data = np.log(a.data)

    def backward(g):
        a.accumulate_grad(g / a.data)

    return _make(data, (a,), backward)


def silu(a) -> FeatureArray:
    """x * sigmoid(x), the smooth gated unit used network-wide."""
    a = as_feature(a)
    sig = 1.0 / (1.0 + np.exp(-a.data))
    data = a.data * sig

    def backward(g):
        a.accumulate_grad(g * (sig + a.data * sig * (1.0 - sig)))

    return _make(data, (a,), backward)


def softmax(a, axis=-1) -> FeatureArray:
    a = as_feature(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        gy = data * g
        a.accumulate_grad(gy - data * gy.sum(axis=axis, keepdims=True))

    return _make(data, (a,), backward)


def layer_norm(x, gamma, beta, eps=1e-5) -> FeatureArray:
    """Normalization over the last axis with affine parameters."""
    x, gamma, beta = as_feature(x), as_feature(gamma), as_feature(beta)
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    data = gamma.data * xhat + beta.data

    def backward(g):
        d = x.shape[-1]
        if gamma.requires_grad:
            gamma.accumulate_grad(_unbroadcast(g * xhat, gamma.shape))
        if beta.requires_grad:
            beta.accumulate_grad(_unbroadcast(g, beta.shape))
        if x.requires_grad:
            gx = g * gamma.data
            term = gx - gx.mean(axis=-1, keepdims=True) - xhat * (gx * xhat).mean(axis=-1, keepdims=True)
            x.accumulate_grad(term * inv)

    return _make(data, (x, gamma, beta), backward)


def reshape(a, shape) -> FeatureArray:
    a = as_feature(a)
    old = a.shape

    def backward(g):
        a.accumulate_grad(g.reshape(old))

    return _make(a.data.reshape(shape), (a,), backward)


def transpose(a, axes) -> FeatureArray:
    a = as_feature(a)
    inverse = np.argsort(axes)

    def backward(g):
        a.accumulate_grad(g.transpose(inverse))

    return _make(a.data.transpose(axes), (a,), backward)


def broadcast_to(a, shape) -> FeatureArray:
    a = as_feature(a)
    old = a.shape

    def backward(g):
        a.accumulate_grad(_unbroadcast(g, old))

    return _make(np.broadcast_to(a.data, shape).copy(), (a,), backward)


def concat(parts, axis=0) -> FeatureArray:
    parts = [as_feature(p) for p in parts]
    data = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            if p.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                p.accumulate_grad(g[tuple(idx)])

    return _make(data, tuple(parts), backward)


def getitem(a, key) -> FeatureArray:
    a = as_feature(a)

    def backward(g):
        ga = np.zeros_like(a.data)
        np.add.at(ga, key, g)
        a.accumulate_grad(ga)

    return _make(a.data[key], (a,), backward)


def take_along(a, indices, axis) -> FeatureArray:
    """Gather along `axis` with an integer index array (one pick per slot)."""
    a = as_feature(a)
    idx = np.asarray(indices)
    data = np.take_along_axis(a.data, idx, axis=axis)

    def backward(g):
        ga = np.zeros_like(a.data)
        np.put_along_axis(ga, idx, g, axis=axis)
        a.accumulate_grad(ga)

    return _make(data, (a,), backward)


def asum(a, axis=None, keepdims=False) -> FeatureArray:
    a = as_feature(a)
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is None:
            a.accumulate_grad(np.broadcast_to(g, a.shape).copy())
            return
        if not keepdims:
            g = np.expand_dims(g, axis)
        a.accumulate_grad(np.broadcast_to(g, a.shape).copy())

    return _make(data, (a,), backward)


def amean(a, axis=None, keepdims=False) -> FeatureArray:
    a = as_feature(a)
    if axis is None:
        n = a.data.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        n = int(np.prod([a.shape[ax] for ax in axes]))
    return mul(asum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def clip(a, lo, hi) -> FeatureArray:
    """Clamp values; gradient passes only where lo <= x <= hi."""
    a = as_feature(a)
    data = np.clip(a.data, lo, hi)
    inside = (a.data >= lo) & (a.data <= hi)

    def backward(g):
        a.accumulate_grad(g * inside)

    return _make(data, (a,), backward)


def maximum_const(a, floor) -> FeatureArray:
    a = as_feature(a)
    data = np.maximum(a.data, floor)
    keep = a.data >= floor

    def backward(g):
        a.accumulate_grad(g * keep)

    return _make(data, (a,), backward)


def where_mask(cond, a, b) -> FeatureArray:
    """Select a where cond (a constant boolean array) else b."""
    a, b = as_feature(a), as_feature(b)
    cond = np.asarray(cond, dtype=bool)
    data = np.where(cond, a.data, b.data)

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(np.where(cond, g, 0.0), a.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(np.where(cond, 0.0, g), b.shape))

    return _make(data, (a, b), backward)


def cumsum(a, axis) -> FeatureArray:
    a = as_feature(a)
    data = np.cumsum(a.data, axis=axis)

    def backward(g):
        rev = np.flip(np.cumsum(np.flip(g, axis=axis), axis=axis), axis=axis)
        a.accumulate_grad(rev)

    return _make(data, (a,), backward)


def l2norm_last(a, eps=1e-12) -> FeatureArray:
    """Euclidean norm over the last axis; exact 0 at 0 with zero subgradient."""
    a = as_feature(a)
    n = np.sqrt((a.data * a.data).sum(axis=-1))

    def backward(g):
        safe = np.maximum(n, eps)
        a.accumulate_grad((g / safe)[..., None] * a.data)

    return _make(n, (a,), backward)


def maxpool_masked(a, mask, allow_empty=False) -> FeatureArray:
    """Per-feature max over the second-to-last axis, restricted to valid rows.

    a: (..., L, D); mask: (..., L) with at least one True per pooled group.
    Ties route the gradient to the first maximal entry. With allow_empty,
    groups with no valid entry yield zeros (used for padded lanes).
    """
    a = as_feature(a)
    mask = np.asarray(mask, dtype=bool)
    rows_ok = mask.any(axis=-1)
    if not rows_ok.all() and not allow_empty:
        raise ValueError("maxpool over a group with zero valid entries")
    neg = np.where(mask[..., None], a.data, -np.inf)
    am = np.argmax(neg, axis=-2)
    data = np.take_along_axis(a.data, am[..., None, :], axis=-2)[..., 0, :]
    if not rows_ok.all():
        data = np.where(rows_ok[..., None], data, 0.0)

    def backward(g):
        if not rows_ok.all():
            g = np.where(rows_ok[..., None], g, 0.0)
        ga = np.zeros_like(a.data)
        np.put_along_axis(ga, am[..., None, :], g[..., None, :], axis=-2)
        a.accumulate_grad(ga)

    return _make(data, (a,), backward)


def attention(q, k, v, mask, rel=None, heads=1) -> FeatureArray:
    """Masked scaled-dot-product attention with optional pairwise embeddings.

    q: (B, nq, D) or (nq, D); k, v: (B, nk, D); mask: (B, nq, nk) boolean
    with True marking admissible keys; rel: (B, nq, nk, D), added to both
    K and V per query-key pair after head splitting. Heads split D evenly.
    Rows whose mask admits no key produce exactly zero output.
    """
    q, k, v = as_feature(q), as_feature(k), as_feature(v)
    rel = as_feature(rel) if rel is not None else None
    squeeze = q.ndim == 2
    qd, kd, vd = q.data, k.data, v.data
    reld = rel.data if rel is not None else None
    maskd = np.asarray(mask, dtype=bool)
    if squeeze:
        qd, kd, vd = qd[None], kd[None], vd[None]
        maskd = maskd[None] if maskd.ndim == 2 else maskd
        if reld is not None and reld.ndim == 3:
            reld = reld[None]
    B, nq, D = qd.shape
    nk = kd.shape[1]
    if kd.shape != (B, nk, D) or vd.shape != (B, nk, D):
        raise ValueError(f"attention shape mismatch: q {qd.shape}, k {kd.shape}, v {vd.shape}")
    if maskd.shape != (B, nq, nk):
        raise ValueError(f"attention mask shape {maskd.shape}, expected {(B, nq, nk)}")
    if reld is not None and reld.shape != (B, nq, nk, D):
        raise ValueError(f"attention rel shape {reld.shape}, expected {(B, nq, nk, D)}")
    if D % heads != 0:
        raise ValueError(f"feature width {D} not divisible by {heads} heads")
    dh = D // heads

    def split(x, n):
        return np.ascontiguousarray(x.reshape(B, n, heads, dh).transpose(0, 2, 1, 3))

    qh, kh, vh = split(qd, nq), split(kd, nk), split(vd, nk)
    relh = None
    if reld is not None:
        relh = np.ascontiguousarray(reld.reshape(B, nq, nk, heads, dh).transpose(0, 3, 1, 2, 4))
    mask8 = np.ascontiguousarray(maskd.astype(np.uint8))

    out_h, weights = kernels.attention_forward(qh, kh, vh, mask8, relh)
    out = np.ascontiguousarray(out_h.transpose(0, 2, 1, 3)).reshape(B, nq, D)
    if squeeze:
        out = out[0]

    def backward(g):
        gh = np.ascontiguousarray(
            (g[None] if squeeze else g).reshape(B, nq, heads, dh).transpose(0, 2, 1, 3)
        )
        gq, gk, gv, grel = kernels.attention_backward(gh, qh, kh, vh, mask8, relh, weights)

        def merge(x, n):
            return np.ascontiguousarray(x.transpose(0, 2, 1, 3)).reshape(B, n, D)

        if q.requires_grad:
            gm = merge(gq, nq)
            q.accumulate_grad(gm[0] if squeeze else gm)
        if k.requires_grad:
            gm = merge(gk, nk)
            k.accumulate_grad(gm[0] if squeeze else gm)
        if v.requires_grad:
            gm = merge(gv, nk)
            v.accumulate_grad(gm[0] if squeeze else gm)
        if rel is not None and rel.requires_grad:
            gr = np.ascontiguousarray(grel.transpose(0, 2, 3, 1, 4)).reshape(B, nq, nk, D)
            rel.accumulate_grad(gr[0] if squeeze and rel.ndim == 3 else gr)

    parents = (q, k, v) if rel is None else (q, k, v, rel)
    return _make(out, parents, backward)


def sqrt(a) -> FeatureArray:
    a = as_feature(a)
    data = np.sqrt(a.data)

    def backward(g):
        a.accumulate_grad(g * 0.5 / data)

    return _make(data, (a,), backward)


def global_norm(arrays) -> float:
    s = 0.0
    for g in arrays:
        s += float((np.asarray(g, dtype=np.float64) ** 2).sum())
    return math.sqrt(s)
