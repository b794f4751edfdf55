# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled attention kernels: fused mask/softmax/weighted-sum loops.

Same contract as the numpy backend (see _attn_np.py). The pairwise
relative-embedding variant never materializes K+rel / V+rel, which is the
main win over the vectorized fallback.
"""

import numpy as np

cimport cython
cimport numpy as cnp
from libc.math cimport exp as cexp
from libc.math cimport sqrt as csqrt

ctypedef fused floating:
    float
    double

BACKEND_NAME = "cython"


@cython.boundscheck(False)
@cython.wraparound(False)
cdef void _fwd_norel(floating[:, :, :, ::1] q, floating[:, :, :, ::1] k,
                     floating[:, :, :, ::1] v, cnp.uint8_t[:, :, ::1] mask,
                     floating[:, :, :, ::1] out, floating[:, :, :, ::1] w,
                     floating[::1] s) nogil:
    cdef Py_ssize_t B = q.shape[0], H = q.shape[1], nq = q.shape[2], dh = q.shape[3]
    cdef Py_ssize_t nk = k.shape[2]
    cdef Py_ssize_t b, h, qi, ki, d
    cdef floating scale = <floating>(1.0 / csqrt(<double>dh))
    cdef floating smax, z, acc, wi
    cdef bint any_key
    for b in range(B):
        for h in range(H):
            for qi in range(nq):
                any_key = False
                smax = 0
                for ki in range(nk):
                    if mask[b, qi, ki]:
                        acc = 0
                        for d in range(dh):
                            acc += q[b, h, qi, d] * k[b, h, ki, d]
                        acc *= scale
                        s[ki] = acc
                        if not any_key or acc > smax:
                            smax = acc
                        any_key = True
                if not any_key:
                    continue
                z = 0
                for ki in range(nk):
                    if mask[b, qi, ki]:
                        wi = cexp(s[ki] - smax)
                        w[b, h, qi, ki] = wi
                        z += wi
                for ki in range(nk):
                    if mask[b, qi, ki]:
                        wi = w[b, h, qi, ki] / z
                        w[b, h, qi, ki] = wi
                        for d in range(dh):
                            out[b, h, qi, d] += wi * v[b, h, ki, d]


@cython.boundscheck(False)
@cython.wraparound(False)
cdef void _fwd_rel(floating[:, :, :, ::1] q, floating[:, :, :, ::1] k,
                   floating[:, :, :, ::1] v, cnp.uint8_t[:, :, ::1] mask,
                   floating[:, :, :, :, ::1] rel,
                   floating[:, :, :, ::1] out, floating[:, :, :, ::1] w,
                   floating[::1] s) nogil:
    cdef Py_ssize_t B = q.shape[0], H = q.shape[1], nq = q.shape[2], dh = q.shape[3]
    cdef Py_ssize_t nk = k.shape[2]
    cdef Py_ssize_t b, h, qi, ki, d
    cdef floating scale = <floating>(1.0 / csqrt(<double>dh))
    cdef floating smax, z, acc, wi
    cdef bint any_key
    for b in range(B):
        for h in range(H):
            for qi in range(nq):
                any_key = False
                smax = 0
                for ki in range(nk):
                    if mask[b, qi, ki]:
                        acc = 0
                        for d in range(dh):
                            acc += q[b, h, qi, d] * (k[b, h, ki, d] + rel[b, h, qi, ki, d])
                        acc *= scale
                        s[ki] = acc
                        if not any_key or acc > smax:
                            smax = acc
                        any_key = True
                if not any_key:
                    continue
                z = 0
                for ki in range(nk):
                    if mask[b, qi, ki]:
                        wi = cexp(s[ki] - smax)
                        w[b, h, qi, ki] = wi
                        z += wi
                for ki in range(nk):
                    if mask[b, qi, ki]:
                        wi = w[b, h, qi, ki] / z
                        w[b, h, qi, ki] = wi
                        for d in range(dh):
                            out[b, h, qi, d] += wi * (v[b, h, ki, d] + rel[b, h, qi, ki, d])


@cython.boundscheck(False)
@cython.wraparound(False)
cdef void _bwd_norel(floating[:, :, :, ::1] g, floating[:, :, :, ::1] q,
                     floating[:, :, :, ::1] k, floating[:, :, :, ::1] v,
                     cnp.uint8_t[:, :, ::1] mask, floating[:, :, :, ::1] w,
                     floating[:, :, :, ::1] gq, floating[:, :, :, ::1] gk,
                     floating[:, :, :, ::1] gv, floating[::1] gw) nogil:
    cdef Py_ssize_t B = q.shape[0], H = q.shape[1], nq = q.shape[2], dh = q.shape[3]
    cdef Py_ssize_t nk = k.shape[2]
    cdef Py_ssize_t b, h, qi, ki, d
    cdef floating scale = <floating>(1.0 / csqrt(<double>dh))
    cdef floating acc, dot, gsk, wi
    for b in range(B):
        for h in range(H):
            for qi in range(nq):
                dot = 0
                for ki in range(nk):
                    if mask[b, qi, ki]:
                        acc = 0
                        for d in range(dh):
                            acc += g[b, h, qi, d] * v[b, h, ki, d]
                        gw[ki] = acc
                        dot += w[b, h, qi, ki] * acc
                for ki in range(nk):
                    if mask[b, qi, ki]:
                        wi = w[b, h, qi, ki]
                        gsk = wi * (gw[ki] - dot) * scale
                        for d in range(dh):
                            gq[b, h, qi, d] += gsk * k[b, h, ki, d]
                            gk[b, h, ki, d] += gsk * q[b, h, qi, d]
                            gv[b, h, ki, d] += wi * g[b, h, qi, d]


@cython.boundscheck(False)
@cython.wraparound(False)
cdef void _bwd_rel(floating[:, :, :, ::1] g, floating[:, :, :, ::1] q,
                   floating[:, :, :, ::1] k, floating[:, :, :, ::1] v,
                   cnp.uint8_t[:, :, ::1] mask, floating[:, :, :, :, ::1] rel,
                   floating[:, :, :, ::1] w,
                   floating[:, :, :, ::1] gq, floating[:, :, :, ::1] gk,
                   floating[:, :, :, ::1] gv, floating[:, :, :, :, ::1] grel,
                   floating[::1] gw) nogil:
    cdef Py_ssize_t B = q.shape[0], H = q.shape[1], nq = q.shape[2], dh = q.shape[3]
    cdef Py_ssize_t nk = k.shape[2]
    cdef Py_ssize_t b, h, qi, ki, d
    cdef floating scale = <floating>(1.0 / csqrt(<double>dh))
    cdef floating acc, dot, gsk, wi
    for b in range(B):
        for h in range(H):
            for qi in range(nq):
                dot = 0
                for ki in range(nk):
                    if mask[b, qi, ki]:
                        acc = 0
                        for d in range(dh):
                            acc += g[b, h, qi, d] * (v[b, h, ki, d] + rel[b, h, qi, ki, d])
                        gw[ki] = acc
                        dot += w[b, h, qi, ki] * acc
                for ki in range(nk):
                    if mask[b, qi, ki]:
                        wi = w[b, h, qi, ki]
                        gsk = wi * (gw[ki] - dot) * scale
                        for d in range(dh):
                            gq[b, h, qi, d] += gsk * (k[b, h, ki, d] + rel[b, h, qi, ki, d])
                            gk[b, h, ki, d] += gsk * q[b, h, qi, d]
                            gv[b, h, ki, d] += wi * g[b, h, qi, d]
                            grel[b, h, qi, ki, d] = gsk * q[b, h, qi, d] + wi * g[b, h, qi, d]


def attention_forward(q, k, v, mask, rel):
    B, H, nq, dh = q.shape
    nk = k.shape[2]
    out = np.zeros((B, H, nq, dh), dtype=q.dtype)
    w = np.zeros((B, H, nq, nk), dtype=q.dtype)
    s = np.empty(nk, dtype=q.dtype)
    if q.dtype == np.float64:
        if rel is None:
            _fwd_norel[double](q, k, v, mask, out, w, s)
        else:
            _fwd_rel[double](q, k, v, mask, rel, out, w, s)
    else:
        if rel is None:
            _fwd_norel[float](q, k, v, mask, out, w, s)
        else:
            _fwd_rel[float](q, k, v, mask, rel, out, w, s)
    return out, w


def attention_backward(g, q, k, v, mask, rel, w):
    B, H, nq, dh = q.shape
    nk = k.shape[2]
    gq = np.zeros_like(q)
    gk = np.zeros_like(k)
    gv = np.zeros_like(v)
    gw = np.empty(nk, dtype=q.dtype)
    if rel is None:
        if q.dtype == np.float64:
            _bwd_norel[double](g, q, k, v, mask, w, gq, gk, gv, gw)
        else:
            _bwd_norel[float](g, q, k, v, mask, w, gq, gk, gv, gw)
        return gq, gk, gv, None
    grel = np.zeros_like(rel)
    if q.dtype == np.float64:
        _bwd_rel[double](g, q, k, v, mask, rel, w, gq, gk, gv, grel, gw)
    else:
        _bwd_rel[float](g, q, k, v, mask, rel, w, gq, gk, gv, grel, gw)
    return gq, gk, gv, grel
