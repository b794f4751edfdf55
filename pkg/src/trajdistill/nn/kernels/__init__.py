"""Kernel backend selection.

The compiled extension is used when importable; otherwise the numpy
reference implementation. Override with TRAJDISTILL_KERNELS=cython|python
(cython raises if the extension is missing; the default "auto" falls back
silently). Both backends implement the identical contract and are compared
by tests and by benchmarks/bench_kernels.py.
"""

import os

_requested = os.environ.get("TRAJDISTILL_KERNELS", "auto").lower()

if _requested not in ("auto", "cython", "python"):
    raise RuntimeError(f"TRAJDISTILL_KERNELS must be auto|cython|python, got {_requested!r}")

if _requested in ("auto", "cython"):
    try:
        from . import _attn_cy as _impl
    except ImportError:
        if _requested == "cython":
            raise
        from . import _attn_np as _impl
else:
    from . import _attn_np as _impl

BACKEND = _impl.BACKEND_NAME
attention_forward = _impl.attention_forward
attention_backward = _impl.attention_backward


def get_backend(name):
    """Return a specific backend module (used by tests and benchmarks)."""
    if name == "python":
        from . import _attn_np
        return _attn_np
    if name == "cython":
        from . import _attn_cy
        return _attn_cy
    raise ValueError(f"unknown kernel backend {name!r}")
