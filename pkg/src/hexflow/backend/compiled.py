"""numpy-facing wrapper around the Cython kernels.

Importing this module fails cleanly when the extension was not built;
the package then falls back to backend.pure.
"""

from __future__ import annotations

import numpy as np

from . import _kernels

NAME = "compiled"

_DUMMY_MASK = np.zeros((1, 1), dtype=np.uint8)


def sdpa_forward(q, k, v, key_mask, scale):
    q = np.ascontiguousarray(q)
    k = np.ascontiguousarray(k)
    v = np.ascontiguousarray(v)
    ctx = np.empty_like(q)
    rows, heads, t, _ = q.shape
    probs = np.empty((rows, heads, t, t), dtype=q.dtype)
    if key_mask is None:
        mask, use_mask = _DUMMY_MASK, False
    else:
        mask, use_mask = np.ascontiguousarray(key_mask, dtype=np.uint8), True
    _kernels.sdpa_forward_impl(q, k, v, mask, float(scale), use_mask, ctx, probs)
    return ctx, probs


def sdpa_backward(d_ctx, q, k, v, probs, scale):
    d_ctx = np.ascontiguousarray(d_ctx)
    q = np.ascontiguousarray(q)
    k = np.ascontiguousarray(k)
    v = np.ascontiguousarray(v)
    probs = np.ascontiguousarray(probs)
    dq = np.zeros_like(q)
    dk = np.zeros_like(k)
    dv = np.zeros_like(v)
    t = q.shape[2]
    scratch = np.empty((t, t), dtype=q.dtype)
    _kernels.sdpa_backward_impl(d_ctx, q, k, v, probs, float(scale), dq, dk, dv, scratch)
    return dq, dk, dv
