"""Pure-numpy attention kernels; the reference twin of the compiled ones.

Shapes: q, k, v are (rows, heads, T, head_dim); an optional key mask of
shape (rows, T) marks positions that must not be attended to (nonzero =
disallowed).  Probabilities are materialized for the backward pass.
"""

from __future__ import annotations

import numpy as np

NAME = "pure"


def sdpa_forward(q, k, v, key_mask, scale):
    scores = (q @ k.swapaxes(-1, -2)) * scale
    if key_mask is not None:
        scores = np.where(key_mask[:, None, None, :] != 0, -np.inf, scores)
    scores -= scores.max(axis=-1, keepdims=True)
    np.exp(scores, out=scores)
    probs = scores / scores.sum(axis=-1, keepdims=True)
    ctx = probs @ v
    return ctx, probs


def sdpa_backward(d_ctx, q, k, v, probs, scale):
    dv = probs.swapaxes(-1, -2) @ d_ctx
    dp = d_ctx @ v.swapaxes(-1, -2)
    ds = probs * (dp - (dp * probs).sum(axis=-1, keepdims=True))
    ds *= scale
    dq = ds @ k
    dk = ds.swapaxes(-1, -2) @ q
    return dq, dk, dv
