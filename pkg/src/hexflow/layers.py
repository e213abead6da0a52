"""Differentiable building blocks as explicit forward/backward pairs.

Every forward returns (output, cache); the matching backward consumes the
upstream gradient plus that cache and returns input and weight gradients.
All functions preserve the dtype of their inputs, which is what lets the
gradient audit run the whole model in float64.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import erf

from . import backend
from .errors import ShapeMismatch

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


# --- linear ---

def linear_forward(x, w, b):
    y = x @ w
    if b is not None:
        y += b
    return y, (x, w)


def linear_backward(dy, cache):
    x, w = cache
    dx = dy @ w.T
    x2 = x.reshape(-1, x.shape[-1])
    dy2 = dy.reshape(-1, dy.shape[-1])
    dw = x2.T @ dy2
    db = dy2.sum(axis=0)
    return dx, dw, db


# --- GELU (exact erf form) ---

def gelu_forward(x):
    y = 0.5 * x * (1.0 + erf(x * _INV_SQRT2))
    return y, x


def gelu_backward(dy, x):
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    pdf = np.exp(-0.5 * x * x) * _INV_SQRT_2PI
    return dy * (cdf + x * pdf)


# --- layer normalization over the last axis ---

def layernorm_forward(x, gamma, beta, eps):
    """gamma/beta may be None for the plain (non-affine) normalization the
    task heads use."""
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv_std
    y = xhat if gamma is None else gamma * xhat + beta
    return y, (xhat, inv_std, gamma)


def layernorm_backward(dy, cache):
    xhat, inv_std, gamma = cache
    if gamma is None:
        dxhat = dy
        dgamma = dbeta = None
    else:
        dxhat = dy * gamma
        axes = tuple(range(dy.ndim - 1))
        dgamma = (dy * xhat).sum(axis=axes)
        dbeta = dy.sum(axis=axes)
    mean_d = dxhat.mean(axis=-1, keepdims=True)
    mean_dx = (dxhat * xhat).mean(axis=-1, keepdims=True)
    dx = inv_std * (dxhat - mean_d - xhat * mean_dx)
    return dx, dgamma, dbeta


# --- softmax / cross-entropy ---

def softmax(x, axis=-1):
    z = x - x.max(axis=axis, keepdims=True)
    np.exp(z, out=z)
    z /= z.sum(axis=axis, keepdims=True)
    return z


def log_softmax(x, axis=-1):
    z = x - x.max(axis=axis, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=axis, keepdims=True))


def cross_entropy_forward(logits, targets):
    """Mean softmax cross-entropy over integer targets; logits (n, C)."""
    n = logits.shape[0]
    logp = log_softmax(logits, axis=-1)
    loss = -logp[np.arange(n), targets].mean()
    return loss, (logp, targets)


def cross_entropy_backward(cache, scale=1.0):
    logp, targets = cache
    n = logp.shape[0]
    dlogits = np.exp(logp)
    dlogits[np.arange(n), targets] -= 1.0
    dlogits *= scale / n
    return dlogits


# --- multi-head self-attention over row-independent sequences ---

def split_heads(x, n_heads):
    rows, seq, dim = x.shape
    return x.reshape(rows, seq, n_heads, dim // n_heads).transpose(0, 2, 1, 3)


def merge_heads(x):
    rows, heads, seq, hd = x.shape
    return x.transpose(0, 2, 1, 3).reshape(rows, seq, heads * hd)


def mhsa_forward(x, wq, bq, wk, bk, wv, bv, wo, bo, n_heads, key_mask=None):
    """x: (rows, T, d); each row attends only within itself.

    key_mask (rows, T), nonzero entries are excluded as attention keys.
    """
    if x.ndim != 3:
        raise ShapeMismatch(f"expected (rows, T, d), got {x.shape}")
    d = x.shape[-1]
    head_dim = d // n_heads
    q, q_cache = linear_forward(x, wq, bq)
    k, k_cache = linear_forward(x, wk, bk)
    v, v_cache = linear_forward(x, wv, bv)
    qh = np.ascontiguousarray(split_heads(q, n_heads))
    kh = np.ascontiguousarray(split_heads(k, n_heads))
    vh = np.ascontiguousarray(split_heads(v, n_heads))
    scale = 1.0 / math.sqrt(head_dim)
    ctx, probs = backend.sdpa_forward(qh, kh, vh, key_mask, scale)
    merged = merge_heads(ctx)
    out, o_cache = linear_forward(merged, wo, bo)
    cache = (q_cache, k_cache, v_cache, o_cache, qh, kh, vh, probs, scale, n_heads)
    return out, cache


def mhsa_backward(dout, cache):
    q_cache, k_cache, v_cache, o_cache, qh, kh, vh, probs, scale, n_heads = cache
    dmerged, dwo, dbo = linear_backward(dout, o_cache)
    d_ctx = np.ascontiguousarray(split_heads(dmerged, n_heads))
    dqh, dkh, dvh = backend.sdpa_backward(d_ctx, qh, kh, vh, probs, scale)
    dq = merge_heads(dqh)
    dk = merge_heads(dkh)
    dv = merge_heads(dvh)
    dx_q, dwq, dbq = linear_backward(dq, q_cache)
    dx_k, dwk, dbk = linear_backward(dk, k_cache)
    dx_v, dwv, dbv = linear_backward(dv, v_cache)
    dx = dx_q + dx_k + dx_v
    return dx, (dwq, dbq, dwk, dbk, dwv, dbv, dwo, dbo)


def attention_probs(x, wq, bq, wk, bk, n_heads, key_mask=None):
    """Attention weight matrix only, for inspection in tests."""
    d = x.shape[-1]
    q = x @ wq + bq
    k = x @ wk + bk
    qh = np.ascontiguousarray(split_heads(q, n_heads))
    kh = np.ascontiguousarray(split_heads(k, n_heads))
    vh = np.zeros_like(qh)
    _, probs = backend.sdpa_forward(qh, kh, vh, key_mask, 1.0 / math.sqrt(d // n_heads))
    return probs
