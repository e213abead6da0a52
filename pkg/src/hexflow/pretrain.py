"""The three self-supervised objectives and their weighted combination.

MFP: recover randomly masked content tokens from context (masked-LM
cross-entropy, prediction head weight-tied to the value embedding).
PRPP: from per-packet CLS vectors, classify for every ordered pair of rows
whether one packet arrived before the other; rows are fed shuffled so the
labels carry information.
FCL: contrastive separation of flows — same-flow packet pairs are the
positives, the other flows' packets at the same position are the negatives,
under cosine similarity.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import layers
from .errors import (
    DegenerateBatch,
    EmptyPlan,
    InvalidPermutation,
    NoContentTokens,
    ShapeMismatch,
)
from .model import ModelConfig, accumulate, encode_flow_backward, encode_flow_forward, extract_cls, pad_key_mask
from .tokenizer import CONTENT_VOCAB, MASK_ID, TokenGrid

HEAD_LN_EPS = 1e-5
COSINE_EPS = 1e-8


# --- masking ---

@dataclass
class MaskingPlan:
    """Masked (packet, position) pairs of one grid and their original ids."""

    positions: np.ndarray      # (P, 2) int
    original_ids: np.ndarray   # (P,) int32
    content_total: int
    exact_ratio: float

    def __len__(self) -> int:
        return self.positions.shape[0]


@dataclass
class BatchMaskingPlan:
    positions: np.ndarray      # (P, 3) int: batch, packet, position
    original_ids: np.ndarray   # (P,) int32
    content_total: int

    def __len__(self) -> int:
        return self.positions.shape[0]


def _mask_ids(ids, ratio, rng, policy):
    """Shared masking core; returns (masked copy, selected bool array)."""
    content = ids < CONTENT_VOCAB
    selected = content & (rng.random(ids.shape) < ratio)
    masked = ids.copy()
    if policy == "always-mask":
        masked[selected] = MASK_ID
    elif policy == "bert":
        # 80% MASK, 10% random content token, 10% keep
        roll = rng.random(ids.shape)
        masked[selected & (roll < 0.8)] = MASK_ID
        rand = selected & (roll >= 0.8) & (roll < 0.9)
        masked[rand] = rng.integers(0, CONTENT_VOCAB, size=int(rand.sum()))
    else:
        raise ValueError(f"unknown masking policy {policy!r}")
    return masked, selected, int(content.sum())


def apply_mfp_mask(
    grid: TokenGrid,
    ratio: float,
    rng: np.random.Generator,
    policy: str = "always-mask",
) -> tuple[TokenGrid, MaskingPlan]:
    """Independently mask each content token with probability `ratio`.

    CLS and PAD are never touched.  Deterministic for a given generator
    state.
    """
    if not 0.0 < ratio < 1.0:
        raise ValueError(f"ratio must be in (0, 1), got {ratio}")
    masked, selected, content_total = _mask_ids(grid.ids, ratio, rng, policy)
    if content_total == 0:
        raise NoContentTokens("grid has no maskable content tokens")
    pos = np.argwhere(selected)
    plan = MaskingPlan(
        positions=pos,
        original_ids=grid.ids[selected],
        content_total=content_total,
        exact_ratio=pos.shape[0] / content_total,
    )
    return TokenGrid(masked, grid.content_lens.copy(), grid.label), plan


def mask_batch(
    ids: np.ndarray,
    ratio: float,
    rng: np.random.Generator,
    policy: str = "always-mask",
) -> tuple[np.ndarray, BatchMaskingPlan]:
    """Batch variant over (B, N, L) ids; an empty selection is allowed here
    and handled by the caller."""
    masked, selected, content_total = _mask_ids(ids, ratio, rng, policy)
    pos = np.argwhere(selected)
    return masked, BatchMaskingPlan(pos, ids[selected], content_total)


# --- masked-token prediction ---

def mfp_loss_forward(x, plan: BatchMaskingPlan | MaskingPlan, params):
    """Mean cross-entropy over masked positions; x is the encoder output.

    The vocab projection reuses embed.value (tied weights) plus a bias.
    """
    if len(plan) == 0:
        raise EmptyPlan("masking plan selected no positions")
    if isinstance(plan, MaskingPlan):
        if x.ndim != 3:
            raise ShapeMismatch("single-grid plan needs (N, L, d) activations")
        h = x[plan.positions[:, 0], plan.positions[:, 1]]
        index = plan.positions
    else:
        h = x[plan.positions[:, 0], plan.positions[:, 1], plan.positions[:, 2]]
        index = plan.positions
    table = params["embed.value"]
    logits = h @ table.T + params["mfp_head.bias"]
    loss, ce_cache = layers.cross_entropy_forward(logits, plan.original_ids)
    return float(loss), (h, index, ce_cache, x.shape)


def mfp_loss_backward(cache, params, grads, dx, scale=1.0):
    """Adds parameter gradients and scatters dh into dx at the masked
    positions."""
    h, index, ce_cache, _ = cache
    dlogits = layers.cross_entropy_backward(ce_cache, scale)
    table = params["embed.value"]
    dh = dlogits @ table
    accumulate(grads, "embed.value", dlogits.T @ h)
    accumulate(grads, "mfp_head.bias", dlogits.sum(axis=0))
    if index.shape[1] == 3:
        np.add.at(dx, (index[:, 0], index[:, 1], index[:, 2]), dh)
    else:
        np.add.at(dx, (index[:, 0], index[:, 1]), dh)


def mfp_loss(encoder_output, plan, params) -> float:
    return mfp_loss_forward(encoder_output, plan, params)[0]


# --- packet order prediction ---

def _order_labels(packet_order: np.ndarray, n: int) -> np.ndarray:
    """z[b, i, j] = 1 where the packet in row i arrived before row j."""
    po = np.asarray(packet_order)
    if po.ndim == 1:
        po = po[np.newaxis, :]
    if po.shape[-1] != n or np.any(np.sort(po, axis=-1) != np.arange(n)):
        raise InvalidPermutation(f"packet_order rows must permute 0..{n - 1}")
    return (po[:, :, np.newaxis] < po[:, np.newaxis, :]).astype(np.int64)


def _prpp_head_forward(cls, params, eps):
    a, fc_cache = layers.linear_forward(
        cls, params["prpp_head.dense.w"], params["prpp_head.dense.b"]
    )
    g, gelu_cache = layers.gelu_forward(a)
    p, ln_cache = layers.layernorm_forward(g, None, None, eps)
    diffs = p[:, :, np.newaxis, :] - p[:, np.newaxis, :, :]      # (B, N, N, d)
    raw, pair_cache = layers.linear_forward(
        diffs, params["prpp_head.pair.w"], params["prpp_head.pair.b"]
    )
    return raw, (fc_cache, gelu_cache, ln_cache, pair_cache)


def prpp_logits(cls, params, eps: float = HEAD_LN_EPS) -> np.ndarray:
    """Pairwise order probabilities, (B, N, N, 2); entry [..., 0] is the
    probability that row i's packet precedes row j's.  Diagonal entries are
    never consumed by the loss."""
    if cls.ndim != 3:
        raise ShapeMismatch(f"expected (B, N, d) CLS array, got {cls.shape}")
    raw, _ = _prpp_head_forward(cls, params, eps)
    return layers.softmax(raw, axis=-1)


def prpp_loss(pair_probs, packet_order) -> float:
    """Cross-entropy against the arrival-order labels, summed over ordered
    pairs i != j and averaged over the batch."""
    b, n = pair_probs.shape[0], pair_probs.shape[1]
    z = _order_labels(packet_order, n)
    if z.shape[0] == 1 and b > 1:
        z = np.broadcast_to(z, (b, n, n))
    off = ~np.eye(n, dtype=bool)
    p_before = pair_probs[..., 0]
    p_after = pair_probs[..., 1]
    terms = z * np.log(p_before) + (1 - z) * np.log(p_after)
    return float(-terms[:, off].sum() / b)


def prpp_task_forward(cls, params, packet_order, eps: float = HEAD_LN_EPS):
    b, n = cls.shape[0], cls.shape[1]
    raw, head_cache = _prpp_head_forward(cls, params, eps)
    z = _order_labels(packet_order, n)
    if z.shape[0] == 1 and b > 1:
        z = np.broadcast_to(z, (b, n, n)).copy()
    logp = layers.log_softmax(raw, axis=-1)
    off = ~np.eye(n, dtype=bool)
    picked = np.where(z == 1, logp[..., 0], logp[..., 1])
    loss = -picked[:, off].sum() / b
    return float(loss), (raw, z, off, head_cache, b)


def prpp_task_backward(cache, params, grads, scale=1.0):
    raw, z, off, head_cache, b = cache
    fc_cache, gelu_cache, ln_cache, pair_cache = head_cache
    probs = layers.softmax(raw, axis=-1)
    target = np.stack([z == 1, z == 0], axis=-1)
    draw = (probs - target) * (scale / b)
    draw[:, ~off, :] = 0.0
    ddiffs, dw2, db2 = layers.linear_backward(draw, pair_cache)
    accumulate(grads, "prpp_head.pair.w", dw2)
    accumulate(grads, "prpp_head.pair.b", db2)
    dp = ddiffs.sum(axis=2) - ddiffs.sum(axis=1)
    dg, _, _ = layers.layernorm_backward(dp, ln_cache)
    da = layers.gelu_backward(dg, gelu_cache)
    dcls, dw1, db1 = layers.linear_backward(da, fc_cache)
    accumulate(grads, "prpp_head.dense.w", dw1)
    accumulate(grads, "prpp_head.dense.b", db1)
    return dcls


# --- flow contrastive learning ---

def _fcl_head_forward(cls, params, eps):
    a, fc_cache = layers.linear_forward(
        cls, params["fcl_head.dense.w"], params["fcl_head.dense.b"]
    )
    g, gelu_cache = layers.gelu_forward(a)
    p, ln_cache = layers.layernorm_forward(g, None, None, eps)
    c, proj_cache = layers.linear_forward(
        p, params["fcl_head.proj.w"], params["fcl_head.proj.b"]
    )
    return c, (fc_cache, gelu_cache, ln_cache, proj_cache)


def fcl_projection(cls, params, eps: float = HEAD_LN_EPS) -> np.ndarray:
    """Two-stage projection of CLS vectors into the contrastive space."""
    if cls.ndim != 3:
        raise ShapeMismatch(f"expected (B, N, d) CLS array, got {cls.shape}")
    return _fcl_head_forward(cls, params, eps)[0]


def _fcl_core_forward(c):
    b, n, d = c.shape
    if b < 2 or n < 2:
        raise DegenerateBatch(f"need B >= 2 and N >= 2, got B={b}, N={n}")
    flat = c.reshape(b * n, d)
    norms = np.linalg.norm(flat, axis=-1, keepdims=True)
    u = flat / (norms + COSINE_EPS)
    sim = u @ u.T                                   # (B*N, B*N) cosine matrix
    s4 = sim.reshape(b, n, b, n)
    # candidate axis = flow id of the second element; positive is own flow
    t = s4.transpose(0, 1, 3, 2)                    # (i1, j1, j2, i2)
    logp = layers.log_softmax(t, axis=-1)
    off = ~np.eye(n, dtype=bool)
    idx = np.arange(b)
    picked = logp[idx, :, :, idx]                   # (B, N, N): own flow's slot
    loss = -picked[:, off].sum()
    return float(loss), (c, u, norms, t, off)


def fcl_loss(c) -> float:
    """Contrastive loss over a batch of projected CLS vectors (canonical
    raw-sum form)."""
    return _fcl_core_forward(np.asarray(c))[0]


def fcl_loss_stats(c) -> tuple[float, float, int]:
    """(sum, per-term mean, term count)."""
    b, n = c.shape[0], c.shape[1]
    total = fcl_loss(c)
    count = b * n * (n - 1)
    return total, total / count, count


def fcl_task_forward(cls, params, eps: float = HEAD_LN_EPS):
    c, head_cache = _fcl_head_forward(cls, params, eps)
    loss, core_cache = _fcl_core_forward(c)
    return loss, (core_cache, head_cache)


def fcl_task_backward(cache, params, grads, scale=1.0):
    core_cache, head_cache = cache
    c, u, norms, t, off = core_cache
    fc_cache, gelu_cache, ln_cache, proj_cache = head_cache
    b, n, d = c.shape
    dt = layers.softmax(t, axis=-1)
    idx = np.arange(b)
    dt[idx, :, :, idx] -= 1.0
    dt[:, ~off, :] = 0.0
    dt *= scale
    dsim = dt.transpose(0, 1, 3, 2).reshape(b * n, b * n)
    du = dsim @ u + dsim.T @ u
    proj = (du * u).sum(axis=-1, keepdims=True)
    dflat = (du - proj * u * ((norms + COSINE_EPS) / np.maximum(norms, 1e-30))) / (
        norms + COSINE_EPS
    )
    dc = dflat.reshape(b, n, d)
    dp, dw4, db4 = layers.linear_backward(dc, proj_cache)
    accumulate(grads, "fcl_head.proj.w", dw4)
    accumulate(grads, "fcl_head.proj.b", db4)
    dg, _, _ = layers.layernorm_backward(dp, ln_cache)
    da = layers.gelu_backward(dg, gelu_cache)
    dcls, dw3, db3 = layers.linear_backward(da, fc_cache)
    accumulate(grads, "fcl_head.dense.w", dw3)
    accumulate(grads, "fcl_head.dense.b", db3)
    return dcls


# --- combination ---

@dataclass
class LossBreakdown:
    mfp: float
    prpp: float
    fcl: float
    total: float
    alpha: float
    beta: float


def combined_pretrain_loss(
    mfp: float, prpp: float, fcl: float, alpha: float = 0.2, beta: float = 0.2
) -> LossBreakdown:
    """Weighted total; the per-task values are kept alongside."""
    if alpha < 0 or beta < 0:
        raise ValueError("task weights must be non-negative")
    return LossBreakdown(mfp, prpp, fcl, mfp + alpha * prpp + beta * fcl, alpha, beta)


# --- full pre-training objective over one batch ---

@dataclass
class PretrainBatch:
    """Model-ready batch: rows already shuffled, content tokens masked."""

    ids: np.ndarray                 # (B, N, L) int32, masked
    plan: BatchMaskingPlan
    packet_order: np.ndarray        # (B, N): original arrival rank per row
    key_mask: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.key_mask is None:
            self.key_mask = pad_key_mask(self.ids)


def make_pretrain_batch(
    grid_ids: np.ndarray,
    rng: np.random.Generator,
    mask_ratio: float = 0.15,
    shuffle: bool = True,
    policy: str = "always-mask",
) -> PretrainBatch:
    """Shuffle each flow's rows (recording the arrival ranks) then mask."""
    b, n, _ = grid_ids.shape
    if shuffle:
        order = np.stack([rng.permutation(n) for _ in range(b)])
        shuffled = np.take_along_axis(grid_ids, order[:, :, np.newaxis], axis=1)
    else:
        order = np.tile(np.arange(n), (b, 1))
        shuffled = grid_ids.copy()
    masked, plan = mask_batch(shuffled, mask_ratio, rng, policy)
    return PretrainBatch(masked, plan, order)


def pretrain_objective(
    params,
    config: ModelConfig,
    batch: PretrainBatch,
    alpha: float = 0.2,
    beta: float = 0.2,
    with_grads: bool = True,
):
    """Forward (and optionally backward) of the combined objective.

    Returns (LossBreakdown, grads-or-None).  An empty masking plan
    contributes zero to the total instead of raising, so training survives
    pathological batches.
    """
    x, enc_cache = encode_flow_forward(params, batch.ids, config, batch.key_mask)
    cls = extract_cls(x)

    have_mask = len(batch.plan) > 0
    if have_mask:
        mfp, mfp_cache = mfp_loss_forward(x, batch.plan, params)
    else:
        mfp, mfp_cache = 0.0, None
    prpp, prpp_cache = prpp_task_forward(cls, params, batch.packet_order, config.layernorm_eps)
    fcl, fcl_cache = fcl_task_forward(cls, params, config.layernorm_eps)
    breakdown = combined_pretrain_loss(mfp, prpp, fcl, alpha, beta)
    if not with_grads:
        return breakdown, None

    grads: dict[str, np.ndarray] = {}
    dx = np.zeros_like(x)
    if have_mask:
        mfp_loss_backward(mfp_cache, params, grads, dx, scale=1.0)
    dcls = prpp_task_backward(prpp_cache, params, grads, scale=alpha)
    dcls = dcls + fcl_task_backward(fcl_cache, params, grads, scale=beta)
    dx[:, :, 0, :] += dcls
    encode_flow_backward(dx, enc_cache, params, config, grads)
    return breakdown, grads
