"""Flow encoder: token embedding followed by stacked two-level attention
layers (within-packet attention over L tokens, then across-packet attention
at each of the L positions), post-norm residual blocks throughout.

Parameters live in a flat name -> array dict so they can be frozen by glob
pattern, checkpointed by manifest and audited one by one.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import layers
from .errors import IdOutOfRange, ShapeMismatch
from .tokenizer import PAD_ID, VOCAB_SIZE

INIT_STD = 0.02


@dataclass(frozen=True)
class ModelConfig:
    n_packets: int          # N rows per flow
    row_length: int         # L tokens per packet row
    embed_dim: int          # d
    n_layers: int           # stacked two-level attention layers
    n_heads: int
    mlp_hidden: int
    vocab_size: int = VOCAB_SIZE
    layernorm_eps: float = 1e-5

    def __post_init__(self):
        if self.embed_dim % self.n_heads != 0:
            raise ValueError(
                f"embed_dim {self.embed_dim} not divisible by {self.n_heads} heads"
            )

    @classmethod
    def desk(cls, **overrides) -> "ModelConfig":
        """Small CPU-friendly preset used by tests and audits."""
        base = dict(n_packets=5, row_length=32, embed_dim=64,
                    n_layers=2, n_heads=4, mlp_hidden=256)
        base.update(overrides)
        return cls(**base)

    @classmethod
    def paper_scale(cls, **overrides) -> "ModelConfig":
        """Full-size preset: L=128, N=5, d=768, 12 layers."""
        base = dict(n_packets=5, row_length=128, embed_dim=768,
                    n_layers=12, n_heads=12, mlp_hidden=3072)
        base.update(overrides)
        return cls(**base)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


def _trunc_normal(rng: np.random.Generator, shape, std: float, dtype) -> np.ndarray:
    """Normal(0, std) resampled until inside +-2 std."""
    out = rng.normal(0.0, std, size=shape)
    bad = np.abs(out) > 2 * std
    while np.any(bad):
        out[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(out) > 2 * std
    return out.astype(dtype)


def _stage_params(out, prefix, dim, hidden, rng, dtype):
    zeros = lambda *s: np.zeros(s, dtype=dtype)
    for name in ("wq", "wk", "wv", "wo"):
        out[f"{prefix}_mhsa.{name}"] = _trunc_normal(rng, (dim, dim), INIT_STD, dtype)
    for name in ("bq", "bk", "bv", "bo"):
        out[f"{prefix}_mhsa.{name}"] = zeros(dim)
    out[f"{prefix}_ln1.gamma"] = np.ones(dim, dtype=dtype)
    out[f"{prefix}_ln1.beta"] = zeros(dim)
    out[f"{prefix}_mlp.w1"] = _trunc_normal(rng, (dim, hidden), INIT_STD, dtype)
    out[f"{prefix}_mlp.b1"] = zeros(hidden)
    out[f"{prefix}_mlp.w2"] = _trunc_normal(rng, (hidden, dim), INIT_STD, dtype)
    out[f"{prefix}_mlp.b2"] = zeros(dim)
    out[f"{prefix}_ln2.gamma"] = np.ones(dim, dtype=dtype)
    out[f"{prefix}_ln2.beta"] = zeros(dim)


def init_params(
    config: ModelConfig,
    seed: int = 0,
    n_classes: int | None = None,
    dtype=np.float32,
) -> dict[str, np.ndarray]:
    """Create the full named-parameter registry.

    The masked-token prediction head shares its projection with the value
    embedding table (weight tying), so only its per-vocab bias appears here.
    The classifier head is added only when n_classes is given.
    """
    rng = np.random.Generator(np.random.PCG64(seed))
    d = config.embed_dim
    p: dict[str, np.ndarray] = {}
    p["embed.value"] = _trunc_normal(rng, (config.vocab_size, d), INIT_STD, dtype)
    p["embed.position"] = _trunc_normal(rng, (config.row_length, d), INIT_STD, dtype)
    for i in range(config.n_layers):
        _stage_params(p, f"layers.{i}.packet", d, config.mlp_hidden, rng, dtype)
        _stage_params(p, f"layers.{i}.flow", d, config.mlp_hidden, rng, dtype)
    p["mfp_head.bias"] = np.zeros(config.vocab_size, dtype=dtype)
    p["prpp_head.dense.w"] = _trunc_normal(rng, (d, d), INIT_STD, dtype)
    p["prpp_head.dense.b"] = np.zeros(d, dtype=dtype)
    p["prpp_head.pair.w"] = _trunc_normal(rng, (d, 2), INIT_STD, dtype)
    p["prpp_head.pair.b"] = np.zeros(2, dtype=dtype)
    p["fcl_head.dense.w"] = _trunc_normal(rng, (d, d), INIT_STD, dtype)
    p["fcl_head.dense.b"] = np.zeros(d, dtype=dtype)
    p["fcl_head.proj.w"] = _trunc_normal(rng, (d, d), INIT_STD, dtype)
    p["fcl_head.proj.b"] = np.zeros(d, dtype=dtype)
    if n_classes is not None:
        p["cls_head.hidden.w"] = _trunc_normal(rng, (d, d), INIT_STD, dtype)
        p["cls_head.hidden.b"] = np.zeros(d, dtype=dtype)
        p["cls_head.out.w"] = _trunc_normal(rng, (d, n_classes), INIT_STD, dtype)
        p["cls_head.out.b"] = np.zeros(n_classes, dtype=dtype)
    return p


def cast_params(params: dict[str, np.ndarray], dtype) -> dict[str, np.ndarray]:
    return {k: v.astype(dtype) for k, v in params.items()}


def accumulate(grads: dict, name: str, value) -> None:
    if name in grads:
        grads[name] += value
    else:
        grads[name] = value


# --- embedding ---

def embed_forward(params, ids, config: ModelConfig):
    """ids (B, N, L) int -> (B, N, L, d); position index runs within the
    packet row and is identical across packets."""
    if ids.ndim != 3:
        raise ShapeMismatch(f"expected (B, N, L) ids, got {ids.shape}")
    if ids.min() < 0 or ids.max() >= config.vocab_size:
        raise IdOutOfRange(
            f"token ids must be in [0, {config.vocab_size}), "
            f"saw [{ids.min()}, {ids.max()}]"
        )
    x = params["embed.value"][ids] + params["embed.position"][np.newaxis, np.newaxis, :, :]
    return x, ids


def embed_backward(dx, ids, params, grads):
    accumulate(grads, "embed.position", dx.sum(axis=(0, 1)))
    dval = np.zeros_like(params["embed.value"])
    np.add.at(dval, ids.reshape(-1), dx.reshape(-1, dx.shape[-1]))
    accumulate(grads, "embed.value", dval)


def embed(params, ids, config: ModelConfig):
    return embed_forward(params, ids, config)[0]


def pad_key_mask(ids) -> np.ndarray:
    """(B, N, L) uint8 mask of PAD positions, used as attention key mask."""
    return (ids == PAD_ID).astype(np.uint8)


# --- one attention+MLP stage (shared by the packet and flow levels) ---

def _stage_forward(x, params, prefix, config, key_mask):
    p = params
    a_out, a_cache = layers.mhsa_forward(
        x,
        p[f"{prefix}_mhsa.wq"], p[f"{prefix}_mhsa.bq"],
        p[f"{prefix}_mhsa.wk"], p[f"{prefix}_mhsa.bk"],
        p[f"{prefix}_mhsa.wv"], p[f"{prefix}_mhsa.bv"],
        p[f"{prefix}_mhsa.wo"], p[f"{prefix}_mhsa.bo"],
        config.n_heads, key_mask,
    )
    h1, ln1_cache = layers.layernorm_forward(
        x + a_out, p[f"{prefix}_ln1.gamma"], p[f"{prefix}_ln1.beta"], config.layernorm_eps
    )
    m1, fc1_cache = layers.linear_forward(h1, p[f"{prefix}_mlp.w1"], p[f"{prefix}_mlp.b1"])
    g, gelu_cache = layers.gelu_forward(m1)
    m2, fc2_cache = layers.linear_forward(g, p[f"{prefix}_mlp.w2"], p[f"{prefix}_mlp.b2"])
    h2, ln2_cache = layers.layernorm_forward(
        h1 + m2, p[f"{prefix}_ln2.gamma"], p[f"{prefix}_ln2.beta"], config.layernorm_eps
    )
    return h2, (a_cache, ln1_cache, fc1_cache, gelu_cache, fc2_cache, ln2_cache)


def _stage_backward(dh2, cache, prefix, grads):
    a_cache, ln1_cache, fc1_cache, gelu_cache, fc2_cache, ln2_cache = cache
    dsum2, dg2, db2 = layers.layernorm_backward(dh2, ln2_cache)
    accumulate(grads, f"{prefix}_ln2.gamma", dg2)
    accumulate(grads, f"{prefix}_ln2.beta", db2)
    dg, dw2, dbw2 = layers.linear_backward(dsum2, fc2_cache)
    accumulate(grads, f"{prefix}_mlp.w2", dw2)
    accumulate(grads, f"{prefix}_mlp.b2", dbw2)
    dm1 = layers.gelu_backward(dg, gelu_cache)
    dh1, dw1, dbw1 = layers.linear_backward(dm1, fc1_cache)
    accumulate(grads, f"{prefix}_mlp.w1", dw1)
    accumulate(grads, f"{prefix}_mlp.b1", dbw1)
    dh1 += dsum2
    dsum1, dg1, db1 = layers.layernorm_backward(dh1, ln1_cache)
    accumulate(grads, f"{prefix}_ln1.gamma", dg1)
    accumulate(grads, f"{prefix}_ln1.beta", db1)
    da, wgrads = layers.mhsa_backward(dsum1, a_cache)
    dwq, dbq, dwk, dbk, dwv, dbv, dwo, dbo = wgrads
    accumulate(grads, f"{prefix}_mhsa.wq", dwq)
    accumulate(grads, f"{prefix}_mhsa.bq", dbq)
    accumulate(grads, f"{prefix}_mhsa.wk", dwk)
    accumulate(grads, f"{prefix}_mhsa.bk", dbk)
    accumulate(grads, f"{prefix}_mhsa.wv", dwv)
    accumulate(grads, f"{prefix}_mhsa.bv", dbv)
    accumulate(grads, f"{prefix}_mhsa.wo", dwo)
    accumulate(grads, f"{prefix}_mhsa.bo", dbo)
    return dsum1 + da


# --- the two per-layer blocks ---

def packet_attention_forward(x, params, layer, config, key_mask=None):
    """Attention within each packet row independently; x (B, N, L, d).

    key_mask (B, N, L) marks PAD positions that may not be attended to.
    """
    b, n, l, d = x.shape
    rows = np.ascontiguousarray(x.reshape(b * n, l, d))
    mask = None if key_mask is None else key_mask.reshape(b * n, l)
    out, cache = _stage_forward(rows, params, f"layers.{layer}.packet", config, mask)
    return out.reshape(b, n, l, d), cache


def packet_attention_backward(dx, cache, layer, grads):
    b, n, l, d = dx.shape
    din = _stage_backward(dx.reshape(b * n, l, d), cache, f"layers.{layer}.packet", grads)
    return din.reshape(b, n, l, d)


def flow_attention_forward(x, params, layer, config):
    """Attention across the N packet slots at each token position; no key
    mask (all slots participate)."""
    b, n, l, d = x.shape
    cols = np.ascontiguousarray(x.transpose(0, 2, 1, 3).reshape(b * l, n, d))
    out, cache = _stage_forward(cols, params, f"layers.{layer}.flow", config, None)
    out = out.reshape(b, l, n, d).transpose(0, 2, 1, 3)
    return np.ascontiguousarray(out), cache


def flow_attention_backward(dx, cache, layer, grads):
    b, n, l, d = dx.shape
    dcols = np.ascontiguousarray(dx.transpose(0, 2, 1, 3).reshape(b * l, n, d))
    din = _stage_backward(dcols, cache, f"layers.{layer}.flow", grads)
    din = din.reshape(b, l, n, d).transpose(0, 2, 1, 3)
    return np.ascontiguousarray(din)


def packet_attention_block(x, params, layer, config, key_mask=None):
    return packet_attention_forward(x, params, layer, config, key_mask)[0]


def flow_attention_block(x, params, layer, config):
    return flow_attention_forward(x, params, layer, config)[0]


# --- full encoder ---

def encode_flow_forward(params, ids, config: ModelConfig, key_mask=None):
    """Token grid batch (B, N, L) -> activations (B, N, L, d) plus caches.

    key_mask defaults to the PAD mask derived from ids.
    """
    if key_mask is None:
        key_mask = pad_key_mask(ids)
    x, embed_cache = embed_forward(params, ids, config)
    caches = []
    for layer in range(config.n_layers):
        x, pkt_cache = packet_attention_forward(x, params, layer, config, key_mask)
        if __debug__:
            assert np.all(np.isfinite(x)), f"non-finite after packet block {layer}"
        x, flow_cache = flow_attention_forward(x, params, layer, config)
        if __debug__:
            assert np.all(np.isfinite(x)), f"non-finite after flow block {layer}"
        caches.append((pkt_cache, flow_cache))
    return x, (embed_cache, caches)


def encode_flow_backward(dx, cache, params, config: ModelConfig, grads):
    embed_cache, caches = cache
    for layer in range(config.n_layers - 1, -1, -1):
        pkt_cache, flow_cache = caches[layer]
        dx = flow_attention_backward(dx, flow_cache, layer, grads)
        dx = packet_attention_backward(dx, pkt_cache, layer, grads)
    embed_backward(dx, embed_cache, params, grads)


def encode_flow(grid_ids, params, config: ModelConfig):
    """Forward-only convenience; returns the final (B, N, L, d) tensor."""
    return encode_flow_forward(params, grid_ids, config)[0]


def extract_cls(x: np.ndarray) -> np.ndarray:
    """Per-packet summary vectors: the token-0 slice, (B, N, d) view."""
    if x.ndim != 4:
        raise ShapeMismatch(f"expected (B, N, L, d), got {x.shape}")
    return x[:, :, 0, :]


# --- attention cost accounting ---

def count_attention_flops(config: ModelConfig, mode: str) -> int:
    """Multiply-accumulate count (x2 for multiply+add) of the attention
    score and value-mix products for one layer.

    "tla" covers the two-level scheme (per-packet over L, per-position over
    N); "flat" covers attention over the flattened N*L sequence.
    """
    n, l, d = config.n_packets, config.row_length, config.embed_dim
    if mode.lower() == "tla":
        return 2 * (n * l * l * d + l * n * n * d)
    if mode.lower() == "flat":
        return 2 * (n * l) ** 2 * d
    raise ValueError(f"mode must be 'tla' or 'flat', got {mode!r}")


def attention_flop_ratio(config: ModelConfig) -> float:
    return count_attention_flops(config, "flat") / count_attention_flops(config, "tla")


def count_attention_macs_bruteforce(n_packets: int, row_length: int, embed_dim: int):
    """Run single-head attention score+mix with explicit loops, counting
    every multiply-accumulate.  Independent check of the analytic formula;
    only sensible at tiny sizes.
    """
    rng = np.random.Generator(np.random.PCG64(0))

    def attend(seqs):
        count = 0
        for x in seqs:
            t = x.shape[0]
            scores = np.empty((t, t))
            for i in range(t):
                for j in range(t):
                    s = 0.0
                    for c in range(embed_dim):
                        s += x[i, c] * x[j, c]
                        count += 1
                    scores[i, j] = s
            probs = layers.softmax(scores, axis=-1)
            out = np.zeros_like(x)
            for i in range(t):
                for j in range(t):
                    for c in range(embed_dim):
                        out[i, c] += probs[i, j] * x[j, c]
                        count += 1
        return count

    flow = rng.normal(size=(n_packets, row_length, embed_dim))
    tla = attend(list(flow)) + attend([flow[:, j, :] for j in range(row_length)])
    flat = attend([flow.reshape(n_packets * row_length, embed_dim)])
    return tla, flat
