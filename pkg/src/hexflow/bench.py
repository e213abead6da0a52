"""Cost accounting and wall-clock comparisons.

Two questions answered here: how much cheaper the two-level attention is
than flat attention over all N*L tokens (analytic FLOPs plus measured
forward time), and how the compiled attention kernel compares with the pure
NumPy one.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import backend, layers
from .model import ModelConfig, attention_flop_ratio, count_attention_flops, init_params


def _median_time(fn, repeats: int) -> float:
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return float(np.median(times))


def _mhsa(x, params, prefix, n_heads):
    out, _ = layers.mhsa_forward(
        x,
        params[f"{prefix}.wq"], params[f"{prefix}.bq"],
        params[f"{prefix}.wk"], params[f"{prefix}.bk"],
        params[f"{prefix}.wv"], params[f"{prefix}.bv"],
        params[f"{prefix}.wo"], params[f"{prefix}.bo"],
        n_heads,
    )
    return out


def tla_attention_forward(params, x, layer: int, n_heads: int):
    """The two attention passes of one layer (packet rows, then flow
    columns), without the surrounding norms and MLPs; used for timing."""
    b, n, l, d = x.shape
    h = _mhsa(x.reshape(b * n, l, d), params, f"layers.{layer}.packet_mhsa", n_heads)
    cols = np.ascontiguousarray(
        h.reshape(b, n, l, d).transpose(0, 2, 1, 3).reshape(b * l, n, d)
    )
    out = _mhsa(cols, params, f"layers.{layer}.flow_mhsa", n_heads)
    return out.reshape(b, l, n, d).transpose(0, 2, 1, 3)


def flat_attention_forward(params, x, layer: int, n_heads: int):
    """One attention pass over the flattened N*L token sequence, using the
    same per-layer weights as the packet attention; only used for timing."""
    b, n, l, d = x.shape
    out = _mhsa(x.reshape(b, n * l, d), params, f"layers.{layer}.packet_mhsa", n_heads)
    return out.reshape(b, n, l, d)


@dataclass
class AttentionBenchmark:
    config: ModelConfig
    batch_size: int
    tla_flops: int
    flat_flops: int
    flop_ratio: float
    tla_seconds: float
    flat_seconds: float

    def to_text(self) -> str:
        c = self.config
        lines = [
            f"scale: N={c.n_packets} L={c.row_length} d={c.embed_dim} "
            f"heads={c.n_heads} batch={self.batch_size}",
            f"attention FLOPs per layer: two-level {self.tla_flops:,} "
            f"vs flat {self.flat_flops:,}  (ratio {self.flop_ratio:.4f})",
            f"forward time per layer:    two-level {self.tla_seconds * 1e3:.2f} ms "
            f"vs flat {self.flat_seconds * 1e3:.2f} ms "
            f"(ratio {self.flat_seconds / max(self.tla_seconds, 1e-12):.2f})",
        ]
        return "\n".join(lines) + "\n"


def benchmark_attention(
    config: ModelConfig, batch_size: int = 4, repeats: int = 5, seed: int = 0
) -> AttentionBenchmark:
    """Analytic score/mix FLOPs and measured forward wall clock for one
    layer's attention, two-level vs flat."""
    params = init_params(config, seed=seed)
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(
        (batch_size, config.n_packets, config.row_length, config.embed_dim)
    ).astype(np.float32)

    def run_tla():
        tla_attention_forward(params, x, 0, config.n_heads)

    def run_flat():
        flat_attention_forward(params, x, 0, config.n_heads)

    run_tla(), run_flat()    # warm up allocators and lazy imports
    return AttentionBenchmark(
        config=config,
        batch_size=batch_size,
        tla_flops=count_attention_flops(config, "tla"),
        flat_flops=count_attention_flops(config, "flat"),
        flop_ratio=attention_flop_ratio(config),
        tla_seconds=_median_time(run_tla, repeats),
        flat_seconds=_median_time(run_flat, repeats),
    )


@dataclass
class KernelBenchmark:
    rows: int
    seq: int
    heads: int
    head_dim: int
    results: dict            # backend name -> median seconds
    max_abs_diff: float      # between backends, forward context

    def to_text(self) -> str:
        parts = [
            f"sdpa rows={self.rows} seq={self.seq} heads={self.heads} "
            f"head_dim={self.head_dim}:"
        ]
        base = self.results.get("pure")
        for name, sec in sorted(self.results.items()):
            speed = f"  ({base / sec:.2f}x vs pure)" if base and name != "pure" else ""
            parts.append(f"  {name:<9s} {sec * 1e3:8.3f} ms{speed}")
        parts.append(f"  max |diff| between backends: {self.max_abs_diff:.3g}")
        return "\n".join(parts) + "\n"


def benchmark_kernels(
    rows: int = 64,
    seq: int = 64,
    heads: int = 4,
    head_dim: int = 16,
    repeats: int = 7,
    seed: int = 0,
) -> KernelBenchmark:
    """Times every available attention backend on one scaled-dot-product
    call and reports their numerical agreement."""
    rng = np.random.default_rng(seed)
    shape = (rows, heads, seq, head_dim)
    q = rng.standard_normal(shape).astype(np.float32)
    k = rng.standard_normal(shape).astype(np.float32)
    v = rng.standard_normal(shape).astype(np.float32)
    mask = (rng.random((rows, seq)) < 0.2).astype(np.uint8)
    mask[:, 0] = 0                       # keep at least one visible key
    scale = 1.0 / np.sqrt(head_dim)

    results = {}
    outputs = {}
    for name in backend.available_backends():
        mod = backend.get_backend(name)
        mod.sdpa_forward(q, k, v, mask, scale)
        results[name] = _median_time(lambda m=mod: m.sdpa_forward(q, k, v, mask, scale),
                                     repeats)
        outputs[name] = mod.sdpa_forward(q, k, v, mask, scale)[0]
    names = sorted(outputs)
    diff = 0.0
    for a in range(len(names)):
        for b in range(a + 1, len(names)):
            diff = max(diff, float(np.abs(outputs[names[a]] - outputs[names[b]]).max()))
    return KernelBenchmark(rows, seq, heads, head_dim, results, diff)
