"""Optimization loop shared by pre-training and fine-tuning.

AdamW with decoupled weight decay, glob-based parameter freezing, seeded
deterministic batch sampling, JSONL metrics, binary checkpoints with a JSON
header, and a finite-difference gradient audit.
"""

from __future__ import annotations

import fnmatch
import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import CorruptCheckpoint, NonFiniteLoss, PatternMatchesNothing
from .model import ModelConfig, init_params
from .pretrain import LossBreakdown, make_pretrain_batch, pretrain_objective
from .finetune import finetune_objective
from .tokenizer import CLS_ID, PAD_ID, TokenDataset

DEFAULT_PRETRAIN_FREEZE = ("*.packet_mhsa.*",)

STAGES = ("pretrain", "finetune")


@dataclass
class TrainConfig:
    stage: str
    steps: int
    batch_size: int = 32
    learning_rate: float = 2e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    freeze_patterns: tuple = ()
    seed: int = 0
    warmup_steps: int = 0
    mask_ratio: float = 0.15
    alpha: float = 0.2
    beta: float = 0.2
    mask_aware_pool: bool = False
    log_every: int = 10

    def __post_init__(self):
        if self.stage not in STAGES:
            raise ValueError(f"stage must be one of {STAGES}, got {self.stage!r}")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.steps < 0:
            raise ValueError("steps must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.stage == "pretrain" and self.batch_size < 2:
            raise ValueError("pre-training needs batch_size >= 2 (contrastive task)")
        self.freeze_patterns = tuple(self.freeze_patterns)

    def to_dict(self) -> dict:
        return {
            "stage": self.stage,
            "steps": self.steps,
            "batch_size": self.batch_size,
            "learning_rate": self.learning_rate,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "eps": self.eps,
            "weight_decay": self.weight_decay,
            "freeze_patterns": list(self.freeze_patterns),
            "seed": self.seed,
            "warmup_steps": self.warmup_steps,
            "mask_ratio": self.mask_ratio,
            "alpha": self.alpha,
            "beta": self.beta,
            "mask_aware_pool": self.mask_aware_pool,
            "log_every": self.log_every,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        d["freeze_patterns"] = tuple(d.get("freeze_patterns", ()))
        return cls(**d)


@dataclass
class OptimizerState:
    m: dict
    v: dict
    step: int = 0


def freeze(params: dict, patterns) -> set:
    """Names matched by any glob; a pattern that matches nothing warns."""
    frozen: set[str] = set()
    names = list(params)
    for pat in patterns:
        hits = fnmatch.filter(names, pat)
        if not hits:
            warnings.warn(f"freeze pattern {pat!r} matches no parameter",
                          PatternMatchesNothing, stacklevel=2)
        frozen.update(hits)
    return frozen


def init_optimizer(params: dict, frozen=()) -> OptimizerState:
    """Zero moments for every trainable parameter; frozen ones carry none."""
    m = {k: np.zeros_like(p) for k, p in params.items() if k not in frozen}
    v = {k: np.zeros_like(p) for k, p in params.items() if k not in frozen}
    return OptimizerState(m, v, 0)


def lr_at(config: TrainConfig, step: int) -> float:
    """Constant rate, with optional linear warmup over the first steps."""
    if config.warmup_steps > 0 and step < config.warmup_steps:
        return config.learning_rate * (step + 1) / config.warmup_steps
    return config.learning_rate


def adamw_step(params, grads, state: OptimizerState, config: TrainConfig,
               frozen=frozenset(), lr=None):
    """In-place AdamW update over every parameter that has a gradient.

    Weight decay is decoupled: applied directly to the parameter after the
    moment-based step, so zero gradients still shrink weights by lr*wd*theta.
    """
    state.step += 1
    t = state.step
    if lr is None:
        lr = lr_at(config, t - 1)
    bc1 = 1.0 - config.beta1 ** t
    bc2 = 1.0 - config.beta2 ** t
    for name, g in grads.items():
        if name in frozen:
            continue
        p = params[name]
        g = np.asarray(g, dtype=p.dtype)
        m = state.m[name]
        v = state.v[name]
        m *= config.beta1
        m += (1.0 - config.beta1) * g
        v *= config.beta2
        v += (1.0 - config.beta2) * np.square(g)
        update = (m / bc1) / (np.sqrt(v / bc2) + config.eps)
        p -= lr * update
        p -= lr * config.weight_decay * p


def train_step(batch, params, opt_state: OptimizerState, model_config: ModelConfig,
               train_config: TrainConfig, frozen=frozenset()) -> LossBreakdown:
    """One forward/backward/update.  For fine-tuning, `batch` is an
    (ids, labels) pair and the classification loss lands in `total` with the
    task fields zeroed."""
    if train_config.stage == "pretrain":
        breakdown, grads = pretrain_objective(
            params, model_config, batch,
            alpha=train_config.alpha, beta=train_config.beta, with_grads=True,
        )
    else:
        ids, labels = batch
        loss, _, grads = finetune_objective(
            params, model_config, ids, labels,
            mask_aware=train_config.mask_aware_pool, with_grads=True,
        )
        breakdown = LossBreakdown(0.0, 0.0, 0.0, loss,
                                  train_config.alpha, train_config.beta)
    if not np.isfinite(breakdown.total):
        raise NonFiniteLoss(
            f"non-finite loss at optimizer step {opt_state.step + 1}: "
            f"mfp={breakdown.mfp} prpp={breakdown.prpp} fcl={breakdown.fcl}"
        )
    for name in frozen:
        grads.pop(name, None)
    adamw_step(params, grads, opt_state, train_config, frozen)
    return breakdown


# --- run loops ---

@dataclass
class RunResult:
    params: dict
    opt_state: OptimizerState
    rng: np.random.Generator
    trace: list = field(default_factory=list)
    frozen: set = field(default_factory=set)


class _MetricsWriter:
    def __init__(self, path):
        self._fh = open(path, "a", encoding="utf-8") if path else None

    def write(self, record: dict):
        if self._fh is not None:
            self._fh.write(json.dumps(record, sort_keys=True) + "\n")
            self._fh.flush()

    def close(self):
        if self._fh is not None:
            self._fh.close()


def _sample_indices(rng, count, batch_size):
    return rng.integers(0, count, size=batch_size)


def run_pretraining(
    params,
    model_config: ModelConfig,
    train_config: TrainConfig,
    dataset: TokenDataset,
    opt_state: OptimizerState | None = None,
    rng: np.random.Generator | None = None,
    start_step: int = 0,
    metrics_path=None,
) -> RunResult:
    """Sequential pre-training loop; resumable by passing back the returned
    opt_state/rng and the step reached."""
    if rng is None:
        rng = np.random.default_rng(train_config.seed)
    frozen = freeze(params, train_config.freeze_patterns)
    if opt_state is None:
        opt_state = init_optimizer(params, frozen)
    writer = _MetricsWriter(metrics_path)
    trace = []
    try:
        for step in range(start_step, train_config.steps):
            idx = _sample_indices(rng, len(dataset), train_config.batch_size)
            batch = make_pretrain_batch(
                dataset.grids[idx], rng, mask_ratio=train_config.mask_ratio
            )
            breakdown = train_step(batch, params, opt_state, model_config,
                                   train_config, frozen)
            trace.append(breakdown)
            if step % train_config.log_every == 0 or step == train_config.steps - 1:
                writer.write({
                    "step": step,
                    "mfp": breakdown.mfp,
                    "prpp": breakdown.prpp,
                    "fcl": breakdown.fcl,
                    "total": breakdown.total,
                    "lr": lr_at(train_config, step),
                    "masked_tokens": len(batch.plan),
                })
    finally:
        writer.close()
    return RunResult(params, opt_state, rng, trace, frozen)


def run_finetune(
    params,
    model_config: ModelConfig,
    train_config: TrainConfig,
    dataset: TokenDataset,
    opt_state: OptimizerState | None = None,
    rng: np.random.Generator | None = None,
    start_step: int = 0,
    metrics_path=None,
) -> RunResult:
    if rng is None:
        rng = np.random.default_rng(train_config.seed)
    frozen = freeze(params, train_config.freeze_patterns)
    if opt_state is None:
        opt_state = init_optimizer(params, frozen)
    writer = _MetricsWriter(metrics_path)
    trace = []
    try:
        for step in range(start_step, train_config.steps):
            idx = _sample_indices(rng, len(dataset), train_config.batch_size)
            batch = (dataset.grids[idx], dataset.labels[idx])
            breakdown = train_step(batch, params, opt_state, model_config,
                                   train_config, frozen)
            trace.append(breakdown)
            if step % train_config.log_every == 0 or step == train_config.steps - 1:
                writer.write({
                    "step": step,
                    "loss": breakdown.total,
                    "lr": lr_at(train_config, step),
                })
    finally:
        writer.close()
    return RunResult(params, opt_state, rng, trace, frozen)


# --- gradient audit ---

@dataclass
class GradcheckReport:
    per_param: dict                 # name -> max relative error over entries
    skipped: list
    entries_checked: int
    h: float

    @property
    def max_rel_err(self) -> float:
        return max(self.per_param.values()) if self.per_param else 0.0

    def to_text(self) -> str:
        lines = [f"h={self.h:g}  entries={self.entries_checked}"]
        for name in sorted(self.per_param):
            lines.append(f"{name:<40s} {self.per_param[name]:.3e}")
        for name in self.skipped:
            lines.append(f"{name:<40s} skipped (frozen)")
        lines.append(f"max relative error: {self.max_rel_err:.3e}")
        return "\n".join(lines) + "\n"


def _pick_entries(g_flat, k_top, k_rand, rng):
    size = g_flat.size
    picks = set(np.argsort(-np.abs(g_flat))[: min(k_top, size)].tolist())
    if size > 0 and k_rand > 0:
        picks.update(int(i) for i in rng.integers(0, size, size=k_rand))
    return sorted(picks)


def gradcheck(
    params: dict,
    value_fn,
    grads: dict,
    h: float = 1e-5,
    frozen=frozenset(),
    entries_per_param: int = 6,
    seed: int = 0,
) -> GradcheckReport:
    """Central finite differences against the supplied analytic gradients.

    `value_fn(params)` must re-evaluate the same fixed batch.  For each
    tensor, the largest-magnitude gradient entries plus seeded random ones
    are probed.  The relative-error denominator is floored at 1e-5: central
    differences on an f64 loss of this size cannot resolve derivatives much
    below 1e-9, and some true gradients are exactly zero (attention key
    biases cancel inside softmax), so a smaller floor would just measure
    rounding noise.
    """
    rng = np.random.default_rng(seed)
    k_top = max(1, entries_per_param // 2)
    k_rand = entries_per_param - k_top
    per_param = {}
    skipped = []
    checked = 0
    for name in sorted(params):
        if name in frozen:
            skipped.append(name)
            continue
        if name not in grads:
            continue
        p = params[name]
        flat = p.reshape(-1)
        g_flat = np.asarray(grads[name]).reshape(-1)
        worst = 0.0
        for i in _pick_entries(g_flat, k_top, k_rand, rng):
            orig = flat[i]
            flat[i] = orig + h
            up = value_fn(params)
            flat[i] = orig - h
            down = value_fn(params)
            flat[i] = orig
            numeric = (up - down) / (2.0 * h)
            analytic = float(g_flat[i])
            rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-5)
            worst = max(worst, rel)
            checked += 1
        per_param[name] = worst
    return GradcheckReport(per_param, skipped, checked, h)


def build_audit_case(
    model_config: ModelConfig,
    seed: int = 0,
    batch_size: int = 3,
    perturb_scale: float = 0.1,
):
    """A float64 parameter point and fixed batch for the gradient audit.

    Parameters start from the standard init and get an extra seeded
    perturbation: at the raw tiny-variance init some early-layer gradients
    fall below what central differences can resolve in float64, which would
    make the check vacuous there rather than meaningful.
    """
    params = init_params(model_config, seed=seed, dtype=np.float64)
    rng = np.random.default_rng(seed + 1)
    for name in sorted(params):
        params[name] = params[name] + rng.normal(0.0, perturb_scale, params[name].shape)
    n, l = model_config.n_packets, model_config.row_length
    ids = rng.integers(0, 65536, size=(batch_size, n, l)).astype(np.int32)
    ids[:, :, 0] = CLS_ID
    ids[0, -1, l // 2:] = PAD_ID     # exercise the padding mask path
    batch = make_pretrain_batch(ids, np.random.default_rng(seed + 2), mask_ratio=0.15)
    return params, batch


def audit_pretrain_gradients(
    model_config: ModelConfig,
    h: float = 1e-5,
    seed: int = 0,
    batch_size: int = 3,
    alpha: float = 0.2,
    beta: float = 0.2,
    freeze_patterns=(),
    entries_per_param: int = 6,
) -> GradcheckReport:
    """End-to-end audit of the combined pre-training objective."""
    params, batch = build_audit_case(model_config, seed, batch_size)
    frozen = freeze(params, freeze_patterns) if freeze_patterns else frozenset()

    def value_fn(p):
        bd, _ = pretrain_objective(p, model_config, batch, alpha, beta,
                                   with_grads=False)
        return bd.total

    _, grads = pretrain_objective(params, model_config, batch, alpha, beta,
                                  with_grads=True)
    for name in frozen:
        grads.pop(name, None)
    return gradcheck(params, value_fn, grads, h=h, frozen=frozen,
                     entries_per_param=entries_per_param, seed=seed)


# --- checkpoints ---

CHECKPOINT_FORMAT = "hexflow-checkpoint-v1"

_DTYPE_TAGS = {"float32": "<f4", "float64": "<f8"}


@dataclass
class Checkpoint:
    params: dict
    opt_state: OptimizerState | None
    model_config: ModelConfig
    train_config: TrainConfig | None
    rng_state: dict | None
    step: int


def _manifest_entry(group, name, arr):
    if arr.dtype.name not in _DTYPE_TAGS:
        raise ValueError(f"unsupported tensor dtype {arr.dtype} for {name}")
    return {"group": group, "name": name, "shape": list(arr.shape),
            "dtype": _DTYPE_TAGS[arr.dtype.name]}


def save_checkpoint(
    path,
    params: dict,
    model_config: ModelConfig,
    opt_state: OptimizerState | None = None,
    train_config: TrainConfig | None = None,
    rng: np.random.Generator | None = None,
    step: int = 0,
) -> None:
    """One JSON header line, then the raw little-endian tensor bytes in
    manifest order."""
    tensors = []
    manifest = []
    for name in sorted(params):
        manifest.append(_manifest_entry("params", name, params[name]))
        tensors.append(params[name])
    if opt_state is not None:
        for name in sorted(opt_state.m):
            manifest.append(_manifest_entry("opt_m", name, opt_state.m[name]))
            tensors.append(opt_state.m[name])
        for name in sorted(opt_state.v):
            manifest.append(_manifest_entry("opt_v", name, opt_state.v[name]))
            tensors.append(opt_state.v[name])
    header = {
        "format": CHECKPOINT_FORMAT,
        "step": int(step),
        "opt_step": None if opt_state is None else int(opt_state.step),
        "model_config": model_config.to_dict(),
        "train_config": None if train_config is None else train_config.to_dict(),
        "rng_state": None if rng is None else rng.bit_generator.state,
        "manifest": manifest,
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        for entry, arr in zip(manifest, tensors):
            fh.write(np.ascontiguousarray(arr, dtype=entry["dtype"]).tobytes())


def load_checkpoint(path, expect_config: ModelConfig | None = None) -> Checkpoint:
    with open(path, "rb") as fh:
        header_line = fh.readline()
        try:
            header = json.loads(header_line.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CorruptCheckpoint(f"unreadable header: {exc}") from exc
        if header.get("format") != CHECKPOINT_FORMAT:
            raise CorruptCheckpoint(f"unknown format {header.get('format')!r}")
        model_config = ModelConfig.from_dict(header["model_config"])
        if expect_config is not None and model_config != expect_config:
            raise CorruptCheckpoint(
                "checkpoint model config does not match the expected one"
            )
        groups: dict[str, dict] = {"params": {}, "opt_m": {}, "opt_v": {}}
        for entry in header["manifest"]:
            shape = tuple(entry["shape"])
            dtype = np.dtype(entry["dtype"])
            nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
            raw = fh.read(nbytes)
            if len(raw) != nbytes:
                raise CorruptCheckpoint(
                    f"tensor {entry['name']!r} truncated: wanted {nbytes} bytes, "
                    f"got {len(raw)}"
                )
            arr = np.frombuffer(raw, dtype=dtype).reshape(shape).copy()
            groups[entry["group"]][entry["name"]] = arr
        if fh.read(1):
            raise CorruptCheckpoint("trailing bytes after the last tensor")
    opt_state = None
    if header.get("opt_step") is not None:
        if set(groups["opt_m"]) != set(groups["opt_v"]):
            raise CorruptCheckpoint("optimizer moment manifests disagree")
        opt_state = OptimizerState(groups["opt_m"], groups["opt_v"],
                                   int(header["opt_step"]))
    train_config = None
    if header.get("train_config") is not None:
        train_config = TrainConfig.from_dict(header["train_config"])
    return Checkpoint(
        params=groups["params"],
        opt_state=opt_state,
        model_config=model_config,
        train_config=train_config,
        rng_state=header.get("rng_state"),
        step=int(header["step"]),
    )


def restore_rng(state: dict) -> np.random.Generator:
    rng = np.random.default_rng(0)
    rng.bit_generator.state = state
    return rng
