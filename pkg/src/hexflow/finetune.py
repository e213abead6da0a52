"""Flow classification on top of the encoder, plus evaluation metrics.

The per-packet CLS vectors are mean-pooled into one flow embedding and fed
through a two-layer head.  By default the mean runs over all rows, padded
ones included; pass real-row weights for a mask-aware mean.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import layers
from .errors import EmptyDataset, LabelOutOfRange, ShapeMismatch
from .model import ModelConfig, accumulate, encode_flow_backward, encode_flow_forward, extract_cls
from .tokenizer import PAD_ID, TokenDataset


def real_row_mask(ids: np.ndarray) -> np.ndarray:
    """(B, N) bool: rows that carry at least one content token.

    An all-padding row is CLS followed by PAD, so position 1 tells them
    apart.
    """
    return ids[:, :, 1] != PAD_ID


def classify_flow_forward(x, params, row_weights=None):
    """Logits (B, C) from encoder output (B, N, L, d); returns a cache for
    the backward pass.  `row_weights` (B, N) restricts the CLS mean to the
    selected rows."""
    if x.ndim != 4:
        raise ShapeMismatch(f"expected (B, N, L, d) encoder output, got {x.shape}")
    cls = extract_cls(x)
    b, n, d = cls.shape
    if row_weights is None:
        w = np.full((b, n), 1.0 / n, dtype=x.dtype)
    else:
        rw = np.asarray(row_weights, dtype=x.dtype)
        if rw.shape != (b, n):
            raise ShapeMismatch(f"row_weights must be (B, N)={b, n}, got {rw.shape}")
        totals = np.maximum(rw.sum(axis=1, keepdims=True), 1.0)
        w = rw / totals
    pooled = (cls * w[:, :, np.newaxis]).sum(axis=1)
    h, fc_cache = layers.linear_forward(
        pooled, params["cls_head.hidden.w"], params["cls_head.hidden.b"]
    )
    g, gelu_cache = layers.gelu_forward(h)
    logits, out_cache = layers.linear_forward(
        g, params["cls_head.out.w"], params["cls_head.out.b"]
    )
    return logits, (w, x.shape, fc_cache, gelu_cache, out_cache)


def classify_flow_backward(dlogits, cache, grads):
    """Returns dx for the encoder; head gradients go into `grads`."""
    w, x_shape, fc_cache, gelu_cache, out_cache = cache
    dg, dwo, dbo = layers.linear_backward(dlogits, out_cache)
    accumulate(grads, "cls_head.out.w", dwo)
    accumulate(grads, "cls_head.out.b", dbo)
    dh = layers.gelu_backward(dg, gelu_cache)
    dpooled, dwh, dbh = layers.linear_backward(dh, fc_cache)
    accumulate(grads, "cls_head.hidden.w", dwh)
    accumulate(grads, "cls_head.hidden.b", dbh)
    dx = np.zeros(x_shape, dtype=dpooled.dtype)
    dx[:, :, 0, :] = dpooled[:, np.newaxis, :] * w[:, :, np.newaxis]
    return dx


def classify_flow(x, params, row_weights=None) -> np.ndarray:
    return classify_flow_forward(x, params, row_weights)[0]


def finetune_loss(logits, labels) -> float:
    """Softmax cross-entropy, mean over the batch."""
    labels = np.asarray(labels)
    c = logits.shape[-1]
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise LabelOutOfRange(f"labels must lie in [0, {c}), got range "
                              f"[{labels.min()}, {labels.max()}]")
    loss, _ = layers.cross_entropy_forward(logits, labels)
    return float(loss)


def finetune_objective(
    params,
    config: ModelConfig,
    ids: np.ndarray,
    labels: np.ndarray,
    mask_aware: bool = False,
    with_grads: bool = True,
):
    """Forward (and optionally backward) of the classification loss over one
    batch of token grids.  Returns (loss, logits, grads-or-None)."""
    labels = np.asarray(labels)
    x, enc_cache = encode_flow_forward(params, ids, config)
    weights = real_row_mask(ids) if mask_aware else None
    logits, head_cache = classify_flow_forward(x, params, weights)
    c = logits.shape[-1]
    if labels.min() < 0 or labels.max() >= c:
        raise LabelOutOfRange(f"labels must lie in [0, {c})")
    loss, ce_cache = layers.cross_entropy_forward(logits, labels)
    if not with_grads:
        return float(loss), logits, None
    grads: dict[str, np.ndarray] = {}
    dlogits = layers.cross_entropy_backward(ce_cache, 1.0)
    dx = classify_flow_backward(dlogits, head_cache, grads)
    encode_flow_backward(dx, enc_cache, params, config, grads)
    return float(loss), logits, grads


# --- evaluation ---

@dataclass
class EvalReport:
    accuracy: float
    macro_f1: float
    weighted_f1: float
    precision: np.ndarray        # (C,)
    recall: np.ndarray           # (C,)
    f1: np.ndarray               # (C,)
    support: np.ndarray          # (C,) true-label counts
    confusion: np.ndarray        # (C, C): rows true, cols predicted
    excluded_classes: list[int]  # zero-support classes left out of macro-F1
    mean_loss: float

    def to_text(self) -> str:
        c = self.confusion.shape[0]
        lines = [
            f"samples:     {int(self.support.sum())}",
            f"accuracy:    {self.accuracy:.4f}",
            f"macro_f1:    {self.macro_f1:.4f}",
            f"weighted_f1: {self.weighted_f1:.4f}",
            f"mean_loss:   {self.mean_loss:.4f}",
            "",
            "class  precision  recall  f1      support",
        ]
        for i in range(c):
            note = "  (excluded from macro)" if i in self.excluded_classes else ""
            lines.append(
                f"{i:<5d}  {self.precision[i]:<9.4f}  {self.recall[i]:<6.4f}"
                f"  {self.f1[i]:<6.4f}  {int(self.support[i])}{note}"
            )
        lines.append("")
        lines.append("confusion (rows true, cols predicted):")
        for i in range(c):
            lines.append("  " + " ".join(f"{int(v):6d}" for v in self.confusion[i]))
        return "\n".join(lines) + "\n"

    def to_kv_lines(self) -> list[str]:
        lines = [
            f"accuracy={self.accuracy:.10g}",
            f"macro_f1={self.macro_f1:.10g}",
            f"weighted_f1={self.weighted_f1:.10g}",
            f"mean_loss={self.mean_loss:.10g}",
            f"n_classes={self.confusion.shape[0]}",
            f"excluded_classes={','.join(map(str, self.excluded_classes))}",
        ]
        for i in range(self.confusion.shape[0]):
            lines.append(f"precision_{i}={self.precision[i]:.10g}")
            lines.append(f"recall_{i}={self.recall[i]:.10g}")
            lines.append(f"f1_{i}={self.f1[i]:.10g}")
            lines.append(f"support_{i}={int(self.support[i])}")
        for i in range(self.confusion.shape[0]):
            row = ",".join(str(int(v)) for v in self.confusion[i])
            lines.append(f"confusion_{i}={row}")
        return lines


def report_from_counts(confusion: np.ndarray, mean_loss: float = float("nan")) -> EvalReport:
    """Metrics from a confusion matrix; macro-F1 skips zero-support classes."""
    conf = np.asarray(confusion, dtype=np.int64)
    total = conf.sum()
    if total == 0:
        raise EmptyDataset("confusion matrix is empty")
    support = conf.sum(axis=1)
    predicted = conf.sum(axis=0)
    diag = np.diag(conf).astype(np.float64)
    with np.errstate(invalid="ignore", divide="ignore"):
        precision = np.where(predicted > 0, diag / predicted, 0.0)
        recall = np.where(support > 0, diag / support, 0.0)
        denom = precision + recall
        f1 = np.where(denom > 0, 2 * precision * recall / denom, 0.0)
    present = support > 0
    excluded = np.flatnonzero(~present).tolist()
    macro = float(f1[present].mean()) if present.any() else 0.0
    weighted = float((f1 * support).sum() / total)
    return EvalReport(
        accuracy=float(diag.sum() / total),
        macro_f1=macro,
        weighted_f1=weighted,
        precision=precision,
        recall=recall,
        f1=f1,
        support=support,
        confusion=conf,
        excluded_classes=excluded,
        mean_loss=mean_loss,
    )


def evaluate(
    params,
    config: ModelConfig,
    dataset: TokenDataset,
    n_classes: int,
    batch_size: int = 32,
    mask_aware: bool = False,
) -> EvalReport:
    """Deterministic full pass over the dataset."""
    count = len(dataset)
    if count == 0:
        raise EmptyDataset("cannot evaluate on an empty dataset")
    labels = dataset.labels
    if labels.min() < 0 or labels.max() >= n_classes:
        raise LabelOutOfRange(f"dataset labels must lie in [0, {n_classes})")
    confusion = np.zeros((n_classes, n_classes), dtype=np.int64)
    loss_sum = 0.0
    for start in range(0, count, batch_size):
        ids = dataset.grids[start : start + batch_size]
        y = labels[start : start + batch_size]
        x, _ = encode_flow_forward(params, ids, config)
        weights = real_row_mask(ids) if mask_aware else None
        logits, _ = classify_flow_forward(x, params, weights)
        loss, _ = layers.cross_entropy_forward(logits, y)
        loss_sum += float(loss) * len(y)
        preds = logits.argmax(axis=-1)
        np.add.at(confusion, (y, preds), 1)
    return report_from_counts(confusion, mean_loss=loss_sum / count)
