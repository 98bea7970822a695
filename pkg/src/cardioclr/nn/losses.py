"""Classification losses. Multi-logit heads use softmax cross-entropy;
1-logit heads reduce to the binary (sigmoid) form."""

from __future__ import annotations

import numpy as np

from ..errors import NumericError, ShapeError


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def cross_entropy_loss(logits: np.ndarray, labels: np.ndarray):
    """Mean categorical cross-entropy and its gradient w.r.t. the logits."""
    if logits.ndim != 2:
        raise ShapeError(f"logits must be (B, n_out), got {logits.shape}")
    n = logits.shape[0]
    if labels.shape != (n,):
        raise ShapeError(f"labels must be ({n},), got {labels.shape}")
    if not np.all(np.isfinite(logits)):
        raise NumericError("non-finite logits")
    p = softmax(logits.astype(np.float64))
    idx = np.arange(n)
    loss = float(-np.mean(np.log(np.maximum(p[idx, labels], 1e-300))))
    grad = p
    grad[idx, labels] -= 1.0
    grad /= n
    return loss, grad.astype(logits.dtype)


def binary_cross_entropy_loss(logits: np.ndarray, labels: np.ndarray):
    """Sigmoid + BCE for a single-logit head, numerically stable."""
    if logits.ndim != 2 or logits.shape[1] != 1:
        raise ShapeError(f"binary logits must be (B, 1), got {logits.shape}")
    if not np.all(np.isfinite(logits)):
        raise NumericError("non-finite logits")
    z = logits[:, 0].astype(np.float64)
    y = labels.astype(np.float64)
    # log(1 + e^-|z|) + max(z, 0) - z*y
    loss = float(np.mean(np.log1p(np.exp(-np.abs(z))) + np.maximum(z, 0.0) - z * y))
    grad = ((sigmoid(z) - y) / z.size)[:, None]
    return loss, grad.astype(logits.dtype)


def task_loss(logits: np.ndarray, labels: np.ndarray):
    """Dispatch on head width: 1 logit -> binary form, else categorical."""
    if logits.shape[1] == 1:
        return binary_cross_entropy_loss(logits, labels)
    return cross_entropy_loss(logits, labels)


def decisions(logits: np.ndarray) -> np.ndarray:
    """Class decision per row: argmax, or 0.5-threshold for 1-logit heads."""
    if logits.shape[1] == 1:
        return (logits[:, 0] >= 0.0).astype(np.int64)  # sigmoid(z) >= 0.5 iff z >= 0
    return logits.argmax(axis=1)
