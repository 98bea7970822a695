"""Positive-pair batching, the NT-Xent objective, and contrastive pretraining.

A batch of N windows becomes 2N views: the first N rows are the left-chain
views and rows i and i+N always form a positive pair. The loss for an anchor
is the temperature-scaled cross-entropy of picking its positive among all
other views by cosine similarity; the total is the mean over all 2N anchors
(both orderings of every pair).
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from .augment import AugmentationPolicy, apply_policy, window_rng
from .errors import ConfigError, NumericError, ParameterError
from .nn.model import ModelGraph
from .nn.optim import Lars, LrSchedule


def cosine_sim(u: np.ndarray, v: np.ndarray) -> float:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        raise NumericError("cosine similarity of a zero vector is undefined")
    return float(np.dot(u, v) / (nu * nv))


@dataclass
class ContrastiveBatch:
    """2N projection vectors ordered so rows i and i+N are positive pairs."""

    views: np.ndarray

    def __post_init__(self):
        self.views = np.asarray(self.views)
        if self.views.ndim != 2 or self.views.shape[0] % 2 or self.views.shape[0] < 2:
            raise ParameterError(f"views must be (2N, D) with N >= 1, got {self.views.shape}")
        if not np.all(np.isfinite(self.views)):
            raise NumericError("non-finite projection vectors")
        if np.any(np.linalg.norm(self.views, axis=1) == 0.0):
            raise NumericError("zero-norm projection vector in batch")

    @property
    def n_pairs(self) -> int:
        return self.views.shape[0] // 2


def _pair_index(two_n: int) -> np.ndarray:
    n = two_n // 2
    return np.concatenate([np.arange(n) + n, np.arange(n)])


def nt_xent_grad(views: np.ndarray, temperature: float):
    """NT-Xent loss, per-anchor losses, and the gradient w.r.t. the views.

    Log-sum-exp stabilized; the denominator for anchor i runs over every
    other view (positives and negatives alike), per the loss definition.
    """
    z = np.asarray(getattr(views, "views", views), dtype=np.float64)
    if temperature <= 0.0:
        raise ParameterError(f"temperature must be positive, got {temperature}")
    if z.ndim != 2 or z.shape[0] % 2 or z.shape[0] < 2:
        raise ParameterError(f"views must be (2N, D) with N >= 1, got {z.shape}")
    if not np.all(np.isfinite(z)):
        raise NumericError("non-finite projection vectors")
    two_n = z.shape[0]
    norms = np.linalg.norm(z, axis=1, keepdims=True)
    if np.any(norms == 0.0):
        raise NumericError("zero-norm projection vector in batch")
    u = z / norms
    sim = u @ u.T
    logits = sim / temperature
    np.fill_diagonal(logits, -np.inf)

    pos = _pair_index(two_n)
    row_max = logits.max(axis=1, keepdims=True)
    exp_shift = np.exp(logits - row_max)
    denom = exp_shift.sum(axis=1)
    log_denom = np.log(denom) + row_max[:, 0]
    pos_logit = logits[np.arange(two_n), pos]
    per_pair = log_denom - pos_logit
    loss = float(per_pair.mean())

    # dloss/dS: softmax over each row minus the positive indicator, /(tau*2N)
    softmax = exp_shift / denom[:, None]
    softmax[np.arange(two_n), pos] -= 1.0
    a = softmax / (temperature * two_n)
    w = a + a.T
    row_dot = np.sum(w * sim, axis=1, keepdims=True)
    grad = (w @ u - row_dot * u) / norms
    return loss, per_pair, grad


def nt_xent_loss(views, temperature: float):
    """Scalar NT-Xent loss and the 2N per-anchor pair losses."""
    loss, per_pair, _ = nt_xent_grad(views, temperature)
    return loss, per_pair


# ---------------------------------------------------------------------------
# Pretraining
# ---------------------------------------------------------------------------


@dataclass
class PretrainConfig:
    temperature: float = 0.1
    batch_size: int = 256
    max_epochs: int = 200
    patience: int = 10
    val_fraction: float = 0.2
    seed: int = 0
    warmup_epochs: int = 20
    peak_lr: float = 0.1
    lr_floor_fraction: float = 0.01
    lars_trust: float = 0.001
    lars_momentum: float = 0.9
    lars_weight_decay: float = 0.0

    def __post_init__(self):
        if self.temperature <= 0:
            raise ConfigError("temperature must be positive")
        if self.batch_size < 2:
            raise ConfigError("batch size must be at least 2")
        if not 0 <= self.val_fraction < 1:
            raise ConfigError("val_fraction must lie in [0, 1)")
        if self.patience >= self.max_epochs:
            raise ConfigError("patience must be smaller than max_epochs")


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    val_loss: float
    lr: float


def history_to_csv(history: list[EpochStats]) -> str:
    buf = io.StringIO()
    buf.write("epoch,train_loss,val_loss,lr\n")
    for row in history:
        buf.write(f"{row.epoch},{row.train_loss:.8f},{row.val_loss:.8f},{row.lr:.8f}\n")
    return buf.getvalue()


def _make_views(x_batch, indices, policy, seed, stream, epoch):
    lefts, rights = [], []
    for gid, x in zip(indices, x_batch):
        rng = window_rng(seed, stream, epoch, int(gid))
        left, right = apply_policy(x, policy, rng)
        lefts.append(left)
        rights.append(right)
    return np.stack(lefts + rights)


def _epoch_batches(order: np.ndarray, batch_size: int):
    full = len(order) - len(order) % batch_size
    for start in range(0, full, batch_size):
        yield order[start : start + batch_size]


def pretrain(
    graph: ModelGraph,
    windows: np.ndarray,
    policy: AugmentationPolicy,
    config: PretrainConfig,
) -> tuple[ModelGraph, list[EpochStats]]:
    """Contrastive pretraining with LARS under the warmup+cosine schedule.

    Windows are split 80/20 into train/validation (seeded); each epoch every
    training batch is re-augmented into two views. Early stopping watches the
    validation NT-Xent (computed with fixed per-window augmentation streams so
    the metric reflects the model, not fresh noise). The weights with the best
    validation loss are restored before returning.
    """
    x_all = np.asarray(windows, dtype=np.float32)
    if x_all.ndim != 2:
        raise ConfigError(f"windows must be (n, window_len), got {x_all.shape}")
    n = x_all.shape[0]
    if n < 2 * config.batch_size:
        raise ConfigError(
            f"need at least 2N={2 * config.batch_size} windows for pretraining, got {n}"
        )

    split_rng = window_rng(config.seed, "pretrain-split")
    perm = split_rng.permutation(n)
    n_val = int(round(config.val_fraction * n))
    val_idx = perm[:n_val]
    train_idx = perm[n_val:]

    schedule = LrSchedule(
        total_epochs=config.max_epochs,
        warmup_epochs=config.warmup_epochs,
        peak_lr=config.peak_lr,
        floor_fraction=config.lr_floor_fraction,
    )
    optimizer = Lars(
        graph.named_params(trainable_only=True),
        trust=config.lars_trust,
        momentum=config.lars_momentum,
        weight_decay=config.lars_weight_decay,
    )

    def validation_loss() -> float:
        if n_val == 0:
            return float("nan")
        losses = []
        batches = list(_epoch_batches(val_idx, config.batch_size))
        if not batches and len(val_idx) >= 2:
            batches = [val_idx]
        for batch in batches:
            views = _make_views(x_all[batch], batch, policy, config.seed, "val", 0)
            z = graph.forward(views, training=False)
            losses.append(nt_xent_grad(z, config.temperature)[0])
        return float(np.mean(losses)) if losses else float("nan")

    history: list[EpochStats] = []
    best_val = np.inf
    best_snapshot = graph.snapshot()
    bad_epochs = 0

    for epoch in range(config.max_epochs):
        lr = schedule.lr(epoch)
        epoch_rng = window_rng(config.seed, "pretrain-shuffle", epoch)
        order = train_idx[epoch_rng.permutation(len(train_idx))]
        batch_losses = []
        for batch in _epoch_batches(order, config.batch_size):
            views = _make_views(x_all[batch], batch, policy, config.seed, "train", epoch)
            z = graph.forward(views, training=True)
            loss, _, dz = nt_xent_grad(z, config.temperature)
            graph.backward(dz.astype(graph.dtype))
            optimizer.step(graph.named_grads(trainable_only=True), lr)
            batch_losses.append(loss)
        if not batch_losses:
            raise ConfigError("training split yields no full batch")
        train_loss = float(np.mean(batch_losses))
        val_loss = validation_loss()
        monitored = train_loss if np.isnan(val_loss) else val_loss
        history.append(EpochStats(epoch + 1, train_loss, val_loss, lr))
        if monitored < best_val:
            best_val = monitored
            best_snapshot = graph.snapshot()
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs >= config.patience:
                break

    graph.restore(best_snapshot)
    return graph, history


def freeze_encoder(graph: ModelGraph) -> ModelGraph:
    """Freeze every encoder block and discard the projection head."""
    graph.freeze_encoder()
    graph.drop_head()
    return graph
