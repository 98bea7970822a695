"""Classification heads on top of the (frozen) encoder, plus evaluation.

Two task types exist: `binary` (normal vs abnormal, shared across datasets)
and `all` (the dataset's own label set). A 1-logit head thresholds the
sigmoid at 0.5; wider heads take the argmax.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .augment import window_rng
from .errors import ConfigError, DataError
from .nn.losses import decisions, task_loss
from .nn.model import CLASSIFIER, ModelGraph, attach_classifier
from .nn.optim import Adam
from .signal_io import LABEL_SETS, ABNORMAL, NORMAL

BINARY_CLASSES = (NORMAL, ABNORMAL)

_ALL_TASK_CLASSES = {
    "pascal": LABEL_SETS["pascal"],
    "physionet2022": LABEL_SETS["physionet2022"],
    # these datasets are binary to begin with; `all` coincides with `binary`
    "physionet2016": BINARY_CLASSES,
    "synthetic": BINARY_CLASSES,
}


@dataclass(frozen=True)
class TaskSpec:
    dataset_tag: str
    task_type: str  # "all" | "binary"

    def __post_init__(self):
        if self.task_type not in ("all", "binary"):
            raise ConfigError(f"unknown task type {self.task_type!r}")
        if self.task_type == "all" and self.dataset_tag not in _ALL_TASK_CLASSES:
            raise ConfigError(f"dataset {self.dataset_tag!r} has no labels for an `all` task")
        if self.task_type == "binary" and self.dataset_tag not in _ALL_TASK_CLASSES:
            raise ConfigError(f"dataset {self.dataset_tag!r} has no labels")

    @property
    def class_names(self) -> tuple[str, ...]:
        if self.task_type == "binary":
            return BINARY_CLASSES
        return tuple(_ALL_TASK_CLASSES[self.dataset_tag])

    @property
    def n_out(self) -> int:
        n = len(self.class_names)
        return 1 if n == 2 else n

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    def encode(self, metas) -> np.ndarray:
        """Integer class per window; raises on label/task mismatch."""
        out = np.empty(len(metas), dtype=np.int64)
        lookup = {name: i for i, name in enumerate(self.class_names)}
        for i, meta in enumerate(metas):
            label = meta.binary_label if self.task_type == "binary" else meta.original_label
            if self.task_type == "all" and self.n_out == 1:
                label = meta.binary_label
            if label is None or label not in lookup:
                raise ConfigError(
                    f"window {meta.record_id}/{meta.window_index} has label {label!r}, "
                    f"incompatible with task {self.task_type}/{self.dataset_tag}"
                )
            out[i] = lookup[label]
        return out

    def __str__(self) -> str:
        return f"{self.dataset_tag}:{self.task_type}"


@dataclass
class MetricsRecord:
    accuracy: float
    micro_f1: float
    macro_f1: float
    confusion: np.ndarray
    n_windows: int


def confusion_matrix(y_true: np.ndarray, y_pred: np.ndarray, n_classes: int) -> np.ndarray:
    conf = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(conf, (y_true, y_pred), 1)
    return conf


def per_class_f1(conf: np.ndarray, cls: int) -> float:
    tp = conf[cls, cls]
    fp = conf[:, cls].sum() - tp
    fn = conf[cls, :].sum() - tp
    denom = 2 * tp + fp + fn
    return float(2 * tp / denom) if denom else 0.0


def metrics_from_confusion(conf: np.ndarray) -> MetricsRecord:
    n = int(conf.sum())
    if n == 0:
        raise DataError("empty confusion matrix")
    tp = np.trace(conf)
    accuracy = float(tp / n)
    # micro: pool TP/FP/FN globally; for single-label decisions this equals
    # accuracy, which the tests pin down as an identity
    fp = conf.sum(axis=0) - np.diag(conf)
    fn = conf.sum(axis=1) - np.diag(conf)
    micro = float(2 * tp / (2 * tp + fp.sum() + fn.sum()))
    macro = float(np.mean([per_class_f1(conf, c) for c in range(conf.shape[0])]))
    return MetricsRecord(accuracy, micro, macro, conf, n)


def predict_classes(graph: ModelGraph, x: np.ndarray, chunk: int = 256) -> np.ndarray:
    preds = []
    for start in range(0, x.shape[0], chunk):
        logits = graph.forward(x[start : start + chunk], training=False)
        preds.append(decisions(logits))
    return np.concatenate(preds) if preds else np.zeros(0, dtype=np.int64)


def evaluate(graph: ModelGraph, x: np.ndarray, metas, task: TaskSpec) -> MetricsRecord:
    """Metrics of the model on labeled windows (pure, order-independent)."""
    if len(metas) == 0:
        raise DataError("cannot evaluate on an empty window set")
    if graph.head_kind != CLASSIFIER:
        raise ConfigError("evaluate needs a graph with a classification head")
    if graph.n_out != task.n_out:
        raise ConfigError(f"head width {graph.n_out} does not match task {task}")
    y_true = task.encode(metas)
    y_pred = predict_classes(graph, np.asarray(x, dtype=np.float32))
    return metrics_from_confusion(confusion_matrix(y_true, y_pred, task.n_classes))


# ---------------------------------------------------------------------------
# Supervised training
# ---------------------------------------------------------------------------


@dataclass
class DownstreamConfig:
    adam_lr: float = 1e-4
    batch_size: int = 32
    max_epochs: int = 100
    patience: int = 20
    dropout: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError("batch size must be positive")
        if self.patience >= self.max_epochs:
            raise ConfigError("patience must be smaller than max_epochs")


@dataclass
class HeadEpochStats:
    epoch: int
    train_loss: float
    val_loss: float


def _training_loop(graph, predict, backprop, x_tr, y_tr, x_val, y_val, cfg):
    optimizer = Adam(graph.named_params(trainable_only=True), lr=cfg.adam_lr)

    def eval_loss(x, y) -> float:
        losses, weights = [], []
        for start in range(0, x.shape[0], 256):
            xb, yb = x[start : start + 256], y[start : start + 256]
            losses.append(task_loss(predict(xb, False, None), yb)[0])
            weights.append(len(yb))
        return float(np.average(losses, weights=weights))

    history: list[HeadEpochStats] = []
    best_val = np.inf
    best_snapshot = graph.snapshot()
    bad = 0
    for epoch in range(cfg.max_epochs):
        order = window_rng(cfg.seed, "head-shuffle", epoch).permutation(len(y_tr))
        batch_losses, batch_sizes = [], []
        for bi, start in enumerate(range(0, len(order), cfg.batch_size)):
            idx = order[start : start + cfg.batch_size]
            rng = window_rng(cfg.seed, "head-dropout", epoch, bi)
            logits = predict(x_tr[idx], True, rng)
            loss, dlogits = task_loss(logits, y_tr[idx])
            backprop(dlogits)
            optimizer.step(graph.named_grads(trainable_only=True))
            batch_losses.append(loss)
            batch_sizes.append(len(idx))
        train_loss = float(np.average(batch_losses, weights=batch_sizes))
        val_loss = eval_loss(x_val, y_val) if len(y_val) else train_loss
        history.append(HeadEpochStats(epoch + 1, train_loss, val_loss))
        if val_loss < best_val:
            best_val = val_loss
            best_snapshot = graph.snapshot()
            bad = 0
        else:
            bad += 1
            if bad >= cfg.patience:
                break
    graph.restore(best_snapshot)
    return history


def train_head(
    graph: ModelGraph,
    task: TaskSpec,
    train: tuple[np.ndarray, np.ndarray],
    val: tuple[np.ndarray, np.ndarray],
    config: DownstreamConfig,
) -> tuple[ModelGraph, list[HeadEpochStats]]:
    """Attach a fresh classification head to a frozen encoder and train it.

    Because the encoder is frozen, its representations are computed once and
    the head trains on the cached features; this is equivalent to full
    forward/backward passes and far cheaper.
    """
    if not graph.encoder_frozen:
        raise ConfigError("train_head expects a frozen encoder (freeze_encoder first)")
    x_tr, y_tr = train
    x_val, y_val = val
    if len(y_tr) == 0:
        raise DataError("empty training split")
    attach_classifier(graph, task.n_out, config.seed, config.dropout)

    emb_tr = graph.embed(np.asarray(x_tr, dtype=np.float32))
    emb_val = (
        graph.embed(np.asarray(x_val, dtype=np.float32))
        if len(y_val)
        else np.zeros((0, emb_tr.shape[1]), dtype=np.float32)
    )

    def predict(features, training, rng):
        return graph.head_forward(features, training=training, rng=rng)

    def backprop(dlogits):
        graph.head_backward(dlogits, compute_input_grad=False)

    history = _training_loop(graph, predict, backprop, emb_tr, y_tr, emb_val, y_val, config)
    return graph, history


def train_baseline(
    graph: ModelGraph,
    task: TaskSpec,
    train: tuple[np.ndarray, np.ndarray],
    val: tuple[np.ndarray, np.ndarray],
    config: DownstreamConfig,
) -> tuple[ModelGraph, list[HeadEpochStats]]:
    """Fully supervised baseline: same architecture and regimen, nothing frozen."""
    if graph.encoder_frozen:
        raise ConfigError("baseline training expects an unfrozen graph")
    x_tr, y_tr = train
    x_val, y_val = val
    if len(y_tr) == 0:
        raise DataError("empty training split")
    if graph.head_kind != CLASSIFIER or graph.n_out != task.n_out:
        attach_classifier(graph, task.n_out, config.seed, config.dropout)
    x_tr = np.asarray(x_tr, dtype=np.float32)
    x_val = np.asarray(x_val, dtype=np.float32)

    def predict(xb, training, rng):
        return graph.forward(xb, training=training, rng=rng)

    def backprop(dlogits):
        graph.backward(dlogits)

    history = _training_loop(graph, predict, backprop, x_tr, y_tr, x_val, y_val, config)
    return graph, history
