"""The encoder/head graph: 5 conv blocks, then either a projection head for
contrastive pretraining or a 3-layer classification head with dropout."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError, ShapeError, StateError
from .layers import Conv1d, Dense, Dropout, Flatten, MaxPool1d, ReLU

PROJECTION = "projection"
CLASSIFIER = "classifier"


@dataclass(frozen=True)
class EncoderConfig:
    """Encoder hyperparameters. The defaults are the declared full-size
    architecture; tests and desk-scale runs shrink channels and kernels."""

    channels: tuple = (8, 16, 32, 64, 128)
    kernels: tuple = (64, 32, 16, 8, 8)
    pool_widths: tuple = (4, 4, 4, 4, 4)
    input_len: int = 10000
    in_channels: int = 1
    projection_dim: int = 128

    def __post_init__(self):
        if not len(self.channels) == len(self.kernels) == len(self.pool_widths):
            raise ConfigError("channels, kernels and pool_widths must align")

    def feature_shape(self) -> tuple[int, int]:
        length = self.input_len
        for width in self.pool_widths:
            length = length // width
            if length == 0:
                raise ConfigError("input too short for the pooling pyramid")
        return self.channels[-1], length

    def feature_dim(self) -> int:
        c, length = self.feature_shape()
        return c * length


class ModelGraph:
    def __init__(self, encoder_cfg: EncoderConfig, dtype=np.float32):
        self.encoder_cfg = encoder_cfg
        self.dtype = dtype
        self.encoder_layers: list = []
        self.flatten = Flatten()
        self.head_layers: list = []
        self.head_kind: str | None = None
        self.n_out: int | None = None
        self.dropout_rate: float = 0.5
        self.encoder_frozen = False
        self._head_input: np.ndarray | None = None

    # -- construction -------------------------------------------------------

    def build_encoder(self, rng: np.random.Generator) -> None:
        cfg = self.encoder_cfg
        self.encoder_layers = []
        in_ch = cfg.in_channels
        for out_ch, kernel, pool in zip(cfg.channels, cfg.kernels, cfg.pool_widths):
            self.encoder_layers.append(Conv1d(in_ch, out_ch, kernel, rng, self.dtype))
            self.encoder_layers.append(ReLU())
            self.encoder_layers.append(MaxPool1d(pool))
            in_ch = out_ch

    def set_projection_head(self, rng: np.random.Generator) -> None:
        self.head_layers = [
            Dense(self.encoder_cfg.feature_dim(), self.encoder_cfg.projection_dim, rng, self.dtype)
        ]
        self.head_kind = PROJECTION
        self.n_out = self.encoder_cfg.projection_dim

    def set_classifier_head(self, n_out: int, rng: np.random.Generator, dropout: float = 0.5) -> None:
        feat = self.encoder_cfg.feature_dim()
        self.head_layers = [
            Dense(feat, 128, rng, self.dtype),
            ReLU(),
            Dropout(dropout),
            Dense(128, 64, rng, self.dtype),
            ReLU(),
            Dropout(dropout),
            Dense(64, n_out, rng, self.dtype),
        ]
        self.head_kind = CLASSIFIER
        self.n_out = n_out
        self.dropout_rate = dropout

    def drop_head(self) -> None:
        self.head_layers = []
        self.head_kind = None
        self.n_out = None

    def freeze_encoder(self) -> None:
        for layer in self.encoder_layers:
            layer.frozen = True
        self.encoder_frozen = True

    # -- execution ----------------------------------------------------------

    def _check_input(self, x: np.ndarray) -> np.ndarray:
        cfg = self.encoder_cfg
        x = np.asarray(x, dtype=self.dtype)
        if x.ndim == 2:
            x = x[:, None, :]
        if x.ndim != 3 or x.shape[1] != cfg.in_channels or x.shape[2] != cfg.input_len:
            raise ShapeError(
                f"expected (B, {cfg.in_channels}, {cfg.input_len}) input, got {x.shape}"
            )
        return x

    def forward(self, x, training=False, rng=None) -> np.ndarray:
        out = self._check_input(x)
        for layer in self.encoder_layers:
            out = layer.forward(out, training=training, rng=rng)
        out = self.flatten.forward(out, training=training, rng=rng)
        return self.head_forward(out, training=training, rng=rng)

    def head_forward(self, features, training=False, rng=None) -> np.ndarray:
        self._head_input = features
        out = features
        for layer in self.head_layers:
            out = layer.forward(out, training=training, rng=rng)
        return out

    def backward(self, grad_out) -> None:
        grad = self.head_backward(grad_out, compute_input_grad=not self.encoder_frozen)
        if self.encoder_frozen:
            for layer in self.encoder_layers:
                for g in layer.grads().values():
                    g[...] = 0.0
            return
        grad = self.flatten.backward(grad)
        for i in range(len(self.encoder_layers) - 1, -1, -1):
            grad = self.encoder_layers[i].backward(grad, compute_input_grad=i > 0)

    def head_backward(self, grad_out, compute_input_grad=True):
        if self._head_input is None:
            raise StateError("backward called before forward")
        grad = grad_out
        for i in range(len(self.head_layers) - 1, -1, -1):
            need = compute_input_grad or i > 0
            grad = self.head_layers[i].backward(grad, compute_input_grad=need)
        return grad

    def embed(self, x) -> np.ndarray:
        """Eval-mode flattened encoder representation."""
        out = self._check_input(x)
        for layer in self.encoder_layers:
            out = layer.forward(out, training=False)
        return np.ascontiguousarray(out).reshape(out.shape[0], -1)

    # -- parameter access ---------------------------------------------------

    def _layer_items(self):
        for i, layer in enumerate(self.encoder_layers):
            yield f"enc{i}", layer
        for i, layer in enumerate(self.head_layers):
            yield f"head{i}", layer

    def named_params(self, trainable_only=False) -> list[tuple[str, np.ndarray]]:
        out = []
        for name, layer in self._layer_items():
            if trainable_only and layer.frozen:
                continue
            for key, arr in layer.params().items():
                out.append((f"{name}.{key}", arr))
        return out

    def named_grads(self, trainable_only=False) -> list[tuple[str, np.ndarray]]:
        out = []
        for name, layer in self._layer_items():
            if trainable_only and layer.frozen:
                continue
            for key, arr in layer.grads().items():
                out.append((f"{name}.{key}", arr))
        return out

    def snapshot(self) -> list[np.ndarray]:
        return [arr.copy() for _, arr in self.named_params()]

    def restore(self, snap: list[np.ndarray]) -> None:
        params = self.named_params()
        if len(snap) != len(params):
            raise StateError("snapshot does not match the current graph")
        for (_, arr), saved in zip(params, snap):
            arr[...] = saved

    def encoder_bytes(self) -> bytes:
        chunks = []
        for name, layer in self._layer_items():
            if not name.startswith("enc"):
                continue
            for arr in layer.params().values():
                chunks.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
        return b"".join(chunks)


def build_ssl_graph(cfg: EncoderConfig, seed: int, dtype=np.float32) -> ModelGraph:
    """Encoder plus 128-D projection head, seeded init."""
    rng = np.random.default_rng(np.random.SeedSequence((int(seed), 0xE)))
    graph = ModelGraph(cfg, dtype)
    graph.build_encoder(rng)
    graph.set_projection_head(rng)
    return graph


def attach_classifier(graph: ModelGraph, n_out: int, seed: int, dropout: float = 0.5) -> ModelGraph:
    """Replace the head with a freshly initialized classification head."""
    rng = np.random.default_rng(np.random.SeedSequence((int(seed), 0xC)))
    graph.set_classifier_head(n_out, rng, dropout)
    return graph
