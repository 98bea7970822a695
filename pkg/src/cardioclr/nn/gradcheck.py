"""Central finite-difference verification of every analytic gradient.

All checks run in float64 with h=1e-5 on small randomized shapes. Inputs are
kept away from ReLU kinks and max-pool ties so the numeric derivative is
well defined.
"""

from __future__ import annotations

import numpy as np

from .layers import Conv1d, Dense, Dropout, Flatten, MaxPool1d, ReLU
from .losses import binary_cross_entropy_loss, cross_entropy_loss
from .model import EncoderConfig, ModelGraph

H = 1e-5
TOLERANCE = 1e-4


def numeric_gradient(fn, arr: np.ndarray, h: float = H) -> np.ndarray:
    """Central differences of a scalar function w.r.t. every array element."""
    grad = np.zeros_like(arr, dtype=np.float64)
    flat = arr.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fplus = fn()
        flat[i] = orig - h
        fminus = fn()
        flat[i] = orig
        gflat[i] = (fplus - fminus) / (2.0 * h)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    denom = np.maximum(np.abs(analytic) + np.abs(numeric), 1e-6)
    return float(np.max(np.abs(analytic - numeric) / denom))


def _no_kinks(rng, shape, margin=5e-3):
    """Random values bounded away from zero (ReLU kinks)."""
    x = rng.uniform(margin, 1.0, size=shape)
    return x * rng.choice([-1.0, 1.0], size=shape)


def _no_ties(rng, shape, width):
    """Random values whose max-pool windows have no near-ties."""
    while True:
        x = rng.uniform(-1.0, 1.0, size=shape)
        length = shape[-1] - shape[-1] % width
        blocks = x[..., :length].reshape(*shape[:-1], length // width, width)
        top2 = np.sort(blocks, axis=-1)[..., -2:]
        if width == 1 or np.min(top2[..., 1] - top2[..., 0]) > 1e-3:
            return x


def _scalar_probe(out_shape, rng):
    return rng.uniform(-1.0, 1.0, size=out_shape)


def _check_layer(layer, x, rng, training=False, fwd_rng_seed=None):
    """max relative error over input grad and every parameter grad.

    The scalar objective is sum(out * R) for a fixed random R; dropout uses a
    reseeded rng per forward so the mask is constant across FD evaluations.
    """

    def fwd():
        rng_f = np.random.default_rng(fwd_rng_seed) if fwd_rng_seed is not None else None
        return layer.forward(x, training=training, rng=rng_f)

    probe = _scalar_probe(fwd().shape, rng)

    def objective():
        return float(np.sum(fwd() * probe))

    objective()  # populate caches
    dx = layer.backward(probe.copy())
    errs = [relative_error(dx, numeric_gradient(objective, x))]
    analytic = {k: v.copy() for k, v in layer.grads().items()}
    for key, param in layer.params().items():
        errs.append(relative_error(analytic[key], numeric_gradient(objective, param)))
    return max(errs)


def check_dense(rng) -> float:
    b, din, dout = rng.integers(1, 5), rng.integers(1, 7), rng.integers(1, 6)
    layer = Dense(int(din), int(dout), rng, dtype=np.float64)
    x = rng.uniform(-1, 1, (int(b), int(din)))
    return _check_layer(layer, x, rng)


def check_conv1d(rng) -> float:
    b, cin, cout = rng.integers(1, 4), rng.integers(1, 4), rng.integers(1, 4)
    k = int(rng.integers(1, 6))
    length = int(rng.integers(max(k, 4), 14))
    layer = Conv1d(int(cin), int(cout), k, rng, dtype=np.float64)
    x = rng.uniform(-1, 1, (int(b), int(cin), length))
    return _check_layer(layer, x, rng)


def check_relu(rng) -> float:
    layer = ReLU()
    x = _no_kinks(rng, (int(rng.integers(1, 4)), int(rng.integers(2, 10))))
    return _check_layer(layer, x, rng)


def check_maxpool(rng) -> float:
    width = int(rng.integers(2, 5))
    length = int(rng.integers(width, 4 * width + 2))
    shape = (int(rng.integers(1, 3)), int(rng.integers(1, 4)), length)
    layer = MaxPool1d(width)
    x = _no_ties(rng, shape, width)
    return _check_layer(layer, x, rng)


def check_flatten(rng) -> float:
    layer = Flatten()
    x = rng.uniform(-1, 1, (int(rng.integers(1, 4)), int(rng.integers(1, 4)), int(rng.integers(2, 6))))
    return _check_layer(layer, x, rng)


def check_dropout(rng) -> float:
    layer = Dropout(rate=0.5)
    x = rng.uniform(0.5, 1.5, (int(rng.integers(1, 4)), int(rng.integers(2, 8))))
    return _check_layer(layer, x, rng, training=True, fwd_rng_seed=int(rng.integers(1 << 30)))


def check_softmax_ce(rng) -> float:
    b, n = int(rng.integers(2, 6)), int(rng.integers(2, 5))
    logits = rng.uniform(-2, 2, (b, n))
    labels = rng.integers(0, n, b)

    def objective():
        return cross_entropy_loss(logits, labels)[0]

    analytic = cross_entropy_loss(logits, labels)[1]
    return relative_error(analytic, numeric_gradient(objective, logits))


def check_binary_ce(rng) -> float:
    b = int(rng.integers(2, 8))
    logits = rng.uniform(-2, 2, (b, 1))
    labels = rng.integers(0, 2, b)

    def objective():
        return binary_cross_entropy_loss(logits, labels)[0]

    analytic = binary_cross_entropy_loss(logits, labels)[1]
    return relative_error(analytic, numeric_gradient(objective, logits))


def check_nt_xent(rng) -> float:
    from ..contrastive import nt_xent_grad

    n = int(rng.integers(2, 5))
    z = rng.uniform(-1, 1, (2 * n, int(rng.integers(2, 6))))
    tau = 0.1

    def objective():
        return nt_xent_grad(z, tau)[0]

    analytic = nt_xent_grad(z, tau)[2]
    return relative_error(analytic, numeric_gradient(objective, z))


def check_two_block_model(rng) -> float:
    """Full backprop through a 2-block toy encoder + small dense head."""
    cfg = EncoderConfig(
        channels=(2, 3), kernels=(3, 3), pool_widths=(2, 2),
        input_len=16, in_channels=1, projection_dim=4,
    )
    graph = ModelGraph(cfg, dtype=np.float64)
    graph.build_encoder(rng)
    # same machinery as the full classifier head, desk-sized for FD speed
    graph.head_layers = [
        Dense(cfg.feature_dim(), 5, rng, np.float64),
        ReLU(),
        Dropout(0.0),
        Dense(5, 3, rng, np.float64),
    ]
    graph.head_kind = "classifier"
    graph.n_out = 3
    x = rng.uniform(0.1, 1.0, (2, 1, 16)) * rng.choice([-1.0, 1.0], (2, 1, 16))
    labels = rng.integers(0, 3, 2)

    def objective():
        return cross_entropy_loss(graph.forward(x), labels)[0]

    loss, dlogits = cross_entropy_loss(graph.forward(x), labels)
    graph.backward(dlogits)
    errs = []
    analytic = {name: g.copy() for name, g in graph.named_grads()}
    for name, param in graph.named_params():
        errs.append(relative_error(analytic[name], numeric_gradient(objective, param)))
    return max(errs)


LAYER_CHECKS = {
    "dense": check_dense,
    "conv1d": check_conv1d,
    "relu": check_relu,
    "maxpool": check_maxpool,
    "flatten": check_flatten,
    "dropout": check_dropout,
    "softmax_ce": check_softmax_ce,
    "binary_ce": check_binary_ce,
    "nt_xent": check_nt_xent,
    "two_block_model": check_two_block_model,
}


def run_gradient_suite(seed: int = 0, trials_per_check: int = 6) -> dict[str, float]:
    """Run every check `trials_per_check` times; returns max error per check."""
    report = {}
    for idx, (name, check) in enumerate(LAYER_CHECKS.items()):
        worst = 0.0
        for trial in range(trials_per_check):
            rng = np.random.default_rng(np.random.SeedSequence((seed, idx, trial)))
            worst = max(worst, check(rng))
        report[name] = worst
    return report
