"""Checkpoint container: magic `PCGSSL01`, a u32 length-prefixed UTF-8 JSON
metadata block, then raw little-endian float32 parameter arrays in the
graph's declared parameter order."""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..errors import FormatError
from .model import CLASSIFIER, PROJECTION, EncoderConfig, ModelGraph

MAGIC = b"PCGSSL01"


def _canonical_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def save_checkpoint(path, graph: ModelGraph, extra: dict | None = None) -> str:
    cfg = graph.encoder_cfg
    meta = {
        "arch": {
            "channels": list(cfg.channels),
            "kernels": list(cfg.kernels),
            "pool_widths": list(cfg.pool_widths),
            "input_len": cfg.input_len,
            "in_channels": cfg.in_channels,
            "projection_dim": cfg.projection_dim,
        },
        "head": graph.head_kind,
        "n_out": graph.n_out,
        "dropout": graph.dropout_rate,
        "encoder_frozen": graph.encoder_frozen,
        "params": [
            {"name": name, "shape": list(arr.shape)} for name, arr in graph.named_params()
        ],
        "extra": extra or {},
    }
    blob = _canonical_json(meta)
    chunks = [MAGIC, struct.pack("<I", len(blob)), blob]
    for _, arr in graph.named_params():
        chunks.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    payload = b"".join(chunks)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(payload)
    return str(path)


def load_checkpoint(path) -> tuple[ModelGraph, dict]:
    data = Path(path).read_bytes()
    if data[: len(MAGIC)] != MAGIC:
        raise FormatError(f"{path}: bad checkpoint magic")
    (meta_len,) = struct.unpack_from("<I", data, len(MAGIC))
    start = len(MAGIC) + 4
    try:
        meta = json.loads(data[start : start + meta_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: bad checkpoint metadata") from exc

    arch = meta["arch"]
    cfg = EncoderConfig(
        channels=tuple(arch["channels"]),
        kernels=tuple(arch["kernels"]),
        pool_widths=tuple(arch["pool_widths"]),
        input_len=arch["input_len"],
        in_channels=arch["in_channels"],
        projection_dim=arch["projection_dim"],
    )
    graph = ModelGraph(cfg)
    rng = np.random.default_rng(0)  # placeholder values, overwritten below
    graph.build_encoder(rng)
    if meta["head"] == PROJECTION:
        graph.set_projection_head(rng)
    elif meta["head"] == CLASSIFIER:
        graph.set_classifier_head(meta["n_out"], rng, meta["dropout"])
    if meta["encoder_frozen"]:
        graph.freeze_encoder()

    offset = start + meta_len
    params = graph.named_params()
    declared = meta["params"]
    if len(declared) != len(params):
        raise FormatError(f"{path}: parameter list mismatch")
    for (name, arr), spec in zip(params, declared):
        if name != spec["name"] or list(arr.shape) != spec["shape"]:
            raise FormatError(f"{path}: parameter {name} does not match metadata")
        nbytes = arr.size * 4
        flat = np.frombuffer(data, dtype="<f4", count=arr.size, offset=offset)
        arr[...] = flat.reshape(arr.shape)
        offset += nbytes
    if offset != len(data):
        raise FormatError(f"{path}: trailing bytes in checkpoint")
    return graph, meta
