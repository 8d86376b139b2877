"""Binary checkpoint format.

Layout, all little-endian:

    magic "COBE" | u32 format_version | u32 json_len | json config blob |
    4 tensor groups (visual head, text head, visual velocity, text velocity),
    each: u32 n_layers, then per layer
        u32 out_dim, u32 in_dim, out_dim*in_dim f64 weights (row-major),
        u32 bias_len, bias_len f64 bias

The JSON blob carries the model config, train config, global step, and the
head activations. Save -> load reproduces every tensor bit-exactly.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass

import numpy as np

from .errors import CheckpointError
from .mlp import MlpParams
from .model import ModelConfig
from .optim import OptimizerState

MAGIC = b"COBE"
FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    model_config: ModelConfig
    train_config: "TrainConfig"
    visual_head: MlpParams
    text_head: MlpParams
    visual_opt: OptimizerState
    text_opt: OptimizerState
    global_step: int
    format_version: int = FORMAT_VERSION


def _write_group(buf: io.BytesIO, weights: list[np.ndarray],
                 biases: list[np.ndarray]) -> None:
    buf.write(struct.pack("<I", len(weights)))
    for w, b in zip(weights, biases):
        out_dim, in_dim = w.shape
        buf.write(struct.pack("<II", out_dim, in_dim))
        buf.write(np.ascontiguousarray(w, dtype="<f8").tobytes())
        buf.write(struct.pack("<I", b.shape[0]))
        buf.write(np.ascontiguousarray(b, dtype="<f8").tobytes())


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError("checkpoint is truncated")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def floats(self, count: int) -> np.ndarray:
        return np.frombuffer(self.take(count * 8), dtype="<f8").astype(np.float64)


def _read_group(r: _Reader) -> tuple[list[np.ndarray], list[np.ndarray]]:
    n_layers = r.u32()
    if n_layers == 0 or n_layers > 10_000:
        raise CheckpointError(f"implausible layer count {n_layers}")
    weights, biases = [], []
    for _ in range(n_layers):
        out_dim, in_dim = r.u32(), r.u32()
        if out_dim == 0 or in_dim == 0:
            raise CheckpointError("zero-sized tensor in checkpoint")
        weights.append(r.floats(out_dim * in_dim).reshape(out_dim, in_dim))
        bias_len = r.u32()
        if bias_len != out_dim:
            raise CheckpointError(f"bias length {bias_len} != out dim {out_dim}")
        biases.append(r.floats(bias_len))
    return weights, biases


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    header = {
        "model_config": ckpt.model_config.to_dict(),
        "train_config": ckpt.train_config.to_dict(),
        "global_step": ckpt.global_step,
        "visual_activation": ckpt.visual_head.activation,
        "text_activation": ckpt.text_head.activation,
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", ckpt.format_version))
    buf.write(struct.pack("<I", len(blob)))
    buf.write(blob)
    _write_group(buf, ckpt.visual_head.weights, ckpt.visual_head.biases)
    _write_group(buf, ckpt.text_head.weights, ckpt.text_head.biases)
    _write_group(buf, ckpt.visual_opt.velocity_w, ckpt.visual_opt.velocity_b)
    _write_group(buf, ckpt.text_opt.velocity_w, ckpt.text_opt.velocity_b)
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_checkpoint(path) -> Checkpoint:
    from .trainer import TrainConfig  # deferred: trainer imports this module

    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint: {exc}") from exc
    r = _Reader(data)
    if r.take(4) != MAGIC:
        raise CheckpointError("bad magic bytes; not a checkpoint file")
    version = r.u32()
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported format version {version}")
    blob = r.take(r.u32())
    try:
        header = json.loads(blob.decode("utf-8"))
        model_config = ModelConfig.from_dict(header["model_config"])
        train_config = TrainConfig.from_dict(header["train_config"])
        global_step = int(header["global_step"])
        vis_act = header["visual_activation"]
        txt_act = header["text_activation"]
    except (ValueError, KeyError, TypeError) as exc:
        raise CheckpointError(f"corrupt checkpoint header: {exc}") from exc
    vw, vb = _read_group(r)
    tw, tb = _read_group(r)
    vvw, vvb = _read_group(r)
    tvw, tvb = _read_group(r)
    if r.pos != len(data):
        raise CheckpointError(f"{len(data) - r.pos} trailing bytes after tensors")
    visual_head = MlpParams(vw, vb, vis_act)
    text_head = MlpParams(tw, tb, txt_act)
    if visual_head.layer_dims != list(model_config.visual_layer_dims):
        raise CheckpointError("visual head tensors do not match the stored config")
    if text_head.layer_dims != list(model_config.text_layer_dims):
        raise CheckpointError("text head tensors do not match the stored config")
    return Checkpoint(
        model_config=model_config, train_config=train_config,
        visual_head=visual_head, text_head=text_head,
        visual_opt=OptimizerState(vvw, vvb, global_step),
        text_opt=OptimizerState(tvw, tvb, global_step),
        global_step=global_step, format_version=version)
