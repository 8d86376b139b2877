"""The two jointly trained heads and the discrete tuple prediction path.

The visual head maps a region feature to a d-dimensional object embedding;
the text head projects a frozen contextual token embedding into the same
space. Discrete prediction stacks the projected embeddings of every
(noun, context) tuple into an index matrix z (T x d) and softmaxes z @ f.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ShapeError
from .mlp import MlpParams, init_params, mlp_forward, mlp_forward_batch
from .validation import as_vector

CONTEXT_KINDS = ("noun", "verb", "adjective", "adverb")

TEXT_HEAD_LAYERS = 5  # weight layers in the text projection head


def default_visual_dims(visual_in_dim: int, d: int) -> list[int]:
    return [visual_in_dim, 2 * d, 2 * d, d]


def default_text_dims(text_in_dim: int, d: int) -> list[int]:
    # 5 weight layers, hidden width 2d
    return [text_in_dim] + [2 * d] * (TEXT_HEAD_LAYERS - 1) + [d]


@dataclass
class ModelConfig:
    d: int
    visual_in_dim: int
    text_in_dim: int
    visual_layer_dims: list[int] = field(default_factory=list)
    text_layer_dims: list[int] = field(default_factory=list)

    def __post_init__(self):
        if self.d <= 0 or self.visual_in_dim <= 0 or self.text_in_dim <= 0:
            raise ConfigError("dims must be positive")
        if not self.visual_layer_dims:
            self.visual_layer_dims = default_visual_dims(self.visual_in_dim, self.d)
        if not self.text_layer_dims:
            self.text_layer_dims = default_text_dims(self.text_in_dim, self.d)
        v, t = self.visual_layer_dims, self.text_layer_dims
        if v[0] != self.visual_in_dim or v[-1] != self.d:
            raise ConfigError(f"visual_layer_dims {v} must run {self.visual_in_dim} -> {self.d}")
        if t[0] != self.text_in_dim or t[-1] != self.d:
            raise ConfigError(f"text_layer_dims {t} must run {self.text_in_dim} -> {self.d}")
        if len(t) - 1 != TEXT_HEAD_LAYERS:
            raise ConfigError(
                f"text head must have exactly {TEXT_HEAD_LAYERS} weight layers, "
                f"got {len(t) - 1}")

    def to_dict(self) -> dict:
        return {"d": self.d, "visual_in_dim": self.visual_in_dim,
                "text_in_dim": self.text_in_dim,
                "visual_layer_dims": list(self.visual_layer_dims),
                "text_layer_dims": list(self.text_layer_dims)}

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        return cls(d=data["d"], visual_in_dim=data["visual_in_dim"],
                   text_in_dim=data["text_in_dim"],
                   visual_layer_dims=list(data["visual_layer_dims"]),
                   text_layer_dims=list(data["text_layer_dims"]))


@dataclass
class EmbeddingModel:
    """Visual and text heads sharing one output space of dimension config.d."""

    config: ModelConfig
    visual_head: MlpParams
    text_head: MlpParams

    def __post_init__(self):
        if self.visual_head.layer_dims != list(self.config.visual_layer_dims):
            raise ShapeError("visual head shapes do not match config")
        if self.text_head.layer_dims != list(self.config.text_layer_dims):
            raise ShapeError("text head shapes do not match config")

    def copy(self) -> "EmbeddingModel":
        return EmbeddingModel(self.config, self.visual_head.copy(), self.text_head.copy())


def init_model(config: ModelConfig, seed: int) -> EmbeddingModel:
    """Fresh heads with fan-scaled uniform weights; heads get distinct streams."""
    return EmbeddingModel(
        config,
        visual_head=init_params(config.visual_layer_dims, seed=seed * 2 + 1),
        text_head=init_params(config.text_layer_dims, seed=seed * 2 + 2),
    )


@dataclass
class TupleEntry:
    tuple_id: int
    noun: str
    context: str
    context_kind: str
    base_embedding: np.ndarray

    def __post_init__(self):
        if not self.noun:
            raise ConfigError("tuple noun must be nonempty")
        if self.context_kind not in CONTEXT_KINDS:
            raise ConfigError(f"context_kind must be one of {CONTEXT_KINDS}, "
                              f"got {self.context_kind!r}")
        self.base_embedding = as_vector(self.base_embedding, name="base_embedding")


@dataclass
class TupleVocab:
    """Ordered (noun, context) tuple vocabulary with frozen base embeddings.

    Vocabularies loaded from files carry dense ids 0..T-1; sub-vocabularies
    produced by holdout splits keep their original ids (unique, ascending).
    """

    tuples: list[TupleEntry]

    def __post_init__(self):
        ids = [t.tuple_id for t in self.tuples]
        if len(set(ids)) != len(ids):
            raise ConfigError("tuple_ids must be unique")
        if ids != sorted(ids):
            raise ConfigError("tuples must be ordered by ascending tuple_id")
        dims = {t.base_embedding.shape[0] for t in self.tuples}
        if len(dims) > 1:
            raise ConfigError(f"base_embedding dims must be uniform, got {sorted(dims)}")

    def __len__(self) -> int:
        return len(self.tuples)

    def __iter__(self):
        return iter(self.tuples)

    @property
    def ids(self) -> list[int]:
        return [t.tuple_id for t in self.tuples]

    def by_id(self, tuple_id: int) -> TupleEntry:
        for t in self.tuples:
            if t.tuple_id == tuple_id:
                return t
        raise KeyError(tuple_id)

    def label(self, tuple_id: int) -> str:
        t = self.by_id(tuple_id)
        return f"({t.noun}, {t.context})"


@dataclass
class TupleIndex:
    z: np.ndarray  # (T, d) projected tuple embeddings, row order == vocab order
    vocab: TupleVocab

    def __post_init__(self):
        if self.z.shape[0] != len(self.vocab):
            raise ShapeError(f"index has {self.z.shape[0]} rows for "
                             f"{len(self.vocab)} vocab tuples")

    @property
    def t_count(self) -> int:
        return self.z.shape[0]


def embed_roi(model: EmbeddingModel, roi_feature) -> np.ndarray:
    """Visual-head embedding of one region feature."""
    x = as_vector(roi_feature, dim=model.config.visual_in_dim, name="roi feature")
    y, _ = mlp_forward(model.visual_head, x)
    return y


def embed_rois(model: EmbeddingModel, features: np.ndarray) -> np.ndarray:
    """Batched visual-head embeddings for a (N, visual_in_dim) feature matrix."""
    y, _ = mlp_forward_batch(model.visual_head, features)
    return y


def embed_text(model: EmbeddingModel, token_embedding) -> np.ndarray:
    """Text-head projection of one frozen token embedding."""
    x = as_vector(token_embedding, dim=model.config.text_in_dim, name="token embedding")
    y, _ = mlp_forward(model.text_head, x)
    return y


def build_tuple_index(model: EmbeddingModel, vocab: TupleVocab) -> TupleIndex:
    """Project every tuple base embedding through the text head, in vocab order."""
    if len(vocab) == 0:
        return TupleIndex(np.zeros((0, model.config.d)), vocab)
    base = np.stack([t.base_embedding for t in vocab.tuples])
    if base.shape[1] != model.config.text_in_dim:
        raise ShapeError(f"vocab base embeddings have dim {base.shape[1]}, "
                         f"expected {model.config.text_in_dim}")
    z, _ = mlp_forward_batch(model.text_head, base)
    return TupleIndex(z, vocab)


def softmax(logits: np.ndarray) -> np.ndarray:
    """Stable softmax with max subtraction."""
    shifted = logits - logits.max()
    exps = np.exp(shifted)
    return exps / exps.sum()


def predict_tuples(index: TupleIndex, f) -> np.ndarray:
    """Distribution over the tuple vocabulary: softmax(z @ f). Shape (T,)."""
    if index.t_count == 0:
        raise ConfigError("cannot predict against an empty tuple index")
    f = as_vector(f, dim=index.z.shape[1], name="object embedding")
    return softmax(index.z @ f)
