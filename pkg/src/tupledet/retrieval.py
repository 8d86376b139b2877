"""Embedding-space queries: object-to-text, text-to-object, and analogies.

Similarity defaults to the raw dot product, matching the training
objective; cosine is available behind a flag. Corpora are scanned
exhaustively and ties break by ascending item id, so results are exact and
fully deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError
from .model import TupleIndex
from .validation import as_vector

METRICS = ("dot", "cosine")


@dataclass
class RetrievalResult:
    items: list[tuple[object, float]]  # (item_id, similarity), non-increasing
    query: str


def _similarities(query: np.ndarray, rows: np.ndarray, metric: str) -> np.ndarray:
    if metric not in METRICS:
        raise ConfigError(f"metric must be one of {METRICS}, got {metric!r}")
    sims = rows @ query
    if metric == "cosine":
        qn = np.linalg.norm(query)
        rn = np.linalg.norm(rows, axis=1)
        denom = np.where(rn * qn > 0, rn * qn, 1.0)
        sims = sims / denom
    return sims


def _rank(ids, sims: np.ndarray, k: int) -> list[tuple[object, float]]:
    order = sorted(range(len(ids)), key=lambda i: (-sims[i], ids[i]))
    return [(ids[i], float(sims[i])) for i in order[:k]]


def object_to_text(f, index: TupleIndex, k: int, metric: str = "dot") -> RetrievalResult:
    """Top-k vocabulary tuples most similar to an object embedding."""
    if index.t_count == 0:
        raise ConfigError("cannot retrieve from an empty tuple index")
    if k < 1:
        raise ConfigError(f"k must be >= 1, got {k}")
    f = as_vector(f, dim=index.z.shape[1], name="object embedding")
    sims = _similarities(f, index.z, metric)
    return RetrievalResult(items=_rank(index.vocab.ids, sims, k),
                           query="object-to-text")


def text_to_object(query, objects, k: int, metric: str = "dot") -> RetrievalResult:
    """Top-k object instances for a d-dimensional text query.

    objects: sequence of (object_id, embedding). An empty sequence yields
    an empty result.
    """
    if k < 1:
        raise ConfigError(f"k must be >= 1, got {k}")
    if not objects:
        return RetrievalResult(items=[], query="text-to-object")
    query = as_vector(query, name="query")
    ids = [oid for oid, _ in objects]
    rows = np.stack([as_vector(emb, dim=query.shape[0], name=f"object {oid}")
                     for oid, emb in objects])
    sims = _similarities(query, rows, metric)
    return RetrievalResult(items=_rank(ids, sims, k), query="text-to-object")


def analogy_query(a, b, c, corpus, k: int, exclude_inputs: bool = True,
                  metric: str = "dot") -> RetrievalResult:
    """Rank a corpus against the composed query a - b + c.

    corpus: sequence of (item_id, embedding). With exclude_inputs, items
    whose embedding exactly equals a, b, or c are dropped before ranking.
    """
    a = as_vector(a, name="a")
    b = as_vector(b, dim=a.shape[0], name="b")
    c = as_vector(c, dim=a.shape[0], name="c")
    if k < 1:
        raise ConfigError(f"k must be >= 1, got {k}")
    q = a - b + c
    ids, rows = [], []
    for oid, emb in corpus:
        emb = as_vector(emb, name=f"corpus item {oid}")
        if emb.shape[0] != a.shape[0]:
            raise ShapeError(f"corpus item {oid} has dim {emb.shape[0]}, "
                             f"expected {a.shape[0]}")
        if exclude_inputs and (np.array_equal(emb, a) or np.array_equal(emb, b)
                               or np.array_equal(emb, c)):
            continue
        ids.append(oid)
        rows.append(emb)
    if not ids:
        return RetrievalResult(items=[], query="analogy")
    sims = _similarities(q, np.stack(rows), metric)
    return RetrievalResult(items=_rank(ids, sims, k), query="analogy")
