"""JSONL file formats for frames and tuple vocabularies, plus the answer key.

One record per line, UTF-8. Floats are written with Python's shortest
round-trip repr, so write -> read reproduces every 64-bit value exactly.

Frame schema (field names match the in-memory types):

    {"frame_id": str,
     "rois": [{"box": [x1, y1, x2, y2], "feature": [f64...],
               "category": str | null, "roi_score": f64,
               "is_background": bool}],
     "narration_tokens": [str, ...],
     "token_embeddings": [[f64...], ...]}        # aligned 1:1 with tokens

Vocab schema:

    {"tuple_id": int, "noun": str, "context": str,
     "context_kind": "noun"|"verb"|"adjective"|"adverb",
     "base_embedding": [f64...]}
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, ParseError, SchemaError
from .model import TupleEntry, TupleVocab
from .validation import as_vector, check_box


@dataclass
class Roi:
    box: tuple[float, float, float, float]
    feature: np.ndarray | None      # None only in detections-only files
    category: str | None
    roi_score: float
    is_background: bool = False


@dataclass
class FrameRecord:
    frame_id: str
    rois: list[Roi]
    narration_tokens: list[str]
    token_embeddings: np.ndarray    # (n_tokens, text_in_dim)

    def foreground_rois(self) -> list[tuple[int, Roi]]:
        return [(i, r) for i, r in enumerate(self.rois) if not r.is_background]

    def background_rois(self) -> list[tuple[int, Roi]]:
        return [(i, r) for i, r in enumerate(self.rois) if r.is_background]


def frame_to_dict(frame: FrameRecord) -> dict:
    return {
        "frame_id": frame.frame_id,
        "rois": [
            {"box": list(r.box),
             "feature": None if r.feature is None else [float(v) for v in r.feature],
             "category": r.category,
             "roi_score": float(r.roi_score),
             "is_background": bool(r.is_background)}
            for r in frame.rois
        ],
        "narration_tokens": list(frame.narration_tokens),
        "token_embeddings": [[float(v) for v in row] for row in frame.token_embeddings],
    }


def frame_from_dict(data: dict, require_features: bool = True) -> FrameRecord:
    """Build a FrameRecord from a parsed JSON object, checking invariants."""
    try:
        frame_id = str(data["frame_id"])
        raw_rois = data["rois"]
        tokens = [str(t) for t in data["narration_tokens"]]
        raw_embs = data["token_embeddings"]
    except (KeyError, TypeError) as exc:
        raise DataError(f"frame record missing field: {exc}") from exc
    if len(raw_embs) != len(tokens):
        raise DataError(
            f"frame {frame_id!r}: {len(raw_embs)} token embeddings for "
            f"{len(tokens)} tokens")
    rois = []
    for i, rr in enumerate(raw_rois):
        try:
            box = check_box(rr["box"], name=f"frame {frame_id!r} roi {i} box")
            raw_feat = rr.get("feature")
            is_bg = bool(rr.get("is_background", False))
            category = rr.get("category")
            score = float(rr["roi_score"])
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"frame {frame_id!r} roi {i}: {exc}") from exc
        if raw_feat is None:
            if require_features:
                raise DataError(f"frame {frame_id!r} roi {i}: missing feature")
            feature = None
        else:
            feature = as_vector(raw_feat, name=f"frame {frame_id!r} roi {i} feature")
        if not is_bg and not category:
            raise DataError(f"frame {frame_id!r} roi {i}: non-background roi "
                            "has no category")
        rois.append(Roi(box=box, feature=feature, category=category,
                        roi_score=score, is_background=is_bg))
    if tokens:
        embs = np.stack([as_vector(row, name="token embedding") for row in raw_embs])
    else:
        embs = np.zeros((0, 0))
    return FrameRecord(frame_id=frame_id, rois=rois,
                       narration_tokens=tokens, token_embeddings=embs)


def write_frames(path, frames) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for frame in frames:
            fh.write(json.dumps(frame_to_dict(frame)) + "\n")


def read_frames(path, require_features: bool = True) -> list[FrameRecord]:
    """Read a frame JSONL file, enforcing uniform feature/embedding dims.

    Raises ParseError with the 1-based line number for unparseable lines
    and SchemaError naming the line where a dimension first disagrees.
    """
    frames: list[FrameRecord] = []
    feat_dim: int | None = None
    emb_dim: int | None = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                data = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON ({exc.msg})", line=lineno) from exc
            try:
                frame = frame_from_dict(data, require_features=require_features)
            except DataError as exc:
                raise ParseError(str(exc), line=lineno) from exc
            for roi in frame.rois:
                if roi.feature is None:
                    continue
                if feat_dim is None:
                    feat_dim = roi.feature.shape[0]
                elif roi.feature.shape[0] != feat_dim:
                    raise SchemaError(
                        f"feature dim {roi.feature.shape[0]} != {feat_dim} "
                        "established earlier in the file", line=lineno)
            if frame.narration_tokens:
                dim = frame.token_embeddings.shape[1]
                if emb_dim is None:
                    emb_dim = dim
                elif dim != emb_dim:
                    raise SchemaError(
                        f"token embedding dim {dim} != {emb_dim} established "
                        "earlier in the file", line=lineno)
            frames.append(frame)
    return frames


def iter_frame_dicts(path):
    """Yield (line_number, parsed dict | ParseError) without stopping on bad lines."""
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                yield lineno, json.loads(line)
            except json.JSONDecodeError as exc:
                yield lineno, ParseError(f"invalid JSON ({exc.msg})", line=lineno)


def write_vocab(path, vocab: TupleVocab) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for t in vocab.tuples:
            fh.write(json.dumps({
                "tuple_id": t.tuple_id, "noun": t.noun, "context": t.context,
                "context_kind": t.context_kind,
                "base_embedding": [float(v) for v in t.base_embedding],
            }) + "\n")


def read_vocab(path) -> TupleVocab:
    entries: list[TupleEntry] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                data = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON ({exc.msg})", line=lineno) from exc
            try:
                entries.append(TupleEntry(
                    tuple_id=int(data["tuple_id"]), noun=str(data["noun"]),
                    context=str(data["context"]),
                    context_kind=str(data["context_kind"]),
                    base_embedding=data["base_embedding"]))
            except (KeyError, ValueError, TypeError) as exc:
                raise ParseError(f"bad vocab entry: {exc}", line=lineno) from exc
    entries.sort(key=lambda t: t.tuple_id)
    vocab = TupleVocab(entries)
    if vocab.ids != list(range(len(vocab))):
        raise SchemaError(f"vocab tuple_ids must be dense 0..{len(vocab) - 1}, "
                          f"got {vocab.ids[:8]}...")
    return vocab


@dataclass
class AnswerKey:
    """Ground-truth mapping for a synthetic dataset.

    roi_tuples maps (frame_id, roi index) to the true tuple_id of every
    foreground roi; word_embeddings carries the unnoised context-free
    embedding of every noun and context word.
    """

    roi_tuples: dict[tuple[str, int], int]
    word_embeddings: dict[str, np.ndarray]
    holdout_tuple_ids: list[int] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def tuple_of(self, frame_id: str, roi_index: int) -> int:
        return self.roi_tuples[(frame_id, roi_index)]


def write_answer_key(path, key: AnswerKey) -> None:
    payload = {
        "roi_tuples": {f"{fid}::{idx}": tid
                       for (fid, idx), tid in key.roi_tuples.items()},
        "word_embeddings": {w: [float(v) for v in emb]
                            for w, emb in key.word_embeddings.items()},
        "holdout_tuple_ids": list(key.holdout_tuple_ids),
        "meta": key.meta,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)
        fh.write("\n")


def read_answer_key(path) -> AnswerKey:
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    roi_tuples = {}
    for compound, tid in payload["roi_tuples"].items():
        fid, _, idx = compound.rpartition("::")
        roi_tuples[(fid, int(idx))] = int(tid)
    return AnswerKey(
        roi_tuples=roi_tuples,
        word_embeddings={w: np.asarray(v, dtype=np.float64)
                         for w, v in payload["word_embeddings"].items()},
        holdout_tuple_ids=[int(t) for t in payload.get("holdout_tuple_ids", [])],
        meta=payload.get("meta", {}),
    )
