"""Contextualized detection evaluation: IoU, NMS, per-tuple AP, mAP@0.5.

AP uses all-point interpolation (exact area under the precision envelope);
a 101-point COCO-style sampling mode is available for cross-tool
comparison. Matching is greedy over predictions in descending score order
against the unmatched ground truth of highest IoU in the same frame.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .data_io import FrameRecord
from .errors import ConfigError, DataError, ParseError
from .model import EmbeddingModel, TupleIndex, embed_roi, predict_tuples
from .validation import Box, check_box


@dataclass
class GtBox:
    frame_id: str
    tuple_id: int
    box: Box

    def __post_init__(self):
        self.box = check_box(self.box, name="gt box")


@dataclass
class PredBox:
    frame_id: str
    tuple_id: int
    box: Box
    score: float

    def __post_init__(self):
        self.box = check_box(self.box, name="pred box")
        if not np.isfinite(self.score):
            raise DataError(f"prediction score must be finite, got {self.score}")


@dataclass
class ApResult:
    tuple_id: int
    ap: float
    precision: list[float]
    recall: list[float]
    n_gt: int


def iou(a, b) -> float:
    """Intersection over union of two (x1, y1, x2, y2) boxes, in [0, 1]."""
    ax1, ay1, ax2, ay2 = check_box(a, name="box a")
    bx1, by1, bx2, by2 = check_box(b, name="box b")
    iw = min(ax2, bx2) - max(ax1, bx1)
    ih = min(ay2, by2) - max(ay1, by1)
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    inter = iw * ih
    union = (ax2 - ax1) * (ay2 - ay1) + (bx2 - bx1) * (by2 - by1) - inter
    return inter / union


def nms(preds: list[PredBox], iou_threshold: float) -> list[PredBox]:
    """Greedy per-tuple-class suppression within one frame.

    Boxes are visited in descending score (ties by input order) within each
    tuple_id group; a box survives iff its IoU with every already-kept box
    of the group is strictly below the threshold. Output preserves input
    order.
    """
    kept_flags = [False] * len(preds)
    groups: dict[int, list[int]] = {}
    for i, p in enumerate(preds):
        groups.setdefault(p.tuple_id, []).append(i)
    for indices in groups.values():
        order = sorted(indices, key=lambda i: (-preds[i].score, i))
        kept_boxes: list[Box] = []
        for i in order:
            if all(iou(preds[i].box, kb) < iou_threshold for kb in kept_boxes):
                kept_flags[i] = True
                kept_boxes.append(preds[i].box)
    return [p for i, p in enumerate(preds) if kept_flags[i]]


def infer_frame(model: EmbeddingModel, index: TupleIndex, frame: FrameRecord,
                score_floor: float = 0.001, top_k_per_roi: int = 5,
                nms_iou_threshold: float = 0.5) -> list[PredBox]:
    """Scored tuple detections for one frame.

    Every roi emits its top_k_per_roi tuples as predictions scored
    roi_score * tuple probability; scores at or below score_floor are
    dropped, then per-tuple NMS runs over the frame.
    """
    preds: list[PredBox] = []
    for roi in frame.rois:
        if roi.feature is None:
            raise DataError(f"frame {frame.frame_id!r}: roi lacks a feature")
        f = embed_roi(model, roi.feature)
        probs = predict_tuples(index, f)
        k = min(top_k_per_roi, len(probs))
        top = np.lexsort((np.arange(len(probs)), -probs))[:k]
        for t in top:
            score = roi.roi_score * float(probs[t])
            if score <= score_floor:
                continue
            preds.append(PredBox(frame_id=frame.frame_id,
                                 tuple_id=int(index.vocab.tuples[t].tuple_id),
                                 box=roi.box, score=score))
    return nms(preds, nms_iou_threshold)


def _match_predictions(preds: list[PredBox], gts: list[GtBox],
                       iou_threshold: float) -> list[bool]:
    """Greedy TP/FP flags for predictions sorted by descending score."""
    order = sorted(range(len(preds)), key=lambda i: (-preds[i].score, i))
    gt_by_frame: dict[str, list[int]] = {}
    for j, gt in enumerate(gts):
        gt_by_frame.setdefault(gt.frame_id, []).append(j)
    matched = [False] * len(gts)
    flags_sorted = []
    for i in order:
        p = preds[i]
        best_j, best_iou = -1, 0.0
        for j in gt_by_frame.get(p.frame_id, []):
            if matched[j]:
                continue
            ov = iou(p.box, gts[j].box)
            if ov >= iou_threshold and ov > best_iou:
                best_j, best_iou = j, ov
        if best_j >= 0:
            matched[best_j] = True
            flags_sorted.append(True)
        else:
            flags_sorted.append(False)
    return flags_sorted


def _ap_from_pr(precision: list[float], recall: list[float],
                interpolation: str) -> float:
    if not recall:
        return 0.0
    if interpolation == "all":
        # exact area under the precision envelope over recall
        mrec = np.concatenate(([0.0], recall))
        mpre = np.concatenate(([0.0], precision))
        for i in range(len(mpre) - 2, -1, -1):
            mpre[i] = max(mpre[i], mpre[i + 1])
        return float(np.sum((mrec[1:] - mrec[:-1]) * mpre[1:]))
    if interpolation == "101":
        mpre = np.asarray(precision)
        mrec = np.asarray(recall)
        env = mpre.copy()
        for i in range(len(env) - 2, -1, -1):
            env[i] = max(env[i], env[i + 1])
        samples = np.linspace(0.0, 1.0, 101)
        vals = np.zeros_like(samples)
        for k, r in enumerate(samples):
            idx = np.searchsorted(mrec, r, side="left")
            vals[k] = env[idx] if idx < len(env) else 0.0
        return float(vals.mean())
    raise ConfigError(f"unknown interpolation mode {interpolation!r}")


def average_precision(preds: list[PredBox], gts: list[GtBox],
                      iou_threshold: float = 0.5,
                      interpolation: str = "all") -> ApResult:
    """AP for one tuple class. Raises when the class has no ground truth."""
    tuple_ids = {p.tuple_id for p in preds} | {g.tuple_id for g in gts}
    if len(tuple_ids) > 1:
        raise ConfigError(f"average_precision expects one tuple class, got {sorted(tuple_ids)}")
    n_gt = len(gts)
    if n_gt == 0:
        raise DataError("class has no ground truth; excluded from scoring")
    tuple_id = next(iter(tuple_ids))
    flags = _match_predictions(preds, gts, iou_threshold)
    precision, recall = [], []
    tp = fp = 0
    for is_tp in flags:
        tp += is_tp
        fp += not is_tp
        precision.append(tp / (tp + fp))
        recall.append(tp / n_gt)
    ap = _ap_from_pr(precision, recall, interpolation)
    return ApResult(tuple_id=tuple_id, ap=ap, precision=precision,
                    recall=recall, n_gt=n_gt)


def mean_ap(all_preds: list[PredBox], all_gts: list[GtBox], vocab,
            iou_threshold: float = 0.5,
            interpolation: str = "all") -> tuple[float, dict[int, ApResult]]:
    """mAP over tuple classes with >= 1 ground truth box.

    Classes outside the vocab are rejected; classes with predictions but no
    ground truth are excluded from the mean.
    """
    vocab_ids = set(vocab.ids)
    bad = {p.tuple_id for p in all_preds} - vocab_ids
    bad |= {g.tuple_id for g in all_gts} - vocab_ids
    if bad:
        raise ConfigError(f"tuple_ids not in vocab: {sorted(bad)[:8]}")
    preds_by_class: dict[int, list[PredBox]] = {}
    for p in all_preds:
        preds_by_class.setdefault(p.tuple_id, []).append(p)
    gts_by_class: dict[int, list[GtBox]] = {}
    for g in all_gts:
        gts_by_class.setdefault(g.tuple_id, []).append(g)
    if not gts_by_class:
        raise DataError("no class has ground truth; mAP undefined")
    results: dict[int, ApResult] = {}
    for tuple_id in sorted(gts_by_class):
        results[tuple_id] = average_precision(
            preds_by_class.get(tuple_id, []), gts_by_class[tuple_id],
            iou_threshold=iou_threshold, interpolation=interpolation)
    mean = float(np.mean([r.ap for r in results.values()]))
    return mean, results


def ground_truth_from_key(frames: list[FrameRecord], key) -> list[GtBox]:
    """GT boxes for every foreground roi recorded in a synthetic answer key."""
    gts = []
    for frame in frames:
        for i, roi in frame.foreground_rois():
            gts.append(GtBox(frame_id=frame.frame_id,
                             tuple_id=key.tuple_of(frame.frame_id, i),
                             box=roi.box))
    return gts


def write_predictions(path, preds: list[PredBox]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for p in preds:
            fh.write(json.dumps({"frame_id": p.frame_id, "tuple_id": p.tuple_id,
                                 "box": list(p.box), "score": p.score}) + "\n")


def read_predictions(path) -> list[PredBox]:
    return _read_boxes(path, scored=True)


def write_ground_truth(path, gts: list[GtBox]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for g in gts:
            fh.write(json.dumps({"frame_id": g.frame_id, "tuple_id": g.tuple_id,
                                 "box": list(g.box)}) + "\n")


def read_ground_truth(path) -> list[GtBox]:
    return _read_boxes(path, scored=False)


def _read_boxes(path, scored: bool):
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                data = json.loads(line)
                if scored:
                    out.append(PredBox(frame_id=str(data["frame_id"]),
                                       tuple_id=int(data["tuple_id"]),
                                       box=data["box"],
                                       score=float(data["score"])))
                else:
                    out.append(GtBox(frame_id=str(data["frame_id"]),
                                     tuple_id=int(data["tuple_id"]),
                                     box=data["box"]))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError, DataError) as exc:
                raise ParseError(f"bad box record: {exc}", line=lineno) from exc
    return out
