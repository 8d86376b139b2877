"""Zero-shot and few-shot evaluation protocols over synthetic or real frames.

Zero-shot: train on frames whose tuples all come from the reduced
vocabulary, then evaluate against an index built from the full vocabulary,
reporting seen and unseen classes separately. Few-shot additionally
finetunes on a fixed number of shot frames per unseen tuple drawn from
outside the evaluation set.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data_io import AnswerKey, FrameRecord
from .errors import ConfigError, DataError
from .evaluation import (GtBox, PredBox, ground_truth_from_key, infer_frame,
                         mean_ap)
from .model import (EmbeddingModel, ModelConfig, TupleVocab, build_tuple_index,
                    embed_roi, predict_tuples)
from .synthetic import coverage_warnings, make_zero_shot_split
from .trainer import TrainConfig, finetune_few_shot, train


def top1_accuracy(model: EmbeddingModel, vocab: TupleVocab,
                  frames: list[FrameRecord], key: AnswerKey,
                  restrict_to: set[int] | None = None) -> tuple[float, int]:
    """Fraction of foreground rois whose argmax tuple equals the true tuple.

    restrict_to limits scoring to rois whose true tuple lies in the set.
    Returns (accuracy, number of rois scored).
    """
    index = build_tuple_index(model, vocab)
    id_at_row = index.vocab.ids
    hits = total = 0
    for frame in frames:
        for i, roi in frame.foreground_rois():
            true_id = key.tuple_of(frame.frame_id, i)
            if restrict_to is not None and true_id not in restrict_to:
                continue
            probs = predict_tuples(index, embed_roi(model, roi.feature))
            pred_id = id_at_row[int(np.argmax(probs))]
            hits += pred_id == true_id
            total += 1
    if total == 0:
        raise DataError("no rois to score")
    return hits / total, total


def predict_frames(model: EmbeddingModel, vocab: TupleVocab,
                   frames: list[FrameRecord], score_floor: float = 0.001,
                   top_k_per_roi: int = 5, nms_iou_threshold: float = 0.5
                   ) -> list[PredBox]:
    index = build_tuple_index(model, vocab)
    preds: list[PredBox] = []
    for frame in frames:
        preds.extend(infer_frame(model, index, frame, score_floor=score_floor,
                                 top_k_per_roi=top_k_per_roi,
                                 nms_iou_threshold=nms_iou_threshold))
    return preds


def _subset_map(preds: list[PredBox], gts: list[GtBox], vocab: TupleVocab,
                ids: set[int]) -> float | None:
    sub_gts = [g for g in gts if g.tuple_id in ids]
    if not sub_gts:
        return None
    sub_preds = [p for p in preds if p.tuple_id in ids]
    value, _ = mean_ap(sub_preds, sub_gts, vocab)
    return value


def select_shot_frames(test_frames: list[FrameRecord], key: AnswerKey,
                       unseen_ids: list[int], shots_per_tuple: int,
                       seed: int) -> tuple[list[FrameRecord], list[FrameRecord]]:
    """Pick shot frames covering each unseen tuple; the rest stay for eval.

    A frame can serve as a shot for multiple unseen tuples. Selection is a
    seeded draw from the frames containing each tuple, so protocols are
    reproducible.
    """
    frames_with: dict[int, list[int]] = {t: [] for t in unseen_ids}
    for fi, frame in enumerate(test_frames):
        present = {key.tuple_of(frame.frame_id, i)
                   for i, _ in frame.foreground_rois()}
        for t in present & set(unseen_ids):
            frames_with[t].append(fi)
    rng = np.random.default_rng([seed, 53])
    shot_indices: set[int] = set()
    for t in unseen_ids:
        candidates = [fi for fi in frames_with[t] if fi not in shot_indices]
        already = sum(1 for fi in shot_indices if fi in frames_with[t])
        need = shots_per_tuple - already
        if need > len(candidates):
            raise DataError(
                f"tuple {t} appears in only {already + len(candidates)} frames; "
                f"cannot draw {shots_per_tuple} shots")
        if need > 0:
            picks = rng.choice(len(candidates), size=need, replace=False)
            shot_indices.update(candidates[p] for p in picks)
    shots = [test_frames[i] for i in sorted(shot_indices)]
    eval_frames = [f for i, f in enumerate(test_frames) if i not in shot_indices]
    return shots, eval_frames


@dataclass
class ZeroShotReport:
    overall_map: float
    seen_map: float | None
    unseen_map: float | None
    unseen_top1: float
    unseen_count: int
    chance: float
    warnings: list[str]

    def to_dict(self) -> dict:
        return {"overall_map": self.overall_map, "seen_map": self.seen_map,
                "unseen_map": self.unseen_map, "unseen_top1": self.unseen_top1,
                "unseen_count": self.unseen_count, "chance": self.chance,
                "warnings": list(self.warnings)}


def evaluate_zero_shot(model: EmbeddingModel, full_vocab: TupleVocab,
                       eval_frames: list[FrameRecord], key: AnswerKey,
                       holdout_ids: list[int], score_floor: float = 0.001,
                       top_k_per_roi: int = 5) -> ZeroShotReport:
    if not holdout_ids:
        raise ConfigError("zero-shot evaluation needs a nonempty holdout")
    unseen = set(holdout_ids)
    seen = set(full_vocab.ids) - unseen
    preds = predict_frames(model, full_vocab, eval_frames,
                           score_floor=score_floor, top_k_per_roi=top_k_per_roi)
    gts = ground_truth_from_key(eval_frames, key)
    overall, _ = mean_ap(preds, gts, full_vocab)
    acc, count = top1_accuracy(model, full_vocab, eval_frames, key,
                               restrict_to=unseen)
    return ZeroShotReport(
        overall_map=overall,
        seen_map=_subset_map(preds, gts, full_vocab, seen),
        unseen_map=_subset_map(preds, gts, full_vocab, unseen),
        unseen_top1=acc, unseen_count=count,
        chance=1.0 / len(full_vocab),
        warnings=coverage_warnings(full_vocab, holdout_ids))


def run_zero_shot(train_frames: list[FrameRecord], test_frames: list[FrameRecord],
                  full_vocab: TupleVocab, key: AnswerKey, model_cfg: ModelConfig,
                  cfg: TrainConfig, score_floor: float = 0.001,
                  top_k_per_roi: int = 5) -> tuple[EmbeddingModel, ZeroShotReport]:
    holdout = key.holdout_tuple_ids
    train_vocab, eval_vocab = make_zero_shot_split(full_vocab, holdout)
    model, _, _ = train(train_frames, train_vocab, model_cfg, cfg)
    report = evaluate_zero_shot(model, eval_vocab, test_frames, key, holdout,
                                score_floor=score_floor,
                                top_k_per_roi=top_k_per_roi)
    return model, report


@dataclass
class FewShotReport:
    zero_shot: ZeroShotReport
    few_shot: ZeroShotReport
    shots_per_tuple: int
    n_shot_frames: int
    n_eval_frames: int

    def to_dict(self) -> dict:
        return {"zero_shot": self.zero_shot.to_dict(),
                "few_shot": self.few_shot.to_dict(),
                "shots_per_tuple": self.shots_per_tuple,
                "n_shot_frames": self.n_shot_frames,
                "n_eval_frames": self.n_eval_frames}


def run_few_shot(train_frames: list[FrameRecord], test_frames: list[FrameRecord],
                 full_vocab: TupleVocab, key: AnswerKey, model_cfg: ModelConfig,
                 cfg: TrainConfig, shots_per_tuple: int = 5,
                 finetune_steps: int | None = None, score_floor: float = 0.001,
                 top_k_per_roi: int = 5
                 ) -> tuple[EmbeddingModel, FewShotReport]:
    """Zero-shot protocol, then finetune on shots and re-evaluate.

    Shot frames are removed from the evaluation set before either
    measurement so the comparison is apples to apples.
    """
    holdout = key.holdout_tuple_ids
    shots, eval_frames = select_shot_frames(test_frames, key, holdout,
                                            shots_per_tuple, cfg.seed)
    train_vocab, eval_vocab = make_zero_shot_split(full_vocab, holdout)
    base_model, _, _ = train(train_frames, train_vocab, model_cfg, cfg)
    zs_report = evaluate_zero_shot(base_model, eval_vocab, eval_frames, key,
                                   holdout, score_floor=score_floor,
                                   top_k_per_roi=top_k_per_roi)
    tuned = finetune_few_shot(base_model, shots, eval_vocab, cfg,
                              steps=finetune_steps)
    fs_report = evaluate_zero_shot(tuned, eval_vocab, eval_frames, key,
                                   holdout, score_floor=score_floor,
                                   top_k_per_roi=top_k_per_roi)
    return tuned, FewShotReport(zero_shot=zs_report, few_shot=fs_report,
                                shots_per_tuple=shots_per_tuple,
                                n_shot_frames=len(shots),
                                n_eval_frames=len(eval_frames))
