"""Pseudo ground-truth filtering: score threshold + narration token match.

A detection survives when its score clears the threshold AND its category
occurs in the frame narration as a contiguous whole-token subsequence
(optionally tolerating a trailing "s"/"es" plural on either side). Classes
that end up with too few boxes across the whole dataset are then pruned.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .data_io import FrameRecord, frame_from_dict
from .errors import ConfigError, DataError
from .validation import check_box


@dataclass
class Detection:
    box: tuple[float, float, float, float]
    score: float
    category: str

    def __post_init__(self):
        self.box = check_box(self.box, name="detection box")
        if not 0.0 <= self.score <= 1.0:
            raise DataError(f"detection score must lie in [0, 1], got {self.score}")
        if not self.category:
            raise DataError("detection category must be nonempty")


@dataclass
class PseudoLabelConfig:
    score_threshold: float = 0.5
    min_class_count: int = 50
    plural_stripping: bool = True

    def __post_init__(self):
        if not 0.0 <= self.score_threshold <= 1.0:
            raise ConfigError("score_threshold must lie in [0, 1]")
        if self.min_class_count < 1:
            raise ConfigError("min_class_count must be >= 1")


@dataclass
class DatasetStats:
    frames_in: int = 0
    frames_kept: int = 0
    boxes_in: int = 0
    boxes_kept: int = 0
    errors: int = 0
    error_records: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"frames_in": self.frames_in, "frames_kept": self.frames_kept,
                "boxes_in": self.boxes_in, "boxes_kept": self.boxes_kept,
                "errors": self.errors, "error_records": list(self.error_records)}


@dataclass
class PseudoDataset:
    frames: list[FrameRecord]
    class_counts: dict[str, int]
    stats: DatasetStats


def _plural_variants(word: str) -> set[str]:
    variants = {word}
    if word.endswith("es"):
        variants.add(word[:-2])
    if word.endswith("s"):
        variants.add(word[:-1])
    return variants


def _words_match(a: str, b: str, plural_stripping: bool) -> bool:
    if a == b:
        return True
    if not plural_stripping:
        return False
    return bool(_plural_variants(a) & _plural_variants(b))


def match_token_index(category: str, narration_tokens, plural_stripping: bool = True) -> int | None:
    """Index where the category first matches as a whole-token subsequence.

    Multi-word categories must appear as consecutive tokens; the returned
    index is the start of the first matched span. None when absent.
    """
    if not category:
        raise ConfigError("category must be nonempty")
    cat_words = category.lower().split()
    tokens = [t.lower() for t in narration_tokens]
    span = len(cat_words)
    for start in range(len(tokens) - span + 1):
        if all(_words_match(tokens[start + k], cat_words[k], plural_stripping)
               for k in range(span)):
            return start
    return None


def token_match(category: str, narration_tokens, plural_stripping: bool = True) -> bool:
    return match_token_index(category, narration_tokens, plural_stripping) is not None


def filter_frame(detections: list[Detection], narration_tokens,
                 cfg: PseudoLabelConfig) -> list[Detection]:
    """Keep detections with score >= threshold whose category is narrated."""
    return [d for d in detections
            if d.score >= cfg.score_threshold
            and token_match(d.category, narration_tokens, cfg.plural_stripping)]


def _frame_detections(frame: FrameRecord) -> list[tuple[int, Detection]]:
    out = []
    for i, roi in enumerate(frame.rois):
        if roi.is_background:
            continue
        out.append((i, Detection(box=roi.box, score=roi.roi_score,
                                 category=roi.category)))
    return out


def build_dataset(records, cfg: PseudoLabelConfig,
                  require_features: bool = False) -> PseudoDataset:
    """Filter a stream of frames into a pseudo-labeled dataset.

    Accepts FrameRecord objects, raw frame dicts, or (index, dict-or-error)
    pairs from a lenient reader. Malformed records are tallied in the stats
    and skipped; processing continues. Background rois ride along untouched
    in kept frames (they carry no category to match). require_features
    rejects the detections-only record variant, which is fine for stats
    runs but useless for training.

    Two passes: per-frame filtering first, then classes whose surviving box
    count falls below min_class_count are removed and emptied frames are
    dropped again.
    """
    stats = DatasetStats()
    filtered: list[tuple[FrameRecord, list[int]]] = []  # (frame, kept fg roi indices)
    for record_index, record in enumerate(records):
        if isinstance(record, tuple):
            record_index, record = record
        try:
            if isinstance(record, Exception):
                raise record
            if isinstance(record, dict):
                frame = frame_from_dict(record, require_features=require_features)
            else:
                frame = record
            indexed = _frame_detections(frame)
        except DataError as exc:
            stats.errors += 1
            stats.error_records.append(f"record {record_index}: {exc}")
            continue
        stats.frames_in += 1
        stats.boxes_in += len(indexed)
        kept = [i for i, det in indexed
                if det.score >= cfg.score_threshold
                and token_match(det.category, frame.narration_tokens,
                                cfg.plural_stripping)]
        if kept:
            filtered.append((frame, kept))

    class_counts: dict[str, int] = {}
    for frame, kept in filtered:
        for i in kept:
            cat = frame.rois[i].category
            class_counts[cat] = class_counts.get(cat, 0) + 1

    surviving = {c for c, n in class_counts.items() if n >= cfg.min_class_count}
    out_frames: list[FrameRecord] = []
    for frame, kept in filtered:
        final = [i for i in kept if frame.rois[i].category in surviving]
        if not final:
            continue
        keep_set = set(final)
        rois = [r for i, r in enumerate(frame.rois)
                if i in keep_set or r.is_background]
        out_frames.append(FrameRecord(
            frame_id=frame.frame_id, rois=rois,
            narration_tokens=frame.narration_tokens,
            token_embeddings=frame.token_embeddings))
        stats.frames_kept += 1
        stats.boxes_kept += len(final)

    final_counts = {c: n for c, n in class_counts.items() if c in surviving}
    return PseudoDataset(frames=out_frames, class_counts=final_counts, stats=stats)
