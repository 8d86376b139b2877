import numpy as np
import pytest

from tupledet.data_io import FrameRecord, Roi
from tupledet.errors import ConfigError
from tupledet.pseudo_label import (Detection, PseudoLabelConfig, build_dataset,
                                   filter_frame, match_token_index, token_match)


def det(score, category, box=(0.0, 0.0, 10.0, 10.0)):
    return Detection(box=box, score=score, category=category)


def frame(frame_id, dets, tokens, with_bg=False):
    rois = [Roi(box=d.box, feature=np.zeros(4), category=d.category,
                roi_score=d.score, is_background=False) for d in dets]
    if with_bg:
        rois.append(Roi(box=(1.0, 1.0, 5.0, 5.0), feature=np.zeros(4),
                        category=None, roi_score=0.1, is_background=True))
    return FrameRecord(frame_id=frame_id, rois=rois, narration_tokens=tokens,
                       token_embeddings=np.zeros((len(tokens), 4)))


class TestTokenMatch:
    def test_exact_subsequence(self):
        assert token_match("frying pan", ["heat", "the", "frying", "pan"])

    def test_whole_token_rule(self):
        assert not token_match("pan", ["make", "pancakes"])

    def test_plural_stripping(self):
        assert token_match("tomato", ["slice", "the", "tomatoes"])

    def test_plural_on_category_side(self):
        assert token_match("tomatoes", ["slice", "the", "tomato"])

    def test_es_suffix(self):
        assert token_match("glass", ["two", "glasses"])

    def test_plural_stripping_disabled(self):
        assert not token_match("tomato", ["tomatoes"], plural_stripping=False)
        assert token_match("tomato", ["tomato"], plural_stripping=False)

    def test_case_insensitive(self):
        assert token_match("Pan", ["the", "PAN"])

    def test_multiword_order_matters(self):
        assert not token_match("frying pan", ["pan", "frying"])

    def test_match_index_is_span_start(self):
        assert match_token_index("frying pan", ["heat", "frying", "pan"]) == 1
        assert match_token_index("egg", ["egg", "and", "egg"]) == 0
        assert match_token_index("fish", ["no", "match"]) is None

    def test_empty_category_rejected(self):
        with pytest.raises(ConfigError):
            token_match("", ["a"])


class TestFilterFrame:
    def test_kept_when_both_conditions_hold(self):
        cfg = PseudoLabelConfig(score_threshold=0.5, min_class_count=1)
        kept = filter_frame([det(0.7, "pan")], ["wash", "the", "pan"], cfg)
        assert len(kept) == 1

    def test_dropped_below_threshold(self):
        cfg = PseudoLabelConfig(score_threshold=0.5, min_class_count=1)
        kept = filter_frame([det(0.4, "pan")], ["wash", "the", "pan"], cfg)
        assert kept == []

    def test_dropped_when_not_narrated(self):
        cfg = PseudoLabelConfig(score_threshold=0.5, min_class_count=1)
        kept = filter_frame([det(0.9, "pan")], ["slice", "the", "bread"], cfg)
        assert kept == []

    def test_order_preserved(self):
        cfg = PseudoLabelConfig(score_threshold=0.5, min_class_count=1)
        dets = [det(0.9, "pan"), det(0.2, "egg"), det(0.6, "egg")]
        kept = filter_frame(dets, ["pan", "egg"], cfg)
        assert [d.score for d in kept] == [0.9, 0.6]


# ten frames with mixed scores, narrations, plurals, and a multi-word
# category; expected survivors worked out by hand written next to each frame
FIXTURE = [
    # f0: pan 0.9 narrated -> kept; egg 0.3 below threshold -> dropped
    ("f0", [det(0.9, "pan"), det(0.3, "egg")], ["wash", "the", "pan", "egg"]),
    # f1: tomato 0.8 matches "tomatoes" -> kept
    ("f1", [det(0.8, "tomato")], ["slice", "tomatoes", "now"]),
    # f2: egg 0.95 not narrated -> dropped; frame empties
    ("f2", [det(0.95, "egg")], ["heat", "the", "oil"]),
    # f3: frying pan 0.7 matches contiguous tokens -> kept
    ("f3", [det(0.7, "frying pan")], ["heat", "the", "frying", "pan"]),
    # f4: pan 0.5 exactly at threshold -> kept (rule is >=)
    ("f4", [det(0.5, "pan")], ["pan", "sauce"]),
    # f5: pan 0.9 kept; pan 0.85 kept (same class twice)
    ("f5", [det(0.9, "pan"), det(0.85, "pan")], ["two", "pans"]),
    # f6: cup 0.9 kept at filter stage but the cup class ends up rare
    ("f6", [det(0.9, "cup")], ["a", "cup"]),
    # f7: "pan" vs "pancakes" must not match -> dropped
    ("f7", [det(0.9, "pan")], ["make", "pancakes"]),
    # f8: tomato 0.6 kept; egg 0.7 kept
    ("f8", [det(0.6, "tomato"), det(0.7, "egg")], ["egg", "and", "tomato"]),
    # f9: egg 0.45 below threshold -> dropped; tomato 0.55 kept
    ("f9", [det(0.45, "egg"), det(0.55, "tomato")], ["egg", "on", "tomato"]),
]

# survivors before class pruning:
#   pan: f0(0.9), f4(0.5), f5(0.9), f5(0.85)   -> 4
#   tomato: f1(0.8), f8(0.6), f9(0.55)         -> 3
#   egg: f8(0.7)                               -> 1
#   frying pan: f3(0.7)                        -> 1
#   cup: f6(0.9)                               -> 1
# with min_class_count=3: pan and tomato survive; f3/f6/f8-egg pruned
EXPECTED_KEPT = {
    ("f0", "pan", 0.9), ("f1", "tomato", 0.8), ("f4", "pan", 0.5),
    ("f5", "pan", 0.9), ("f5", "pan", 0.85), ("f8", "tomato", 0.6),
    ("f9", "tomato", 0.55),
}


def fixture_frames():
    return [frame(fid, dets, tokens) for fid, dets, tokens in FIXTURE]


class TestBuildDataset:
    def test_hand_filtered_fixture_exact_multiset(self):
        cfg = PseudoLabelConfig(score_threshold=0.5, min_class_count=3)
        out = build_dataset(fixture_frames(), cfg)
        got = {(f.frame_id, r.category, r.roi_score)
               for f in out.frames for r in f.rois if not r.is_background}
        assert got == EXPECTED_KEPT
        assert out.class_counts == {"pan": 4, "tomato": 3}
        assert out.stats.frames_in == 10
        assert out.stats.boxes_in == 14
        assert out.stats.boxes_kept == 7
        assert out.stats.frames_kept == 6
        assert out.stats.errors == 0

    def test_all_below_threshold_gives_empty(self):
        cfg = PseudoLabelConfig(score_threshold=0.99, min_class_count=1)
        out = build_dataset(fixture_frames(), cfg)
        assert out.frames == []
        assert out.stats.boxes_kept == 0

    def test_rare_class_pruned(self):
        frames = [frame(f"x{i}", [det(0.9, "cup")], ["cup"]) for i in range(3)]
        cfg = PseudoLabelConfig(score_threshold=0.5, min_class_count=5)
        out = build_dataset(frames, cfg)
        assert "cup" not in out.class_counts
        assert out.frames == []

    def test_malformed_records_tallied_and_skipped(self):
        records = [
            frame("ok", [det(0.9, "pan")], ["pan"]),
            {"frame_id": "bad"},  # missing fields
            frame("ok2", [det(0.8, "pan")], ["pan"]),
        ]
        cfg = PseudoLabelConfig(score_threshold=0.5, min_class_count=1)
        out = build_dataset(records, cfg)
        assert out.stats.errors == 1
        assert out.stats.frames_in == 2
        assert len(out.stats.error_records) == 1
        assert "record 1" in out.stats.error_records[0]
        assert {f.frame_id for f in out.frames} == {"ok", "ok2"}

    def test_background_rois_ride_along(self):
        f = frame("bgf", [det(0.9, "pan")], ["pan"], with_bg=True)
        cfg = PseudoLabelConfig(score_threshold=0.5, min_class_count=1)
        out = build_dataset([f], cfg)
        kinds = [(r.is_background, r.category) for r in out.frames[0].rois]
        assert (False, "pan") in kinds
        assert (True, None) in kinds

    def test_threshold_monotonicity(self):
        taus = [round(0.1 * k, 1) for k in range(1, 10)]
        kept = []
        for tau in taus:
            cfg = PseudoLabelConfig(score_threshold=tau, min_class_count=1)
            kept.append(build_dataset(fixture_frames(), cfg).stats.boxes_kept)
        assert all(a >= b for a, b in zip(kept, kept[1:]))

    def test_min_class_count_monotonicity(self):
        survivors = []
        for mcc in range(1, 6):
            cfg = PseudoLabelConfig(score_threshold=0.5, min_class_count=mcc)
            survivors.append(len(build_dataset(fixture_frames(), cfg).class_counts))
        assert all(a >= b for a, b in zip(survivors, survivors[1:]))

    def test_idempotent_on_own_output(self):
        cfg = PseudoLabelConfig(score_threshold=0.5, min_class_count=3)
        once = build_dataset(fixture_frames(), cfg)
        twice = build_dataset(once.frames, cfg)
        assert twice.stats.boxes_kept == once.stats.boxes_kept
        assert twice.class_counts == once.class_counts
        assert [f.frame_id for f in twice.frames] == [f.frame_id for f in once.frames]

    def test_output_satisfies_trainer_precondition(self):
        cfg = PseudoLabelConfig(score_threshold=0.5, min_class_count=3)
        out = build_dataset(fixture_frames(), cfg)
        for f in out.frames:
            assert any(token_match(r.category, f.narration_tokens)
                       for r in f.rois if not r.is_background)


class TestConfigValidation:
    def test_threshold_range(self):
        with pytest.raises(ConfigError):
            PseudoLabelConfig(score_threshold=1.5)

    def test_min_class_count_positive(self):
        with pytest.raises(ConfigError):
            PseudoLabelConfig(min_class_count=0)
