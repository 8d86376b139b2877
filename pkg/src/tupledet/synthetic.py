"""Planted-concept synthetic datasets and the zero-shot vocabulary split.

Every (noun, context) pair gets a unit latent direction built additively
from per-word latents, so the generated data carries recoverable
compositional structure:

    pair(n, c)      = unit(u_n + v_c)                      in R^{d_latent}
    roi feature     = A_vis @ pair(n, c) + sigma * noise   in R^{visual_in}
    tuple base emb  = A_txt @ pair(n, c)                   in R^{text_in}

The projection maps are scaled orthonormal bases (embedding_scale times an
isometry), so planted angles survive the lift exactly and the embedding
magnitudes condition training well at the default step sizes.

Narration token embeddings mix a word's own latent toward its co-narrated
partner word by `contextual_mix` (the noun token of a (n, c) roi leans
toward v_c and vice versa), which is what makes the tuple recoverable from
the supervision signal. Setting contextual_mix=0 gives context-free token
embeddings. Generation is a pure function of the config.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data_io import AnswerKey, FrameRecord, Roi
from .errors import ConfigError
from .model import TupleEntry, TupleVocab

NOUN_WORDS = ["pan", "bowl", "knife", "tomato", "egg", "fish", "dough", "cup",
              "onion", "plate", "spoon", "board"]
CONTEXT_WORDS = ["cut", "wash", "fry", "stir", "peel", "pour", "slice", "mix"]
FILLER_WORDS = ["the", "a", "now", "we", "then", "and", "into", "with",
                "this", "next", "some", "here"]

CANVAS_W, CANVAS_H = 640.0, 480.0


@dataclass
class SyntheticConfig:
    n_nouns: int = 8
    n_contexts: int = 4
    observed_pairs: list[tuple[int, int]] | None = None   # grid indices
    holdout_pairs: list[tuple[int, int]] = field(default_factory=list)
    d_latent: int = 16
    visual_in_dim: int = 32
    text_in_dim: int = 32
    noise_sigma: float = 0.1
    frames: int = 500
    test_frames: int = 250
    rois_per_frame: int = 2
    bg_rois_per_frame: int = 1
    contextual_mix: float = 0.5
    embedding_scale: float = 3.0
    min_fillers: int = 2
    max_fillers: int = 6
    seed: int = 0

    def __post_init__(self):
        if self.n_nouns < 1 or self.n_contexts < 1:
            raise ConfigError("need at least one noun and one context")
        if self.observed_pairs is None:
            # drop one context per noun in a diagonal pattern; the dropped
            # cells are the natural candidates for a compositional holdout
            self.observed_pairs = [
                (i, j) for i in range(self.n_nouns) for j in range(self.n_contexts)
                if j != i % self.n_contexts
            ]
        grid = {(i, j) for i in range(self.n_nouns) for j in range(self.n_contexts)}
        observed = set(map(tuple, self.observed_pairs))
        holdout = set(map(tuple, self.holdout_pairs))
        if not observed <= grid or not holdout <= grid:
            raise ConfigError("pairs must lie on the n_nouns x n_contexts grid")
        if observed & holdout:
            raise ConfigError(f"holdout pairs overlap training pairs: "
                              f"{sorted(observed & holdout)}")
        if not observed:
            raise ConfigError("observed_pairs must be nonempty")
        if not 0.0 <= self.contextual_mix <= 1.0:
            raise ConfigError("contextual_mix must lie in [0, 1]")
        if self.rois_per_frame < 1 or self.frames < 1:
            raise ConfigError("frames and rois_per_frame must be >= 1")

    def to_dict(self) -> dict:
        return {
            "n_nouns": self.n_nouns, "n_contexts": self.n_contexts,
            "observed_pairs": [list(p) for p in self.observed_pairs],
            "holdout_pairs": [list(p) for p in self.holdout_pairs],
            "d_latent": self.d_latent, "visual_in_dim": self.visual_in_dim,
            "text_in_dim": self.text_in_dim, "noise_sigma": self.noise_sigma,
            "frames": self.frames, "test_frames": self.test_frames,
            "rois_per_frame": self.rois_per_frame,
            "bg_rois_per_frame": self.bg_rois_per_frame,
            "contextual_mix": self.contextual_mix,
            "embedding_scale": self.embedding_scale,
            "min_fillers": self.min_fillers, "max_fillers": self.max_fillers,
            "seed": self.seed,
        }


def default_holdout_pairs(cfg: SyntheticConfig, count: int) -> list[tuple[int, int]]:
    """First `count` grid cells outside observed_pairs, scanning by noun.

    With the default diagonal pattern these are compositional: every held
    noun and context also appears in some observed pair.
    """
    observed = set(map(tuple, cfg.observed_pairs))
    spare = [(i, j) for i in range(cfg.n_nouns) for j in range(cfg.n_contexts)
             if (i, j) not in observed]
    if count > len(spare):
        raise ConfigError(f"cannot hold out {count} pairs, only {len(spare)} unobserved")
    return spare[:count]


def _word(pool: list[str], prefix: str, idx: int) -> str:
    return pool[idx] if idx < len(pool) else f"{prefix}{idx}"


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v)


def _orthonormal_columns(rng, rows: int, cols: int) -> np.ndarray:
    if cols > rows:
        raise ConfigError("d_latent must not exceed the projected dimension")
    q, r = np.linalg.qr(rng.normal(size=(rows, cols)))
    return q * np.sign(np.diag(r))  # fix column signs so QR is deterministic


def _rand_box(rng) -> tuple[float, float, float, float]:
    w = rng.uniform(60.0, 200.0)
    h = rng.uniform(60.0, 150.0)
    x1 = rng.uniform(0.0, CANVAS_W - w)
    y1 = rng.uniform(0.0, CANVAS_H - h)
    return (x1, y1, x1 + w, y1 + h)


class _Planted:
    """Latent directions and projection maps shared by all generated frames."""

    def __init__(self, cfg: SyntheticConfig):
        rng = np.random.default_rng([cfg.seed, 0])
        self.nouns = [_word(NOUN_WORDS, "noun", i) for i in range(cfg.n_nouns)]
        self.contexts = [_word(CONTEXT_WORDS, "ctx", j) for j in range(cfg.n_contexts)]
        n_words = cfg.n_nouns + cfg.n_contexts
        if n_words <= cfg.d_latent:
            # mutually orthonormal word latents: pair vectors (u+v)/sqrt(2)
            # then form exact parallelograms, the structure the analogy and
            # zero-shot oracles measure
            basis = _orthonormal_columns(rng, cfg.d_latent, n_words).T
            self.u = [basis[i] for i in range(cfg.n_nouns)]
            self.v = [basis[cfg.n_nouns + j] for j in range(cfg.n_contexts)]
        else:
            self.u = [_unit(rng.normal(size=cfg.d_latent)) for _ in range(cfg.n_nouns)]
            self.v = [_unit(rng.normal(size=cfg.d_latent)) for _ in range(cfg.n_contexts)]
        self.filler_latents = {w: _unit(rng.normal(size=cfg.d_latent))
                               for w in FILLER_WORDS}
        self.a_vis = cfg.embedding_scale * _orthonormal_columns(
            rng, cfg.visual_in_dim, cfg.d_latent)
        self.a_txt = cfg.embedding_scale * _orthonormal_columns(
            rng, cfg.text_in_dim, cfg.d_latent)

    def pair_latent(self, i: int, j: int) -> np.ndarray:
        return _unit(self.u[i] + self.v[j])

    def noun_token_latent(self, i: int, j: int, mix: float) -> np.ndarray:
        return _unit((1.0 - mix) * self.u[i] + mix * self.v[j])

    def context_token_latent(self, i: int, j: int, mix: float) -> np.ndarray:
        return _unit((1.0 - mix) * self.v[j] + mix * self.u[i])


def _build_vocab(cfg: SyntheticConfig, planted: _Planted) -> tuple[TupleVocab, dict]:
    cells = sorted(set(map(tuple, cfg.observed_pairs)) | set(map(tuple, cfg.holdout_pairs)))
    entries, cell_to_id = [], {}
    for tid, (i, j) in enumerate(cells):
        cell_to_id[(i, j)] = tid
        entries.append(TupleEntry(
            tuple_id=tid, noun=planted.nouns[i], context=planted.contexts[j],
            context_kind="verb",
            base_embedding=planted.a_txt @ planted.pair_latent(i, j)))
    return TupleVocab(entries), cell_to_id


def _make_frame(cfg: SyntheticConfig, planted: _Planted, cell_to_id: dict,
                frame_id: str, pair_choices: list[tuple[int, int]], rng,
                key_rows: dict) -> FrameRecord:
    rois: list[Roi] = []
    narration: list[tuple[str, np.ndarray]] = []  # (token, latent)
    for i, j in pair_choices:
        feature = planted.a_vis @ planted.pair_latent(i, j)
        feature = feature + cfg.noise_sigma * rng.normal(size=cfg.visual_in_dim)
        rois.append(Roi(box=_rand_box(rng), feature=feature,
                        category=planted.nouns[i],
                        roi_score=float(rng.uniform(0.7, 0.95)),
                        is_background=False))
        narration.append((planted.nouns[i],
                          planted.noun_token_latent(i, j, cfg.contextual_mix)))
        narration.append((planted.contexts[j],
                          planted.context_token_latent(i, j, cfg.contextual_mix)))
    for _ in range(cfg.bg_rois_per_frame):
        noise_dir = _unit(rng.normal(size=cfg.d_latent))
        feature = planted.a_vis @ noise_dir
        feature = feature + cfg.noise_sigma * rng.normal(size=cfg.visual_in_dim)
        rois.append(Roi(box=_rand_box(rng), feature=feature, category=None,
                        roi_score=float(rng.uniform(0.05, 0.3)),
                        is_background=True))
    n_fillers = int(rng.integers(cfg.min_fillers, cfg.max_fillers + 1))
    filler_picks = rng.choice(len(FILLER_WORDS), size=n_fillers, replace=False)
    for k in filler_picks:
        w = FILLER_WORDS[k]
        narration.append((w, planted.filler_latents[w]))
    order = rng.permutation(len(narration))
    tokens = [narration[k][0] for k in order]
    embs = np.stack([
        planted.a_txt @ narration[k][1]
        + cfg.noise_sigma * rng.normal(size=cfg.text_in_dim)
        for k in order
    ])
    for idx, (i, j) in enumerate(pair_choices):
        key_rows[(frame_id, idx)] = cell_to_id[(i, j)]
    return FrameRecord(frame_id=frame_id, rois=rois,
                       narration_tokens=tokens, token_embeddings=embs)


def _choose_pairs(pairs: list[tuple[int, int]], count: int, rng) -> list[tuple[int, int]]:
    """Pick `count` pairs with pairwise-distinct nouns (narration stays unambiguous)."""
    order = rng.permutation(len(pairs))
    chosen, used_nouns = [], set()
    for k in order:
        i, j = pairs[k]
        if i in used_nouns:
            continue
        chosen.append((i, j))
        used_nouns.add(i)
        if len(chosen) == count:
            break
    return chosen


def generate_synthetic(cfg: SyntheticConfig) -> tuple[list[FrameRecord], list[FrameRecord], TupleVocab, AnswerKey]:
    """Build (train_frames, test_frames, vocab, answer_key).

    Holdout pairs appear only in test frames. Every foreground roi's noun
    word occurs in its frame narration, so all frames satisfy the training
    precondition.
    """
    planted = _Planted(cfg)
    vocab, cell_to_id = _build_vocab(cfg, planted)
    observed = sorted(set(map(tuple, cfg.observed_pairs)))
    test_pool = sorted(set(map(tuple, cfg.observed_pairs)) | set(map(tuple, cfg.holdout_pairs)))
    key_rows: dict[tuple[str, int], int] = {}

    train_frames = []
    rng_train = np.random.default_rng([cfg.seed, 1])
    for n in range(cfg.frames):
        picks = _choose_pairs(observed, cfg.rois_per_frame, rng_train)
        train_frames.append(_make_frame(cfg, planted, cell_to_id, f"train-{n:05d}",
                                        picks, rng_train, key_rows))

    test_frames = []
    rng_test = np.random.default_rng([cfg.seed, 2])
    for n in range(cfg.test_frames):
        picks = _choose_pairs(test_pool, cfg.rois_per_frame, rng_test)
        test_frames.append(_make_frame(cfg, planted, cell_to_id, f"test-{n:05d}",
                                       picks, rng_test, key_rows))

    word_embeddings = {}
    for i, w in enumerate(planted.nouns):
        word_embeddings[w] = planted.a_txt @ planted.u[i]
    for j, w in enumerate(planted.contexts):
        word_embeddings[w] = planted.a_txt @ planted.v[j]

    key = AnswerKey(
        roi_tuples=key_rows,
        word_embeddings=word_embeddings,
        holdout_tuple_ids=sorted(cell_to_id[p] for p in set(map(tuple, cfg.holdout_pairs))),
        meta={"config": cfg.to_dict(),
              "narration_tokens_per_frame":
                  [2 * cfg.rois_per_frame + cfg.min_fillers,
                   2 * cfg.rois_per_frame + cfg.max_fillers]},
    )
    return train_frames, test_frames, vocab, key


def make_zero_shot_split(vocab: TupleVocab, holdout: list[int]) -> tuple[TupleVocab, TupleVocab]:
    """Split into (train_vocab without holdout tuples, full eval vocab).

    Held-out entries keep their original tuple_ids in the eval vocab, so an
    index built at eval time is strictly larger than the training one.
    """
    ids = set(vocab.ids)
    missing = [h for h in holdout if h not in ids]
    if missing:
        raise ConfigError(f"holdout ids not in vocab: {missing}")
    holdout_set = set(holdout)
    train_vocab = TupleVocab([t for t in vocab.tuples if t.tuple_id not in holdout_set])
    return train_vocab, vocab


def is_compositional_holdout(vocab: TupleVocab, holdout: list[int]) -> bool:
    """True iff every held-out noun and context also appears in a training pair."""
    holdout_set = set(holdout)
    train = [t for t in vocab.tuples if t.tuple_id not in holdout_set]
    held = [t for t in vocab.tuples if t.tuple_id in holdout_set]
    train_nouns = {t.noun for t in train}
    train_contexts = {t.context for t in train}
    return all(t.noun in train_nouns and t.context in train_contexts for t in held)


def coverage_warnings(vocab: TupleVocab, holdout: list[int]) -> list[str]:
    """Human-readable warnings for nouns/contexts the holdout removes entirely."""
    holdout_set = set(holdout)
    train = [t for t in vocab.tuples if t.tuple_id not in holdout_set]
    held = [t for t in vocab.tuples if t.tuple_id in holdout_set]
    train_nouns = {t.noun for t in train}
    train_contexts = {t.context for t in train}
    warnings = []
    for t in held:
        if t.noun not in train_nouns:
            warnings.append(f"holdout removes noun {t.noun!r} from training entirely")
        if t.context not in train_contexts:
            warnings.append(f"holdout removes context {t.context!r} from training entirely")
    return sorted(set(warnings))
