"""Joint training of the visual and text heads under the contrastive loss.

Each step draws a batch of frames, builds one foreground item per labeled
box (pairing the projected region feature with the projected embedding of
the narration token matching its category) plus background items, computes
exact gradients, and applies SGD with momentum and linear warmup.

Everything random is keyed on (seed, epoch/step, item) via SeedSequence,
never on shared RNG state, so training is bit-reproducible and resuming
from a checkpoint is exactly equivalent to never having stopped.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .data_io import FrameRecord
from .errors import ConfigError, DataError
from .mlp import MlpGrads, mlp_backward_batch, mlp_forward_batch
from .model import EmbeddingModel, ModelConfig, TupleVocab, init_model
from .nce import (BgItem, FgItem, LossReport, NceBatch, NegativeSet, nce_grad,
                  nce_loss, sample_negatives)
from .optim import LrSchedule, OptimizerState, sgd_momentum_step
from .pseudo_label import match_token_index, token_match


@dataclass
class TrainConfig:
    base_lr: float = 0.001
    warmup_steps: int = 500
    momentum: float = 0.9
    epochs: int = 10
    m_negatives: int = 2048
    batch_frames: int = 2
    bg_per_fg: float = 1.0
    seed: int = 0
    max_steps: int | None = None        # overrides epochs when set
    share_negatives: bool = False       # one draw per step instead of per roi
    finetune_steps: int = 200
    finetune_lr_scale: float = 0.1
    threads: int = 1

    def __post_init__(self):
        if self.base_lr < 0:
            raise ConfigError("base_lr must be >= 0")
        if self.epochs < 1 or self.m_negatives < 1 or self.batch_frames < 1:
            raise ConfigError("epochs, m_negatives and batch_frames must be >= 1")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError("momentum must lie in [0, 1)")
        if self.bg_per_fg < 0 or self.warmup_steps < 0:
            raise ConfigError("bg_per_fg and warmup_steps must be >= 0")
        if self.max_steps is not None and self.max_steps < 0:
            raise ConfigError("max_steps must be >= 0")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")

    def to_dict(self) -> dict:
        return {
            "base_lr": self.base_lr, "warmup_steps": self.warmup_steps,
            "momentum": self.momentum, "epochs": self.epochs,
            "m_negatives": self.m_negatives, "batch_frames": self.batch_frames,
            "bg_per_fg": self.bg_per_fg, "seed": self.seed,
            "max_steps": self.max_steps, "share_negatives": self.share_negatives,
            "finetune_steps": self.finetune_steps,
            "finetune_lr_scale": self.finetune_lr_scale, "threads": self.threads,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        return cls(**data)


@dataclass
class TrainItem:
    """One training item in raw (unprojected) coordinates."""

    feature: np.ndarray               # (visual_in,)
    positive: np.ndarray | None       # (text_in,) token embedding; None for bg
    negatives: np.ndarray             # (m, text_in) raw negative embeddings
    negative_ids: list = field(default_factory=list)


def _derive_seed(*parts: int) -> int:
    return int(np.random.SeedSequence(list(parts)).generate_state(1, np.uint64)[0])


def build_negative_pool(frames: list[FrameRecord]) -> list[tuple[str, str, np.ndarray]]:
    """All narration tokens of a dataset as (token_id, noun_category, embedding).

    A token's noun_category is the single-word dataset category it matches
    under the plural-tolerant token rule (so "tomatoes" is excluded for a
    "tomato" roi), or its own lowercase form when it matches none.
    Sampling for a multi-word category excludes its constituent words via
    sample_negatives' word split.
    """
    categories = sorted({r.category.lower() for f in frames for r in f.rois
                         if not r.is_background and r.category})
    single_word = [c for c in categories if " " not in c]
    token_cat_cache: dict[str, str] = {}

    def category_of(tok: str) -> str:
        low = tok.lower()
        if low not in token_cat_cache:
            token_cat_cache[low] = next(
                (c for c in single_word if token_match(c, [low])), low)
        return token_cat_cache[low]

    pool = []
    for frame in frames:
        for j, tok in enumerate(frame.narration_tokens):
            pool.append((f"{frame.frame_id}:{j}", category_of(tok),
                         frame.token_embeddings[j]))
    return pool


def _exclusion_key(category: str) -> str:
    return category.lower()


def validate_training_frames(frames: list[FrameRecord]) -> None:
    if not frames:
        raise DataError("training dataset is empty")
    for frame in frames:
        ok = any(
            match_token_index(roi.category, frame.narration_tokens) is not None
            for _, roi in frame.foreground_rois())
        if not ok:
            raise DataError(
                f"frame {frame.frame_id!r} has no labeled box whose category "
                "matches its narration")


def assemble_step_items(frames: list[FrameRecord], frame_indices,
                        pool, cfg: TrainConfig, global_step: int) -> list[TrainItem]:
    """Deterministic item assembly for one step, keyed on the global step."""
    items: list[TrainItem] = []
    pending_bg: list[np.ndarray] = []
    shared: NegativeSet | None = None
    if cfg.share_negatives:
        step_cats = {r.category for fi in frame_indices
                     for _, r in frames[fi].foreground_rois() if r.category}
        excl = {k for c in step_cats for k in
                ([_exclusion_key(c)] + _exclusion_key(c).split())}
        eligible = [(tid, cat, emb) for tid, cat, emb in pool if cat not in excl]
        shared = sample_negatives(eligible, None, cfg.m_negatives,
                                  seed=_derive_seed(cfg.seed, 23, global_step))
    item_counter = 0
    for fi in frame_indices:
        frame = frames[fi]
        fg_here = 0
        for _, roi in frame.foreground_rois():
            tok_idx = match_token_index(roi.category, frame.narration_tokens)
            if tok_idx is None:
                continue
            if shared is not None:
                negs, neg_ids = shared.embeddings, shared.source_ids
            else:
                ns = sample_negatives(
                    pool, _exclusion_key(roi.category), cfg.m_negatives,
                    seed=_derive_seed(cfg.seed, 23, global_step, item_counter))
                negs, neg_ids = ns.embeddings, ns.source_ids
            items.append(TrainItem(feature=roi.feature,
                                   positive=frame.token_embeddings[tok_idx],
                                   negatives=negs, negative_ids=list(neg_ids)))
            fg_here += 1
            item_counter += 1
        bg_rois = [roi for _, roi in frame.background_rois()]
        n_bg = min(len(bg_rois), int(round(cfg.bg_per_fg * fg_here)))
        if n_bg > 0:
            rng = np.random.default_rng([cfg.seed, 29, global_step, fi])
            for bi in rng.choice(len(bg_rois), size=n_bg, replace=False):
                pending_bg.append(bg_rois[bi].feature)
    for feature in pending_bg:
        if shared is not None:
            negs, neg_ids = shared.embeddings, shared.source_ids
        else:
            ns = sample_negatives(pool, None, cfg.m_negatives,
                                  seed=_derive_seed(cfg.seed, 23, global_step,
                                                    item_counter))
            negs, neg_ids = ns.embeddings, ns.source_ids
        items.append(TrainItem(feature=feature, positive=None,
                               negatives=negs, negative_ids=list(neg_ids)))
        item_counter += 1
    return items


def _chunk_loss_grads(chunk):
    fg_items, bg_items, d = chunk
    batch = NceBatch(fg_items, bg_items, d)
    return nce_loss(batch), nce_grad(batch), batch.b_count


def step_loss_and_grads(model: EmbeddingModel, items: list[TrainItem],
                        threads: int = 1) -> tuple[LossReport, MlpGrads, MlpGrads]:
    """Loss and exact parameter gradients for one assembled step.

    Projects all item inputs through the heads in two batched passes, runs
    the contrastive loss per item, and backpropagates the scattered output
    gradients. Pure in the model, so it doubles as the end-to-end gradient
    correctness surface.
    """
    if not items:
        raise ConfigError("step has no items")
    d = model.config.d
    feats = np.stack([it.feature for it in items])
    f_out, cache_v = mlp_forward_batch(model.visual_head, feats)

    text_rows: list[np.ndarray] = []
    pos_row: dict[int, int] = {}
    neg_span: dict[int, tuple[int, int]] = {}
    for i, it in enumerate(items):
        if it.positive is not None:
            pos_row[i] = len(text_rows)
            text_rows.append(np.asarray(it.positive, dtype=np.float64))
    for i, it in enumerate(items):
        start = len(text_rows)
        text_rows.extend(np.asarray(it.negatives, dtype=np.float64))
        neg_span[i] = (start, len(text_rows))
    if text_rows:
        x_text = np.stack(text_rows)
    else:
        x_text = np.zeros((0, model.config.text_in_dim))
    g_out, cache_t = mlp_forward_batch(model.text_head, x_text)

    def make_pairs(idx_list):
        fg, bg, fmap, bmap = [], [], [], []
        for i in idx_list:
            it = items[i]
            s, e = neg_span[i]
            negs = NegativeSet(g_out[s:e], it.negative_ids)
            if it.positive is not None:
                fg.append(FgItem(f=f_out[i], g_plus=g_out[pos_row[i]], negatives=negs))
                fmap.append(i)
            else:
                bg.append(BgItem(f=f_out[i], negatives=negs))
                bmap.append(i)
        return fg, bg, fmap, bmap

    b_total = len(items)
    n_chunks = min(threads, b_total)
    bounds = np.linspace(0, b_total, n_chunks + 1, dtype=int)
    chunk_indices = [list(range(bounds[k], bounds[k + 1])) for k in range(n_chunks)]
    chunk_defs = []
    chunk_maps = []
    for idx_list in chunk_indices:
        fg, bg, fmap, bmap = make_pairs(idx_list)
        chunk_defs.append((fg, bg, d))
        chunk_maps.append((fmap, bmap))
    if n_chunks == 1:
        results = [_chunk_loss_grads(chunk_defs[0])]
    else:
        with ThreadPoolExecutor(max_workers=n_chunks) as pool:
            results = list(pool.map(_chunk_loss_grads, chunk_defs))

    l_fg = l_bg = 0.0
    d_f = np.zeros_like(f_out)
    d_g = np.zeros_like(g_out)
    for (report, grads, chunk_b), (fmap, bmap) in zip(results, chunk_maps):
        l_fg += report.l_fg
        l_bg += report.l_bg
        rescale = chunk_b / b_total  # chunk grads are scaled 1/chunk_b
        for g, i in zip(grads.fg, fmap):
            d_f[i] = rescale * g.d_f
            d_g[pos_row[i]] += rescale * g.d_g_plus
            s, e = neg_span[i]
            d_g[s:e] += rescale * g.d_negatives
        for g, i in zip(grads.bg, bmap):
            d_f[i] = rescale * g.d_f
            s, e = neg_span[i]
            d_g[s:e] += rescale * g.d_negatives

    report = LossReport(l_fg=l_fg, l_bg=l_bg, total=(l_fg + l_bg) / b_total,
                        b_count=b_total)
    vis_grads, _ = mlp_backward_batch(model.visual_head, cache_v, d_f)
    txt_grads, _ = mlp_backward_batch(model.text_head, cache_t, d_g)
    return report, vis_grads, txt_grads


@dataclass
class _TrainState:
    model: EmbeddingModel
    vis_opt: OptimizerState
    txt_opt: OptimizerState
    global_step: int


def _run_steps(state: _TrainState, frames, pool, cfg: TrainConfig,
               total_steps: int, steps_per_epoch: int,
               seed_tag: int) -> tuple[_TrainState, list[LossReport]]:
    sched = None if cfg.base_lr == 0 else LrSchedule(cfg.base_lr, cfg.warmup_steps)
    history: list[LossReport] = []
    acc = [0.0, 0.0, 0]  # l_fg, l_bg, b_count over the current epoch
    perm_cache: tuple[int, np.ndarray] | None = None
    while state.global_step < total_steps:
        step = state.global_step
        epoch = step // steps_per_epoch
        pos = step % steps_per_epoch
        if perm_cache is None or perm_cache[0] != epoch:
            rng = np.random.default_rng([cfg.seed, seed_tag, epoch])
            perm_cache = (epoch, rng.permutation(len(frames)))
        batch_idx = perm_cache[1][pos * cfg.batch_frames:(pos + 1) * cfg.batch_frames]
        items = assemble_step_items(frames, batch_idx, pool, cfg, step)
        report, vis_grads, txt_grads = step_loss_and_grads(
            state.model, items, threads=cfg.threads)
        if sched is not None:
            new_vis, new_vopt = sgd_momentum_step(
                state.model.visual_head, vis_grads, state.vis_opt, sched, cfg.momentum)
            new_txt, new_topt = sgd_momentum_step(
                state.model.text_head, txt_grads, state.txt_opt, sched, cfg.momentum)
            state.model = EmbeddingModel(state.model.config, new_vis, new_txt)
            state.vis_opt, state.txt_opt = new_vopt, new_topt
        else:  # base_lr == 0: a no-op optimizer, parameters stay frozen
            state.vis_opt = OptimizerState(state.vis_opt.velocity_w,
                                           state.vis_opt.velocity_b,
                                           state.vis_opt.step_count + 1)
            state.txt_opt = OptimizerState(state.txt_opt.velocity_w,
                                           state.txt_opt.velocity_b,
                                           state.txt_opt.step_count + 1)
        acc[0] += report.l_fg
        acc[1] += report.l_bg
        acc[2] += report.b_count
        state.global_step += 1
        end_of_epoch = state.global_step % steps_per_epoch == 0
        if (end_of_epoch or state.global_step == total_steps) and acc[2] > 0:
            history.append(LossReport(l_fg=acc[0], l_bg=acc[1],
                                      total=(acc[0] + acc[1]) / acc[2],
                                      b_count=acc[2]))
            acc = [0.0, 0.0, 0]
    return state, history


def train(dataset: list[FrameRecord], vocab: TupleVocab, model_cfg: ModelConfig,
          cfg: TrainConfig, resume: "Checkpoint | None" = None
          ) -> tuple[EmbeddingModel, list[LossReport], "Checkpoint"]:
    """Train both heads; returns (model, per-epoch loss history, checkpoint).

    The vocab rides along for bookkeeping (training supervision comes from
    narration tokens, not the vocabulary). With resume, continues exactly
    where the checkpoint stopped; (dataset, configs, seed) fully determine
    the result either way.
    """
    from .checkpoint import Checkpoint  # local import to avoid a cycle

    validate_training_frames(dataset)
    if vocab is not None and len(vocab) == 0:
        raise ConfigError("vocab must not be empty")
    pool = build_negative_pool(dataset)
    if resume is not None:
        if resume.model_config.to_dict() != model_cfg.to_dict():
            raise ConfigError("resume checkpoint was built for a different model config")
        state = _TrainState(
            model=EmbeddingModel(model_cfg, resume.visual_head.copy(),
                                 resume.text_head.copy()),
            vis_opt=resume.visual_opt, txt_opt=resume.text_opt,
            global_step=resume.global_step)
    else:
        model = init_model(model_cfg, cfg.seed)
        state = _TrainState(model=model,
                            vis_opt=OptimizerState.zeros_like(model.visual_head),
                            txt_opt=OptimizerState.zeros_like(model.text_head),
                            global_step=0)
    steps_per_epoch = math.ceil(len(dataset) / cfg.batch_frames)
    total = cfg.max_steps if cfg.max_steps is not None else cfg.epochs * steps_per_epoch
    state, history = _run_steps(state, dataset, pool, cfg, total,
                                steps_per_epoch, seed_tag=11)
    ckpt = Checkpoint(model_config=model_cfg, train_config=cfg,
                      visual_head=state.model.visual_head,
                      text_head=state.model.text_head,
                      visual_opt=state.vis_opt, text_opt=state.txt_opt,
                      global_step=state.global_step)
    return state.model, history, ckpt


def finetune_few_shot(model: EmbeddingModel, shots: list[FrameRecord],
                      vocab_extended: TupleVocab, cfg: TrainConfig,
                      steps: int | None = None) -> EmbeddingModel:
    """Continue training both heads on the shot frames only.

    Runs at base_lr * finetune_lr_scale with no warmup and a fresh
    optimizer state; zero steps (or zero lr) returns the model unchanged.
    """
    if not shots:
        raise ConfigError("few-shot finetuning needs at least one shot frame")
    steps = cfg.finetune_steps if steps is None else steps
    if steps < 0:
        raise ConfigError("finetune steps must be >= 0")
    if steps == 0:
        return model.copy()
    validate_training_frames(shots)
    ft_cfg = TrainConfig(
        base_lr=cfg.base_lr * cfg.finetune_lr_scale, warmup_steps=0,
        momentum=cfg.momentum, epochs=1, m_negatives=cfg.m_negatives,
        batch_frames=cfg.batch_frames, bg_per_fg=cfg.bg_per_fg,
        seed=_derive_seed(cfg.seed, 41), share_negatives=cfg.share_negatives,
        threads=cfg.threads)
    pool = build_negative_pool(shots)
    state = _TrainState(model=model.copy(),
                        vis_opt=OptimizerState.zeros_like(model.visual_head),
                        txt_opt=OptimizerState.zeros_like(model.text_head),
                        global_step=0)
    steps_per_epoch = math.ceil(len(shots) / ft_cfg.batch_frames)
    state, _ = _run_steps(state, shots, pool, ft_cfg, steps, steps_per_epoch,
                          seed_tag=47)
    return state.model
