"""Foreground/background noise-contrastive loss with exact gradients.

Each foreground item scores its embedding f against one positive g+ and m
negatives; each background item is pushed away from its negatives only,
via a constant zero logit standing in for "no match":

    fg item loss:  -log( e^{f.g+} / (e^{f.g+} + sum_k e^{f.h_k}) )
    bg item loss:  -log( 1 / (1 + sum_k e^{f.h_k}) )

The batch loss is (sum of fg losses + sum of bg losses) / B where B is the
total item count. All softmax evaluations subtract the max logit first so
dot products up to ~700 in magnitude stay finite.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NoNegativesError, ShapeError
from .validation import as_matrix, as_vector


@dataclass
class NegativeSet:
    """m negative embeddings packed row-wise, with the ids they came from."""

    embeddings: np.ndarray            # (m, d)
    source_ids: list = field(default_factory=list)

    def __post_init__(self):
        self.embeddings = np.asarray(self.embeddings, dtype=np.float64)
        if self.embeddings.ndim != 2:
            raise ShapeError(f"negative embeddings must be 2-D, got {self.embeddings.shape}")
        if len(self.source_ids) != self.embeddings.shape[0]:
            raise ShapeError("source_ids length must equal the number of rows")
        if self.embeddings.size and not np.all(np.isfinite(self.embeddings)):
            raise ShapeError("negative embeddings contain non-finite entries")

    @property
    def m(self) -> int:
        return self.embeddings.shape[0]


@dataclass
class FgItem:
    f: np.ndarray          # (d,) predicted object embedding
    g_plus: np.ndarray     # (d,) matching projected word embedding
    negatives: NegativeSet


@dataclass
class BgItem:
    f: np.ndarray
    negatives: NegativeSet


@dataclass
class NceBatch:
    fg_items: list[FgItem]
    bg_items: list[BgItem]
    d: int

    def __post_init__(self):
        if not self.fg_items and not self.bg_items:
            raise ConfigError("batch must contain at least one item")
        for it in self.fg_items:
            it.f = as_vector(it.f, dim=self.d, name="fg f")
            it.g_plus = as_vector(it.g_plus, dim=self.d, name="fg g_plus")
            if it.negatives.m and it.negatives.embeddings.shape[1] != self.d:
                raise ShapeError("fg negatives dim mismatch")
        for it in self.bg_items:
            it.f = as_vector(it.f, dim=self.d, name="bg f")
            if it.negatives.m and it.negatives.embeddings.shape[1] != self.d:
                raise ShapeError("bg negatives dim mismatch")

    @property
    def b_count(self) -> int:
        return len(self.fg_items) + len(self.bg_items)


@dataclass
class LossReport:
    l_fg: float
    l_bg: float
    total: float
    b_count: int


@dataclass
class FgGrad:
    d_f: np.ndarray
    d_g_plus: np.ndarray
    d_negatives: np.ndarray  # (m, d)


@dataclass
class BgGrad:
    d_f: np.ndarray
    d_negatives: np.ndarray


@dataclass
class NceGradients:
    """Gradients of LossReport.total, mirroring the batch structure."""

    fg: list[FgGrad]
    bg: list[BgGrad]


def sample_negatives(pool, exclude_noun, m: int, seed: int) -> NegativeSet:
    """Draw m negatives from pool entries whose noun category is not excluded.

    pool: sequence of (token_id, noun_category, embedding). Exclusion drops
    entries whose category equals exclude_noun, or equals any whitespace-
    separated word of a multi-word exclude_noun. Pass exclude_noun=None to
    keep everything (background items). Sampling is uniform without
    replacement when the eligible pool has >= m entries, with replacement
    otherwise; deterministic for a fixed seed.
    """
    if m < 0:
        raise ConfigError(f"m must be >= 0, got {m}")
    if m == 0:
        d = len(pool[0][2]) if pool else 0
        return NegativeSet(np.zeros((0, d)), [])
    excluded: set = set()
    if exclude_noun is not None:
        excluded.add(exclude_noun)
        excluded.update(exclude_noun.split())
    eligible = [(tid, emb) for tid, cat, emb in pool if cat not in excluded]
    if not eligible:
        raise NoNegativesError(
            f"no eligible negatives after excluding {exclude_noun!r}")
    rng = np.random.default_rng(seed)
    idx = rng.choice(len(eligible), size=m, replace=len(eligible) < m,
                     shuffle=False)
    rows = np.stack([as_vector(eligible[i][1], name="pool embedding") for i in idx])
    return NegativeSet(rows, [eligible[i][0] for i in idx])


def _fg_item_loss_probs(item: FgItem) -> tuple[float, np.ndarray]:
    # logits: [f.g+, f.h_1, ..., f.h_m]; loss = logsumexp(logits) - f.g+
    logits = np.concatenate(([item.f @ item.g_plus],
                             item.negatives.embeddings @ item.f))
    m = logits.max()
    exps = np.exp(logits - m)
    total = exps.sum()
    loss = (m + np.log(total)) - logits[0]
    return float(loss), exps / total


def _bg_item_loss_probs(item: BgItem) -> tuple[float, np.ndarray]:
    # logits: [0, f.h_1, ..., f.h_m]; loss = logsumexp(logits)
    logits = np.concatenate(([0.0], item.negatives.embeddings @ item.f))
    m = logits.max()
    exps = np.exp(logits - m)
    total = exps.sum()
    return float(m + np.log(total)), exps / total


def nce_loss(batch: NceBatch) -> LossReport:
    l_fg = sum(_fg_item_loss_probs(it)[0] for it in batch.fg_items)
    l_bg = sum(_bg_item_loss_probs(it)[0] for it in batch.bg_items)
    b = batch.b_count
    return LossReport(l_fg=l_fg, l_bg=l_bg, total=(l_fg + l_bg) / b, b_count=b)


def nce_grad(batch: NceBatch) -> NceGradients:
    """Exact gradients of the mean loss w.r.t. every f, g_plus, and negative row.

    For a fg item with softmax probs p over [positive, negatives]:
        dL/d(f)   = (p0 - 1) g+ + sum_k p_k h_k
        dL/d(g+)  = (p0 - 1) f
        dL/d(h_k) = p_k f
    For a bg item the p0 slot belongs to the constant zero logit, so only
    the negative terms remain. Everything scales by 1/B.
    """
    scale = 1.0 / batch.b_count
    fg_grads = []
    for it in batch.fg_items:
        _, p = _fg_item_loss_probs(it)
        coef = p[0] - 1.0
        d_f = coef * it.g_plus + it.negatives.embeddings.T @ p[1:]
        fg_grads.append(FgGrad(
            d_f=scale * d_f,
            d_g_plus=scale * coef * it.f,
            d_negatives=scale * np.outer(p[1:], it.f),
        ))
    bg_grads = []
    for it in batch.bg_items:
        _, p = _bg_item_loss_probs(it)
        bg_grads.append(BgGrad(
            d_f=scale * (it.negatives.embeddings.T @ p[1:]),
            d_negatives=scale * np.outer(p[1:], it.f),
        ))
    return NceGradients(fg=fg_grads, bg=bg_grads)
