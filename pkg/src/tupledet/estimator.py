"""Scikit-learn style estimator wrapping the full train/predict pipeline.

TupleDetector exposes the usual fit/transform/predict/score surface (and
inherits get_params/set_params from BaseEstimator), so it composes with
sklearn tooling such as clone() and parameter search. Hyperparameters are
stored verbatim in __init__; everything learned lands in trailing-
underscore attributes during fit.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .errors import ConfigError
from .evaluation import mean_ap
from .model import ModelConfig, TupleVocab, build_tuple_index, embed_rois
from .protocols import predict_frames
from .trainer import TrainConfig, train
from .validation import as_matrix


class TupleDetector(BaseEstimator):
    """Joint visual/text embedding model with discrete tuple prediction.

    fit() trains both heads on frame records; predict() emits scored
    (tuple, box) detections; transform() maps raw region features to the
    shared embedding space; score() computes mAP@0.5 against ground truth.
    """

    def __init__(self, d=16, base_lr=0.001, warmup_steps=500, momentum=0.9,
                 epochs=10, m_negatives=64, batch_frames=8, bg_per_fg=1.0,
                 max_steps=None, score_floor=0.001, top_k_per_roi=5,
                 nms_iou=0.5, seed=0):
        self.d = d
        self.base_lr = base_lr
        self.warmup_steps = warmup_steps
        self.momentum = momentum
        self.epochs = epochs
        self.m_negatives = m_negatives
        self.batch_frames = batch_frames
        self.bg_per_fg = bg_per_fg
        self.max_steps = max_steps
        self.score_floor = score_floor
        self.top_k_per_roi = top_k_per_roi
        self.nms_iou = nms_iou
        self.seed = seed

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise NotFittedError("this TupleDetector is not fitted; call fit first")

    def fit(self, frames, vocab: TupleVocab):
        """Train on frame records against a tuple vocabulary. Returns self."""
        if not frames:
            raise ConfigError("fit needs at least one frame")
        if len(vocab) == 0:
            raise ConfigError("fit needs a nonempty vocab")
        try:
            visual_in = next(r.feature.shape[0] for f in frames for r in f.rois
                             if r.feature is not None)
        except StopIteration:
            raise ConfigError("no roi in the training frames carries a feature")
        text_in = vocab.tuples[0].base_embedding.shape[0]
        model_cfg = ModelConfig(d=self.d, visual_in_dim=visual_in,
                                text_in_dim=text_in)
        train_cfg = TrainConfig(
            base_lr=self.base_lr, warmup_steps=self.warmup_steps,
            momentum=self.momentum, epochs=self.epochs,
            m_negatives=self.m_negatives, batch_frames=self.batch_frames,
            bg_per_fg=self.bg_per_fg, seed=self.seed, max_steps=self.max_steps)
        self.model_, self.history_, self.checkpoint_ = train(
            list(frames), vocab, model_cfg, train_cfg)
        self.vocab_ = vocab
        self.index_ = build_tuple_index(self.model_, vocab)
        return self

    def transform(self, roi_features):
        """Map (N, visual_in_dim) raw region features to (N, d) embeddings."""
        self._check_fitted()
        x = as_matrix(roi_features, cols=self.model_.config.visual_in_dim,
                      name="roi features")
        return embed_rois(self.model_, x)

    def predict_proba(self, roi_features):
        """Per-row tuple distributions, shape (N, T)."""
        self._check_fitted()
        emb = self.transform(roi_features)
        logits = emb @ self.index_.z.T
        shifted = logits - logits.max(axis=1, keepdims=True)
        exps = np.exp(shifted)
        return exps / exps.sum(axis=1, keepdims=True)

    def predict(self, frames):
        """Scored tuple detections (PredBox list) for a list of frames."""
        self._check_fitted()
        return predict_frames(self.model_, self.vocab_, list(frames),
                              score_floor=self.score_floor,
                              top_k_per_roi=self.top_k_per_roi,
                              nms_iou_threshold=self.nms_iou)

    def score(self, frames, gt_boxes):
        """mAP at IoU 0.5 of predict(frames) against ground-truth boxes."""
        self._check_fitted()
        preds = self.predict(frames)
        value, _ = mean_ap(preds, gt_boxes, self.vocab_)
        return value
