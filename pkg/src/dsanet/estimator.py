"""scikit-learn style wrapper: one sample is a whole video (an L x d_f matrix)."""
from __future__ import annotations

from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .data import VideoSample
from .losses import LossConfig
from .metrics import evaluate, mean_report
from .model import DSANet, ModelConfig, forward, init_model
from .training import train


def check_sequences(X, y=None, n_features: int | None = None):
    """Validate a list of per-video feature matrices and optional label vectors.

    Returns float64 matrices and int64 label arrays; raises ValueError on
    ragged widths, empty videos, non-finite values or length mismatches.
    """
    if isinstance(X, np.ndarray) and X.ndim == 2:
        X = [X]
    X = [np.asarray(x, dtype=np.float64) for x in X]
    if not X:
        raise ValueError("need at least one video")
    for i, x in enumerate(X):
        if x.ndim != 2 or x.shape[0] < 1:
            raise ValueError(f"video {i}: expected a non-empty (L, d_f) matrix, got shape {x.shape}")
        if not np.all(np.isfinite(x)):
            raise ValueError(f"video {i}: features contain NaN or inf")
    widths = {x.shape[1] for x in X}
    if len(widths) != 1:
        raise ValueError(f"videos disagree on feature width: {sorted(widths)}")
    if n_features is not None and widths != {n_features}:
        raise ValueError(f"expected {n_features} features per frame, got {widths.pop()}")
    if y is None:
        return X
    if isinstance(y, np.ndarray) and y.ndim == 1 and len(X) == 1:
        y = [y]
    y = [np.asarray(v) for v in y]
    if len(y) != len(X):
        raise ValueError(f"{len(X)} videos but {len(y)} label sequences")
    for i, (x, v) in enumerate(zip(X, y)):
        if v.shape != (x.shape[0],):
            raise ValueError(f"video {i}: {x.shape[0]} frames but labels of shape {v.shape}")
    return X, y


class DSANetSegmenter(BaseEstimator):
    """Frame-wise action segmenter trained with the dual-stream objective.

    ``fit`` takes a list of feature matrices and a list of label sequences
    (any hashable labels); ``predict`` returns one label array per video.
    """

    def __init__(
        self,
        variant: str = "quantum",
        num_tokens: int = 24,
        num_blocks: int = 3,
        hidden_dim: int = 64,
        n_qubits: int = 4,
        n_quantum_layers: int = 3,
        ge_layers: int = 10,
        epochs: int = 200,
        lr: float = 1e-4,
        losses: str = "ABCDE",
        tau: float = 0.1,
        clip_norm: float | None = None,
        seed: int = 0,
    ):
        self.variant = variant
        self.num_tokens = num_tokens
        self.num_blocks = num_blocks
        self.hidden_dim = hidden_dim
        self.n_qubits = n_qubits
        self.n_quantum_layers = n_quantum_layers
        self.ge_layers = ge_layers
        self.epochs = epochs
        self.lr = lr
        self.losses = losses
        self.tau = tau
        self.clip_norm = clip_norm
        self.seed = seed

    def _model_config(self, n_features: int, n_classes: int) -> ModelConfig:
        d = self.hidden_dim
        return ModelConfig(
            num_classes=n_classes,
            d_f=n_features,
            d_h=d,
            d_a=d,
            d_at=d,
            M=self.num_tokens,
            N=self.num_blocks,
            n_q=self.n_qubits,
            n_ql=self.n_quantum_layers,
            variant=self.variant,
            seed=self.seed,
            ge_layers=self.ge_layers,
        )

    def fit(self, X, y):
        X, y = check_sequences(X, y)
        self.classes_ = np.unique(np.concatenate(y))
        if len(self.classes_) < 2:
            raise ValueError("need at least two distinct labels")
        shortest = min(x.shape[0] for x in X)
        if self.num_tokens > shortest:
            raise ValueError(f"num_tokens={self.num_tokens} exceeds the shortest video ({shortest} frames)")
        self.n_features_in_ = X[0].shape[1]
        self.model_: DSANet = init_model(self._model_config(self.n_features_in_, len(self.classes_)))
        videos = [
            VideoSample(f"video_{i}", x, np.searchsorted(self.classes_, v)) for i, (x, v) in enumerate(zip(X, y))
        ]
        self.history_ = train(
            self.model_,
            videos,
            epochs=self.epochs,
            lr=self.lr,
            loss_cfg=LossConfig.ablation(self.losses, tau=self.tau),
            seed=self.seed,
            clip_norm=self.clip_norm,
        )
        return self

    def predict(self, X) -> list[np.ndarray]:
        check_is_fitted(self, "model_")
        X = check_sequences(X, n_features=self.n_features_in_)
        return [self.classes_[forward(self.model_, x).labels] for x in X]

    def predict_proba(self, X) -> list[np.ndarray]:
        check_is_fitted(self, "model_")
        X = check_sequences(X, n_features=self.n_features_in_)
        out = []
        for x in X:
            logits = forward(self.model_, x).frame_logits.data
            e = np.exp(logits - logits.max(axis=1, keepdims=True))
            out.append(e / e.sum(axis=1, keepdims=True))
        return out

    def evaluate(self, X, y) -> dict[str, float]:
        """Mean segmentation metrics (acc, edit, F1@k, avg) over the videos."""
        X, y = check_sequences(X, y)
        pred = self.predict(X)
        # metrics work on ids; map both sides through one shared encoding
        labels = np.unique(np.concatenate([*pred, *y]))
        return mean_report([evaluate(np.searchsorted(labels, p), np.searchsorted(labels, g)) for p, g in zip(pred, y)])

    def score(self, X, y) -> float:
        """Mean frame accuracy as a fraction in [0, 1]."""
        return self.evaluate(X, y)["acc"] / 100.0
