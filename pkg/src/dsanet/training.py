from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .data import VideoSample
from .losses import LossConfig, total_loss
from .metrics import evaluate, mean_report
from .model import DSANet, forward
from .tensor import NumericalError, Tensor, backward

log = logging.getLogger(__name__)


class Adam:
    def __init__(self, params: Sequence[Tensor], lr: float = 1e-4, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self, clip_norm: float | None = None) -> None:
        grads = [np.zeros_like(p.data) if p.grad is None else p.grad for p in self.params]
        if clip_norm is not None:
            total = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads)))
            if total > clip_norm:
                grads = [g * (clip_norm / total) for g in grads]
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p.data = p.data - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


@dataclass
class EpochLog:
    epoch: int
    losses: dict[str, float]
    metrics: dict[str, float] = field(default_factory=dict)

    def row(self) -> dict[str, float]:
        return {"epoch": self.epoch, **self.losses, **self.metrics}


def predict_labels(model: DSANet, features) -> np.ndarray:
    return forward(model, features).labels


def evaluate_videos(model: DSANet, videos: Sequence[VideoSample], background: int | None = None) -> dict[str, float]:
    return mean_report([evaluate(predict_labels(model, v.features), v.labels, background) for v in videos])


def train(
    model: DSANet,
    videos: Sequence[VideoSample],
    epochs: int = 200,
    lr: float = 1e-4,
    loss_cfg: LossConfig | None = None,
    seed: int = 0,
    clip_norm: float | None = None,
    eval_every: int = 0,
    on_epoch: Callable[[EpochLog, DSANet], None] | None = None,
) -> list[EpochLog]:
    """Adam, one video per step, seeded shuffle each epoch.

    With ``eval_every > 0`` train-set metrics are attached every that many
    epochs and on the final one.
    """
    loss_cfg = loss_cfg or LossConfig()
    opt = Adam(model.parameters(), lr=lr)
    rng = np.random.default_rng(seed)
    history = []
    for epoch in range(1, epochs + 1):
        totals: dict[str, float] = {}
        for i in rng.permutation(len(videos)):
            v = videos[i]
            parts = total_loss(forward(model, v.features), v.labels, loss_cfg)
            if not np.isfinite(parts.total.item()):
                raise NumericalError(f"non-finite loss at epoch {epoch}, video {v.id}")
            backward(parts.total)
            opt.step(clip_norm)
            for k, val in parts.as_dict().items():
                totals[k] = totals.get(k, 0.0) + val / len(videos)
        entry = EpochLog(epoch, totals)
        if eval_every and (epoch % eval_every == 0 or epoch == epochs):
            entry.metrics = evaluate_videos(model, videos)
        history.append(entry)
        log.info("epoch %d loss %.4f", epoch, totals.get("total", float("nan")))
        if on_epoch is not None:
            on_epoch(entry, model)
    return history
