"""Dual-stream temporal action segmentation with a quantum-modulated fusion head."""
from __future__ import annotations

from .data import SyntheticSpec, VideoSample, generate_synthetic, load_dataset
from .estimator import DSANetSegmenter, check_sequences
from .losses import LossConfig, total_loss
from .metrics import evaluate
from .model import DSANet, ModelConfig, forward, init_model, load_checkpoint, save_checkpoint
from .training import train

__version__ = "0.1.0"

__all__ = [
    "DSANet",
    "DSANetSegmenter",
    "LossConfig",
    "ModelConfig",
    "SyntheticSpec",
    "VideoSample",
    "check_sequences",
    "evaluate",
    "forward",
    "generate_synthetic",
    "init_model",
    "load_checkpoint",
    "load_dataset",
    "save_checkpoint",
    "total_loss",
    "train",
]
