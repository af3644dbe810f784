"""Prediction fusion and the training objective."""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F

from .errors import BadMask, BadShape

DICE_SMOOTHING = 1.0


@dataclass(frozen=True)
class LossWeights:
    """Fusion/objective weights; the defaults realize the 1:9 mixing ratio."""

    alpha: float = 0.9  # coarse-prediction share in the fused output
    beta: float = 0.9  # segmentation-loss share in the objective
    dice_weight: float = 1.0
    ce_weight: float = 1.0

    def __post_init__(self):
        if not (0.0 <= self.alpha <= 1.0 and 0.0 <= self.beta <= 1.0):
            raise ValueError("alpha and beta must lie in [0, 1]")


def fuse_predictions(refined: torch.Tensor, coarse: torch.Tensor, alpha: float) -> torch.Tensor:
    """Convex combination of logits: (1 - alpha) * refined + alpha * coarse."""
    if refined.shape != coarse.shape:
        raise BadShape(f"refined {tuple(refined.shape)} vs coarse {tuple(coarse.shape)}")
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    return (1.0 - alpha) * refined + alpha * coarse


def dice_ce_loss(
    logits: torch.Tensor,
    gt: torch.Tensor,
    dice_weight: float = 1.0,
    ce_weight: float = 1.0,
) -> torch.Tensor:
    """Weighted sum of soft-dice (on probabilities) and BCE (on logits)."""
    if logits.shape != gt.shape:
        raise BadShape(f"logits {tuple(logits.shape)} vs gt {tuple(gt.shape)}")
    uniq = torch.unique(gt)
    if not bool(((uniq == 0) | (uniq == 1)).all()):
        raise BadMask("gt must be binary")
    probs = torch.sigmoid(logits)
    inter = (probs * gt).sum()
    dice = 1.0 - (2.0 * inter + DICE_SMOOTHING) / (probs.sum() + gt.sum() + DICE_SMOOTHING)
    ce = F.binary_cross_entropy_with_logits(logits, gt.to(logits.dtype))
    return dice_weight * dice + ce_weight * ce


def total_loss(loss_seg: torch.Tensor, loss_distill: torch.Tensor, beta: float) -> torch.Tensor:
    """Objective: beta * segmentation loss + (1 - beta) * distillation loss."""
    if not 0.0 <= beta <= 1.0:
        raise ValueError(f"beta must lie in [0, 1], got {beta}")
    return beta * loss_seg + (1.0 - beta) * loss_distill
