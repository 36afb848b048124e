"""Symmetric supervised contrastive objective between video and class embeddings."""

from __future__ import annotations

import torch

from .models import Batch
from .numerics import NumericalError, ensure_finite, log_softmax


def _cosine_matrix(anchors: torch.Tensor, others: torch.Tensor) -> torch.Tensor:
    anchor_norms = anchors.norm(dim=1, keepdim=True)
    other_norms = others.norm(dim=1, keepdim=True)
    if bool((anchor_norms == 0).any()) or bool((other_norms == 0).any()):
        raise NumericalError("Contrastive loss received a zero-norm embedding row")
    return (anchors / anchor_norms) @ (others / other_norms).transpose(0, 1)


def _directional_loss(anchors: torch.Tensor, others: torch.Tensor, positives: torch.Tensor, tau: float) -> torch.Tensor:
    """-(1/B) sum_i mean_{m in M(i)} log softmax_j(CS(anchor_i, other_j) / tau)[m]."""

    if tau <= 0:
        raise NumericalError("Loss temperature must be positive")
    log_prob = log_softmax(_cosine_matrix(anchors, others) / tau, axis=1)
    per_anchor = (positives * log_prob).sum(dim=1) / positives.sum(dim=1)
    return ensure_finite(-per_anchor.mean(), "contrastive loss")


def loss_v2c(batch: Batch, tau: float) -> torch.Tensor:
    """Class embedding anchors; the softmax runs over the batch's video embeddings."""

    return _directional_loss(batch.class_embs, batch.video_embs, batch.positive_mask(), tau)


def loss_c2v(batch: Batch, tau: float) -> torch.Tensor:
    """Video embedding anchors; the softmax runs over the batch's class embeddings."""

    return _directional_loss(batch.video_embs, batch.class_embs, batch.positive_mask(), tau)


def loss_total(batch: Batch, tau: float) -> torch.Tensor:
    return (loss_v2c(batch, tau) + loss_c2v(batch, tau)) / 2
