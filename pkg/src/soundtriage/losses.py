"""Detection training objectives: plain BCE and two priority-weighted forms.

All three losses sum binary cross-entropy over frames within a clip (no
frame averaging) and over classes:

- ``sed``: every class weighted equally.
- ``set_ai``: class n's whole BCE term (active and inactive frames) scaled
  by ``N * lambda_n`` with ``lambda`` on the simplex, so uniform priorities
  recover ``sed`` exactly.
- ``set_a``: only active-frame terms scaled by ``N * lambda_n``; the
  inactive-frame background stays unweighted, so abundant silence cannot
  drown out a prioritized class.

Everything is computed in the logit-stable form (no explicit sigmoid).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .dataio import EventRoll
from .triage import TriageWeights

LOSS_KINDS = ("sed", "set_ai", "set_a")


@dataclass
class LossValue:
    """Total loss and its per-class decomposition (``total == per_class.sum()``)."""

    total: torch.Tensor
    per_class: torch.Tensor


def _as_target(roll, like: torch.Tensor) -> torch.Tensor:
    if isinstance(roll, EventRoll):
        roll = roll.active
    if isinstance(roll, torch.Tensor):
        target = roll.to(dtype=like.dtype)
    else:
        target = torch.as_tensor(np.asarray(roll), dtype=like.dtype)
    if target.shape != like.shape:
        raise ValueError(
            f"logits shape {tuple(like.shape)} does not match "
            f"targets shape {tuple(target.shape)}"
        )
    return target


def _check_weights(weights: TriageWeights, n_classes: int) -> torch.Tensor:
    if weights.n_classes != n_classes:
        raise ValueError(
            f"triage weights have {weights.n_classes} entries, expected {n_classes}"
        )
    return torch.as_tensor(weights.normalized)


def _elementwise_bce(logits: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    return F.binary_cross_entropy_with_logits(logits, target, reduction="none")


def loss_sed(logits: torch.Tensor, roll) -> LossValue:
    """Unweighted BCE summed over frames, decomposed per class."""
    target = _as_target(roll, logits)
    per_class = _elementwise_bce(logits, target).sum(dim=-1)
    return LossValue(total=per_class.sum(), per_class=per_class)


def loss_set_ai(logits: torch.Tensor, roll, weights: TriageWeights) -> LossValue:
    """Priority-weighted BCE: class n scaled by ``N * lambda_n`` on all frames."""
    target = _as_target(roll, logits)
    lam = _check_weights(weights, logits.shape[0]).to(logits.dtype)
    bce = _elementwise_bce(logits, target).sum(dim=-1)
    per_class = logits.shape[0] * lam * bce
    return LossValue(total=per_class.sum(), per_class=per_class)


def loss_set_a(logits: torch.Tensor, roll, weights: TriageWeights) -> LossValue:
    """Priority-weighted BCE on active frames only; inactive frames unweighted."""
    target = _as_target(roll, logits)
    lam = _check_weights(weights, logits.shape[0]).to(logits.dtype)
    scale = (logits.shape[0] * lam).unsqueeze(-1)
    frame_weight = scale * target + (1.0 - target)
    per_class = (frame_weight * _elementwise_bce(logits, target)).sum(dim=-1)
    return LossValue(total=per_class.sum(), per_class=per_class)


def compute_loss(kind: str, logits: torch.Tensor, roll,
                 weights: TriageWeights | None = None) -> LossValue:
    """Dispatch on the configured loss kind (``sed | set_ai | set_a``)."""
    if kind == "sed":
        return loss_sed(logits, roll)
    if weights is None:
        raise ValueError(f"loss kind {kind!r} requires triage weights")
    if kind == "set_ai":
        return loss_set_ai(logits, roll, weights)
    if kind == "set_a":
        return loss_set_a(logits, roll, weights)
    raise ValueError(f"unknown loss kind {kind!r}; choose from {LOSS_KINDS}")


def batch_loss(kind: str, logits: torch.Tensor, targets: torch.Tensor,
               weights: TriageWeights | None = None) -> torch.Tensor:
    """Mean over a batch of per-clip loss totals.

    ``logits`` and ``targets`` are ``[B, N, T]``; one priority vector applies
    to the whole batch. Batch-mean keeps learning-rate semantics independent
    of the batch size.
    """
    if logits.shape != targets.shape or logits.ndim != 3:
        raise ValueError(
            f"expected matching [B, N, T] tensors, got {tuple(logits.shape)} "
            f"and {tuple(targets.shape)}"
        )
    targets = targets.to(logits.dtype)
    bce = _elementwise_bce(logits, targets)
    n_classes = logits.shape[1]
    if kind == "sed":
        per_clip = bce.sum(dim=(1, 2))
    else:
        if weights is None:
            raise ValueError(f"loss kind {kind!r} requires triage weights")
        lam = _check_weights(weights, n_classes).to(logits.dtype)
        scale = (n_classes * lam).view(1, n_classes, 1)
        if kind == "set_ai":
            per_clip = (scale * bce).sum(dim=(1, 2))
        elif kind == "set_a":
            frame_weight = scale * targets + (1.0 - targets)
            per_clip = (frame_weight * bce).sum(dim=(1, 2))
        else:
            raise ValueError(f"unknown loss kind {kind!r}; choose from {LOSS_KINDS}")
    return per_clip.mean()
