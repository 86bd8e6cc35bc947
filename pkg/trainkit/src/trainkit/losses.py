"""Classification losses: cross-entropy on softmax outputs and focal loss
for class imbalance.
"""
from __future__ import annotations

import torch
import torch.nn.functional as F


def cross_entropy(logits: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
    return F.cross_entropy(logits, targets)


def focal_loss(
    logits: torch.Tensor,
    targets: torch.Tensor,
    gamma: float = 2.0,
    alpha: float | None = 0.25,
) -> torch.Tensor:
    """Focal loss: alpha_t * (1 - p_t)^gamma * (-log p_t).

    With gamma=0 and alpha=None this reduces exactly to cross-entropy.
    ``alpha`` weighs the positive class; the negative class gets 1-alpha.
    """
    log_probs = F.log_softmax(logits, dim=1)
    log_pt = log_probs.gather(1, targets.unsqueeze(1)).squeeze(1)
    pt = log_pt.exp()
    loss = -((1.0 - pt) ** gamma) * log_pt
    if alpha is not None:
        alpha_t = torch.where(
            targets == 1,
            torch.as_tensor(alpha, dtype=loss.dtype),
            torch.as_tensor(1.0 - alpha, dtype=loss.dtype),
        )
        loss = alpha_t * loss
    return loss.mean()


def make_loss(name: str):
    if name == "cross_entropy":
        return cross_entropy
    if name == "focal":
        return lambda logits, targets: focal_loss(logits, targets, gamma=2.0, alpha=0.25)
    raise ValueError(f"unknown loss {name!r}")
