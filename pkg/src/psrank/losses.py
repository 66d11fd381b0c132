"""Partition ground-truth encoding and the training losses.

A rank label becomes a monotone boolean vector: entry n is on iff the
instance belongs to partition n (rank <= n). The partition branch trains
with focal loss over every cell and head; masks train with dice loss over
positive cells only.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import DataError, DimensionError
from .tensor import Tensor

PROB_EPS = 1e-7
DICE_SMOOTH = 1.0


@dataclass(frozen=True)
class LossWeights:
    partition: float = 1.0
    mask: float = 3.0


@dataclass
class LossBreakdown:
    total: Tensor
    partition: Tensor
    mask: Tensor | None


def encode_partition_gt(rank: int, n_partitions: int) -> np.ndarray:
    """Boolean vector of length N with entry n set iff rank <= n."""
    if not 1 <= rank <= n_partitions:
        raise DataError(f"rank {rank} outside [1, {n_partitions}]")
    return np.arange(1, n_partitions + 1) >= rank


def _focal_elements(pred: Tensor, target: np.ndarray, alpha, gamma: float) -> Tensor:
    t = np.asarray(target, dtype=np.float64)
    if t.shape != pred.shape:
        raise DimensionError(f"focal target shape {t.shape} vs prediction {pred.shape}")
    p = T.clip(pred, PROB_EPS, 1.0 - PROB_EPS)
    pt = p * t + (1.0 - p) * (1.0 - t)
    weight = 1.0 if alpha is None else alpha * t + (1.0 - alpha) * (1.0 - t)
    return T.mul(weight, T.power(1.0 - pt, gamma) * -T.log(pt))


def focal_loss(pred: Tensor, target, alpha: float | None = 0.25, gamma: float = 2.0) -> Tensor:
    """Mean focal term over every element of ``pred``; ``alpha=None`` drops
    the class weighting entirely (gamma=0 then reduces it to plain BCE).
    """
    return T.tmean(_focal_elements(pred, target, alpha, gamma))


def dice_loss(pred: Tensor, target) -> Tensor:
    """1 - (2*sum(p*t)+eps) / (sum(p^2)+sum(t^2)+eps) with eps = 1, averaged
    over the leading axis when given a stack of masks.
    """
    t = np.asarray(target, dtype=np.float64)
    if t.shape != pred.shape:
        raise DimensionError(f"dice target shape {t.shape} vs prediction {pred.shape}")
    axes = tuple(range(pred.ndim - 2, pred.ndim)) if pred.ndim >= 2 else (0,)
    inter = T.tsum(pred * t, axis=axes)
    denom = T.tsum(pred * pred, axis=axes) + (t * t).sum(axis=axes)
    coeff = (2.0 * inter + DICE_SMOOTH) / (denom + DICE_SMOOTH)
    return T.tmean(1.0 - coeff)


def total_loss(partition_probs: Tensor, partition_targets, mask_preds: Tensor | None,
               mask_targets, weights: LossWeights = LossWeights()) -> LossBreakdown:
    """Weighted sum of the per-head focal losses and the positive-cell dice
    loss. With no positive cells the mask term contributes exactly zero.
    """
    elements = _focal_elements(partition_probs, partition_targets, alpha=0.25, gamma=2.0)
    partition_term = T.tsum(T.tmean(elements, axis=0))
    if mask_preds is not None and mask_preds.shape[0] > 0:
        mask_term = dice_loss(mask_preds, mask_targets)
        total = weights.partition * partition_term + weights.mask * mask_term
    else:
        mask_term = None
        total = weights.partition * partition_term
    return LossBreakdown(total=total, partition=partition_term, mask=mask_term)
