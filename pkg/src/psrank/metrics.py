"""Instance matching and ranking metrics.

Predictions and ground truth are matched greedily by mask IoU; the three
dataset metrics are Spearman correlation over matched ranks (sor), Pearson
correlation over all ground-truth instances with misses scored 0 (sa_sor),
and the mean absolute difference between rank-rendered saliency maps (mae).
Production correlations come from scipy.stats; ``spearman_oracle`` and
``pearson_oracle`` are definition-based re-implementations kept for tests.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

from .p2r import mask_iou


@dataclass
class MatchResult:
    pairs: list[tuple[int, int, float]]  # (gt index, pred index, iou)
    unmatched_gt: list[int]
    unmatched_pred: list[int]
    gt_ranks: np.ndarray
    pred_ranks: np.ndarray


def match_instances(preds, gts, iou_threshold: float = 0.5) -> MatchResult:
    """One-to-one greedy matching in descending-IoU order among pairs at or
    above the threshold; ties break on (gt index, pred index).
    """
    gt_masks = [np.asarray(m, dtype=bool) for m, _ in gts]
    pred_masks = [np.asarray(p.mask, dtype=bool) for p in preds]
    scored = []
    for gi, gm in enumerate(gt_masks):
        for pi, pm in enumerate(pred_masks):
            iou = mask_iou(gm, pm)
            if iou >= iou_threshold:
                scored.append((-iou, gi, pi))
    scored.sort()
    used_gt: set[int] = set()
    used_pred: set[int] = set()
    pairs = []
    for neg_iou, gi, pi in scored:
        if gi in used_gt or pi in used_pred:
            continue
        used_gt.add(gi)
        used_pred.add(pi)
        pairs.append((gi, pi, -neg_iou))
    return MatchResult(
        pairs=pairs,
        unmatched_gt=[i for i in range(len(gts)) if i not in used_gt],
        unmatched_pred=[i for i in range(len(preds)) if i not in used_pred],
        gt_ranks=np.array([r for _, r in gts], dtype=np.int64),
        pred_ranks=np.array([p.rank for p in preds], dtype=np.int64),
    )


def _constant(v: np.ndarray) -> bool:
    return v.size == 0 or np.all(v == v[0])


def sor(match: MatchResult) -> float | None:
    """Spearman correlation of (gt rank, predicted rank) over matched pairs.
    Undefined (None) with fewer than two pairs or a constant side.
    """
    if len(match.pairs) < 2:
        return None
    x = np.array([match.gt_ranks[gi] for gi, _, _ in match.pairs], dtype=float)
    y = np.array([match.pred_ranks[pi] for _, pi, _ in match.pairs], dtype=float)
    if _constant(x) or _constant(y):
        return None
    return float(stats.spearmanr(x, y).statistic)


def sa_sor(match: MatchResult, n_gt: int) -> float | None:
    """Pearson correlation over every ground-truth instance, pairing each GT
    rank with the matched prediction's rank or with 0 when missed.
    """
    if n_gt < 2:
        return None
    x = match.gt_ranks.astype(float)
    y = np.zeros(n_gt)
    for gi, pi, _ in match.pairs:
        y[gi] = match.pred_ranks[pi]
    if _constant(x) or _constant(y):
        return None
    return float(stats.pearsonr(x, y).statistic)


def render_rank_map(instances, n_ranks: int, canvas: int) -> np.ndarray:
    """Saliency map with rank r drawn at (N-r+1)/N, background 0; overlaps
    keep the higher (more salient) value.
    """
    out = np.zeros((canvas, canvas))
    for mask, rank in instances:
        value = (n_ranks - rank + 1) / n_ranks
        out = np.maximum(out, np.asarray(mask, dtype=float) * value)
    return out


def mae(pred_instances, gt_instances, n_ranks: int, canvas: int) -> float:
    """Mean absolute per-pixel difference of the two rank renderings."""
    pred_map = render_rank_map(pred_instances, n_ranks, canvas)
    gt_map = render_rank_map(gt_instances, n_ranks, canvas)
    return float(np.abs(pred_map - gt_map).mean())


def confusion(matches, n_ranks: int) -> np.ndarray:
    """Dataset-wide (gt rank, predicted rank) counts over matched pairs."""
    grid = np.zeros((n_ranks, n_ranks), dtype=np.int64)
    for match in matches:
        for gi, pi, _ in match.pairs:
            grid[match.gt_ranks[gi] - 1, match.pred_ranks[pi] - 1] += 1
    return grid


# definition-based oracles (test route) ----------------------------------------


def _average_ranks(values) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values))
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and values[order[j + 1]] == values[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def pearson_oracle(xs, ys) -> float | None:
    xs, ys = np.asarray(xs, dtype=float), np.asarray(ys, dtype=float)
    if len(xs) != len(ys) or len(xs) < 2:
        return None
    dx = xs - xs.mean()
    dy = ys - ys.mean()
    denom = np.sqrt((dx * dx).sum() * (dy * dy).sum())
    if denom == 0.0:
        return None
    return float((dx * dy).sum() / denom)


def spearman_oracle(xs, ys) -> float | None:
    xs, ys = np.asarray(xs, dtype=float), np.asarray(ys, dtype=float)
    if len(xs) != len(ys) or len(xs) < 2:
        return None
    return pearson_oracle(_average_ranks(xs), _average_ranks(ys))


# dataset aggregation ------------------------------------------------------------


@dataclass
class MetricReport:
    mae: float
    sa_sor: float | None
    sor: float | None
    sor_normalized: float | None
    images_evaluated: int
    images_excluded_sor: int
    images_excluded_sasor: int
    confusion: np.ndarray

    def to_json_dict(self) -> dict:
        return {
            "mae": self.mae,
            "sa_sor": self.sa_sor,
            "sor": self.sor,
            "sor_normalized": self.sor_normalized,
            "images_evaluated": self.images_evaluated,
            "images_excluded_sor": self.images_excluded_sor,
            "images_excluded_sasor": self.images_excluded_sasor,
            "confusion": self.confusion.tolist(),
        }


def evaluate_images(per_image, n_ranks: int, canvas: int, iou_threshold: float = 0.5) -> MetricReport:
    """Aggregate metrics over (preds, gts) pairs, one per image. ``preds``
    are RankedInstance lists; ``gts`` are (mask, rank) lists. Images where a
    correlation is undefined are excluded from that correlation's mean and
    counted.
    """
    maes = []
    sors = []
    sasors = []
    matches = []
    for preds, gts in per_image:
        match = match_instances(preds, gts, iou_threshold)
        matches.append(match)
        maes.append(mae([(p.mask, p.rank) for p in preds], gts, n_ranks, canvas))
        s = sor(match)
        if s is not None:
            sors.append(s)
        p = sa_sor(match, len(gts))
        if p is not None:
            sasors.append(p)
    mean_sor = float(np.mean(sors)) if sors else None
    return MetricReport(
        mae=float(np.mean(maes)) if maes else 0.0,
        sa_sor=float(np.mean(sasors)) if sasors else None,
        sor=mean_sor,
        sor_normalized=None if mean_sor is None else (mean_sor + 1.0) / 2.0,
        images_evaluated=len(per_image),
        images_excluded_sor=len(per_image) - len(sors),
        images_excluded_sasor=len(per_image) - len(sasors),
        confusion=confusion(matches, n_ranks),
    )
