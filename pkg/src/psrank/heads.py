"""Prediction heads over the transformer output.

Cells are enumerated scale-major then row-major ((scale, y, x) with x
fastest); the partition matrix rows and the mask list share this order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .config import ModelConfig
from .errors import DataError
from .pyramid import PyramidFeatures, _stage_channels
from .tensor import Parameter, Tensor


def cell_origins(grid_sides) -> list[tuple[int, int, int]]:
    """(scale, x, y) for every cell in row order of the partition matrix."""
    origins = []
    for scale, side in enumerate(grid_sides):
        for y in range(side):
            for x in range(side):
                origins.append((scale, x, y))
    return origins


def total_cells(grid_sides) -> int:
    return sum(s * s for s in grid_sides)


@dataclass
class PartitionMatrix:
    probabilities: Tensor  # (K, N), sigmoid outputs
    origins: list[tuple[int, int, int]]

    @property
    def values(self) -> np.ndarray:
        return self.probabilities.data


def init_partition_head_params(cfg: ModelConfig, rng: np.random.Generator) -> dict[str, Parameter]:
    e, n = cfg.channels, cfg.max_rank
    std = np.sqrt(2.0 / (e * 9))
    return {
        # one output channel per head; channels share no weights
        "partition.w": Parameter(rng.normal(0.0, std, size=(n, e, 3, 3))),
        # negative bias so untrained heads predict sparse positives
        "partition.b": Parameter(np.full(n, -2.0)),
    }


def partition_forward(f_hat: PyramidFeatures, params, n_partitions: int) -> PartitionMatrix:
    """N binary heads (a 3x3 conv from E channels to one logit each) applied
    to every scale, sigmoid-activated, gathered cell-major into (K, N).
    """
    w, b = params["partition.w"], params["partition.b"]
    per_scale = []
    for g in f_hat.grids:
        logits = T.conv2d(g.data, w, bias=b)  # (N, s, s)
        side = g.side
        per_scale.append(T.reshape(T.transpose(logits, (1, 2, 0)), (side * side, n_partitions)))
    probs = T.sigmoid(T.concat(per_scale, axis=0))
    return PartitionMatrix(probs, cell_origins([g.side for g in f_hat.grids]))


@dataclass
class MaskBranch:
    kernels: Tensor  # (K, D) dynamic 1x1 conv weights, one row per cell
    features: Tensor  # (D, Hm, Wm) shared map the kernels convolve

    def soft_masks(self, rows=None) -> Tensor:
        """Sigmoid masks for the selected rows (default: every cell)."""
        d, hm, wm = self.features.shape
        kernels = self.kernels if rows is None else self.kernels[np.asarray(rows)]
        flat = T.matmul(kernels, T.reshape(self.features, (d, hm * wm)))
        return T.sigmoid(T.reshape(flat, (kernels.shape[0], hm, wm)))


def init_mask_head_params(cfg: ModelConfig, rng: np.random.Generator) -> dict[str, Parameter]:
    e, d = cfg.channels, cfg.mask_channels
    fused = sum(c for _, c in _stage_channels(cfg))
    params = {}
    std = np.sqrt(2.0 / (e * 9))
    params["mask.kernel.w"] = Parameter(rng.normal(0.0, std, size=(d, e, 3, 3)))
    params["mask.kernel.b"] = Parameter(np.zeros(d))
    std = np.sqrt(2.0 / fused)
    params["mask.fuse.w"] = Parameter(rng.normal(0.0, std, size=(d, fused, 1, 1)))
    params["mask.fuse.b"] = Parameter(np.zeros(d))
    return params


def global_mask_features(stage_maps, params, cfg: ModelConfig, canvas: int) -> Tensor:
    """1x1-conv fusion of the encoder stages, upsampled to 1/mask_stride."""
    size = canvas // cfg.mask_stride
    up = [T.interpolate(m, (size, size)) for m in stage_maps]
    fused = T.conv2d(T.concat(up, axis=0), params["mask.fuse.w"], bias=params["mask.fuse.b"])
    return T.relu(fused)


def mask_branch(f_hat: PyramidFeatures, stage_maps, params, cfg: ModelConfig, canvas: int) -> MaskBranch:
    features = global_mask_features(stage_maps, params, cfg, canvas)
    per_scale = []
    d = cfg.mask_channels
    for g in f_hat.grids:
        k = T.conv2d(g.data, params["mask.kernel.w"], bias=params["mask.kernel.b"])  # (D, s, s)
        per_scale.append(T.reshape(T.transpose(k, (1, 2, 0)), (g.side * g.side, d)))
    return MaskBranch(kernels=T.concat(per_scale, axis=0), features=features)


def mask_forward(f_hat: PyramidFeatures, stage_maps, params, cfg: ModelConfig, canvas: int) -> Tensor:
    """Soft masks for every grid cell, row-aligned with partition_forward."""
    return mask_branch(f_hat, stage_maps, params, cfg, canvas).soft_masks()


# target assignment --------------------------------------------------------------


def scale_size_edges(cfg: ModelConfig, canvas: int) -> np.ndarray:
    """Sqrt-area bin edges, geometric over [assign_min_size, canvas]."""
    n = len(cfg.grid_sides)
    return cfg.assign_min_size * (canvas / cfg.assign_min_size) ** (np.arange(n + 1) / n)


def _center_cell(com: float, cell_width: float, side: int) -> int:
    idx = int(np.floor(com / cell_width))
    # a center exactly on a boundary belongs to the lower-index cell
    if idx > 0 and com == idx * cell_width:
        idx -= 1
    return min(max(idx, 0), side - 1)


def assign_targets(instance_masks, cfg: ModelConfig, canvas: int) -> np.ndarray:
    """Map instances to grid cells: each instance goes to the scale whose
    size range contains sqrt(area) (clamped at the ends) and, within it, to
    the cell containing its center of mass. Returns a (K,) array holding the
    instance index per cell, -1 for background. When two instances collide on
    one cell the earlier (more salient) instance keeps it.
    """
    sides = cfg.grid_sides
    edges = scale_size_edges(cfg, canvas)
    offsets = np.cumsum([0] + [s * s for s in sides])
    cell_instance = np.full(total_cells(sides), -1, dtype=np.int64)
    for idx, mask in enumerate(instance_masks):
        area = float(mask.sum())
        if area == 0:
            raise DataError(f"instance {idx} has an empty mask")
        sqrt_area = np.sqrt(area)
        scale = int(np.searchsorted(edges[1:-1], sqrt_area, side="right"))
        ys, xs = np.nonzero(mask)
        com_y = ys.mean() + 0.5
        com_x = xs.mean() + 0.5
        side = sides[scale]
        cell_w = canvas / side
        cx = _center_cell(com_x, cell_w, side)
        cy = _center_cell(com_y, cell_w, side)
        row = offsets[scale] + cy * side + cx
        if cell_instance[row] == -1:
            cell_instance[row] = idx
    return cell_instance
