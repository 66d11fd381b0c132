"""Multi-scale gridded features from an image.

A small trainable encoder stands in for a pretrained backbone: four strided
conv/GN/ReLU stages whose outputs are resampled onto the configured square
grids. A fixed 2D sinusoid plus a learned per-scale bias provides the
positional signal consumed by the transformer stack.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import tensor as T
from .config import ModelConfig
from .errors import ConfigurationError
from .tensor import Parameter, Tensor

STAGE_STRIDES = (2, 4, 8, 16)


@dataclass
class FeatureGrid:
    scale_index: int
    data: Tensor  # (channels, side, side)

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def side(self) -> int:
        return self.data.shape[1]


@dataclass
class PyramidFeatures:
    grids: list[FeatureGrid]

    def validate(self) -> "PyramidFeatures":
        idxs = [g.scale_index for g in self.grids]
        sides = [g.side for g in self.grids]
        if sorted(idxs) != idxs or len(set(idxs)) != len(idxs):
            raise ConfigurationError(f"scale indices must strictly increase, got {idxs}")
        if any(a <= b for a, b in zip(sides, sides[1:])):
            raise ConfigurationError(f"grid sides must strictly decrease, got {sides}")
        return self

    def shapes(self) -> list[tuple]:
        return [g.data.shape for g in self.grids]


def _stage_channels(cfg: ModelConfig) -> list[tuple[int, int]]:
    e = cfg.channels
    return [(3, 16), (16, e), (e, e), (e, e)]


def init_encoder_params(cfg: ModelConfig, rng: np.random.Generator) -> dict[str, Parameter]:
    params: dict[str, Parameter] = {}
    for i, (cin, cout) in enumerate(_stage_channels(cfg)):
        std = np.sqrt(2.0 / (cin * 9))
        params[f"encoder.stage{i}.w"] = Parameter(rng.normal(0.0, std, size=(cout, cin, 3, 3)))
        params[f"encoder.stage{i}.b"] = Parameter(np.zeros(cout))
        params[f"encoder.stage{i}.gn_gamma"] = Parameter(np.ones(cout))
        params[f"encoder.stage{i}.gn_beta"] = Parameter(np.zeros(cout))
    return params


def _stage_for_scale(scale_index: int) -> int:
    # stage 0 has 16 channels regardless of E; taps start at stage 1
    return min(1 + scale_index, 3)


def encoder_stages(image: Tensor, params, cfg: ModelConfig) -> list[Tensor]:
    """Run the four strided stages, returning every intermediate map."""
    h, w = image.shape[1], image.shape[2]
    coarsest = STAGE_STRIDES[-1]
    if h % coarsest or w % coarsest:
        raise ConfigurationError(f"image size {h}x{w} not divisible by coarsest stride {coarsest}")
    x = image
    outs = []
    for i in range(4):
        x = T.conv2d(x, params[f"encoder.stage{i}.w"], bias=params[f"encoder.stage{i}.b"], stride=2)
        groups = min(cfg.gn_groups, x.shape[0])
        x = T.group_norm(x, groups, params[f"encoder.stage{i}.gn_gamma"], params[f"encoder.stage{i}.gn_beta"])
        x = T.relu(x)
        outs.append(x)
    return outs


def pyramid_from_stages(stages, cfg: ModelConfig) -> PyramidFeatures:
    grids = []
    for i, side in enumerate(cfg.grid_sides):
        tap = stages[_stage_for_scale(i)]
        grids.append(FeatureGrid(scale_index=i, data=T.interpolate(tap, (side, side))))
    return PyramidFeatures(grids).validate()


def encode(image: Tensor, params, cfg: ModelConfig) -> PyramidFeatures:
    """Image [3,H,W] -> one grid of shape [E, s_i, s_i] per configured scale."""
    return pyramid_from_stages(encoder_stages(image, params, cfg), cfg)


@lru_cache(maxsize=None)
def sinusoid_encoding(channels: int, height: int, width: int) -> np.ndarray:
    """Fixed 2D positional code: first E/2 channels encode x, the rest y,
    with sin/cos pairs whose divisors grow geometrically from 1 to 1e4.
    """
    if channels % 2:
        raise ConfigurationError(f"positional encoding requires even channels, got {channels}")
    half = channels // 2
    enc = np.zeros((channels, height, width))
    xs = np.arange(width, dtype=np.float64)
    ys = np.arange(height, dtype=np.float64)
    for m in range(half):
        div = 10000.0 ** (2 * (m // 2) / half)
        fx = xs / div
        fy = ys / div
        if m % 2 == 0:
            enc[m] = np.broadcast_to(np.sin(fx)[None, :], (height, width))
            enc[half + m] = np.broadcast_to(np.sin(fy)[:, None], (height, width))
        else:
            enc[m] = np.broadcast_to(np.cos(fx)[None, :], (height, width))
            enc[half + m] = np.broadcast_to(np.cos(fy)[:, None], (height, width))
    enc.setflags(write=False)
    return enc


def init_posenc_params(cfg: ModelConfig) -> dict[str, Parameter]:
    return {f"posenc.scale{i}.bias": Parameter(np.zeros(cfg.channels))
            for i in range(len(cfg.grid_sides))}


def add_positional_encoding(pyr: PyramidFeatures, params) -> PyramidFeatures:
    grids = []
    for g in pyr.grids:
        code = sinusoid_encoding(g.channels, g.data.shape[1], g.data.shape[2])
        bias = params[f"posenc.scale{g.scale_index}.bias"]
        data = g.data + Tensor(code) + T.reshape(bias, (g.channels, 1, 1))
        grids.append(FeatureGrid(scale_index=g.scale_index, data=data))
    return PyramidFeatures(grids)
