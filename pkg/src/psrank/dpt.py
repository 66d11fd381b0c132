"""Feature interaction over the grid pyramid.

Each layer runs three attention routes — within-row, within-column, and
across scales at aligned locations — instead of one joint attention over
every cell of every scale. Score-pair counts for both designs are available
analytically and from an instrumented forward pass, since the whole point of
the decomposition is the reduction from (S*H*W)^2 pairs per layer to
S*H*W^2 + S*H^2*W + S^2*H*W.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .config import ModelConfig
from .pyramid import FeatureGrid, PyramidFeatures
from .tensor import Parameter, Tensor


@dataclass(frozen=True)
class PairCountReport:
    scales: int
    height: int
    width: int
    dpt_pairs: int
    all_scale_pairs: int

    @property
    def ratio(self) -> float:
        return self.dpt_pairs / self.all_scale_pairs


def count_attention_pairs(scales: int, height: int, width: int) -> PairCountReport:
    """Exact query-key pair counts per layer for both attention designs."""
    s, h, w = int(scales), int(height), int(width)
    dpt = s * h * w * w + s * h * h * w + s * s * h * w
    full = (s * h * w) ** 2
    return PairCountReport(s, h, w, dpt_pairs=dpt, all_scale_pairs=full)


# parameters -----------------------------------------------------------------


def _attn_params(params, prefix, e, rng):
    std = 1.0 / np.sqrt(e)
    for name in ("wq", "wk", "wv", "wo"):
        params[f"{prefix}.{name}"] = Parameter(rng.normal(0.0, std, size=(e, e)))


def _gn_params(params, prefix, e):
    params[f"{prefix}.gamma"] = Parameter(np.ones(e))
    params[f"{prefix}.beta"] = Parameter(np.zeros(e))


def _conv_params(params, prefix, cin, cout, rng, k=3):
    std = np.sqrt(2.0 / (cin * k * k))
    params[f"{prefix}.w"] = Parameter(rng.normal(0.0, std, size=(cout, cin, k, k)))
    params[f"{prefix}.b"] = Parameter(np.zeros(cout))


def init_dpt_params(cfg: ModelConfig, rng: np.random.Generator) -> dict[str, Parameter]:
    e = cfg.channels
    params: dict[str, Parameter] = {}
    for j in range(cfg.conv_layers):
        _conv_params(params, f"cgr.conv{j}", e, e, rng)
        _gn_params(params, f"cgr.gn{j}", e)
    for layer in range(cfg.dpt_layers):
        base = f"dpt.layer{layer}"
        _attn_params(params, f"{base}.row", e, rng)
        _attn_params(params, f"{base}.col", e, rng)
        _attn_params(params, f"{base}.cross", e, rng)
        _gn_params(params, f"{base}.gn_rc", e)
        _gn_params(params, f"{base}.gn_cs", e)
        _conv_params(params, f"{base}.clcg.conv1", e, e, rng)
        _conv_params(params, f"{base}.clcg.conv2", e, e, rng)
        _gn_params(params, f"{base}.clcg.gn", e)
    return params


def init_all_scale_params(cfg: ModelConfig, rng: np.random.Generator) -> dict[str, Parameter]:
    params: dict[str, Parameter] = {}
    _attn_params(params, "allscale", cfg.channels, rng)
    return params


# blocks -----------------------------------------------------------------------


def cgr(pyr: PyramidFeatures, params, cfg: ModelConfig) -> PyramidFeatures:
    """conv -> group norm -> ReLU harmonization, repeated conv_layers times.

    Conv weights are shared across scales, as in a pyramid head.
    """
    grids = pyr.grids
    for j in range(cfg.conv_layers):
        w, b = params[f"cgr.conv{j}.w"], params[f"cgr.conv{j}.b"]
        gamma, beta = params[f"cgr.gn{j}.gamma"], params[f"cgr.gn{j}.beta"]
        grids = [
            FeatureGrid(g.scale_index, T.relu(T.group_norm(T.conv2d(g.data, w, bias=b), cfg.gn_groups, gamma, beta)))
            for g in grids
        ]
    return PyramidFeatures(grids)


def _attn(x: Tensor, heads: int, params, prefix: str) -> Tensor:
    return T.multi_head_attention(x, heads, params[f"{prefix}.wq"], params[f"{prefix}.wk"],
                                  params[f"{prefix}.wv"], params[f"{prefix}.wo"])


def row_column_attention(grid: FeatureGrid, params, cfg: ModelConfig, layer: int = 0) -> FeatureGrid:
    """Attention along each row, then each column, each with a residual;
    group-normalized at the end.
    """
    base = f"dpt.layer{layer}"
    x = grid.data  # (E, H, W)
    rows = T.transpose(x, (1, 2, 0))  # (H, W, E): rows as batch, width as sequence
    x = x + T.transpose(_attn(rows, cfg.attn_heads, params, f"{base}.row"), (2, 0, 1))
    cols = T.transpose(x, (2, 1, 0))  # (W, H, E): columns as batch, height as sequence
    x = x + T.transpose(_attn(cols, cfg.attn_heads, params, f"{base}.col"), (2, 1, 0))
    x = T.group_norm(x, cfg.gn_groups, params[f"{base}.gn_rc.gamma"], params[f"{base}.gn_rc.beta"])
    return FeatureGrid(grid.scale_index, x)


def cross_scale_attention(pyr: PyramidFeatures, params, cfg: ModelConfig, layer: int = 0) -> PyramidFeatures:
    """Resample every grid to the largest one, attend across the S per-scale
    vectors at each location, resample back, add residually, group-normalize.
    """
    base = f"dpt.layer{layer}"
    grids = pyr.grids
    hmax = max(g.data.shape[1] for g in grids)
    wmax = max(g.data.shape[2] for g in grids)
    n_scales = len(grids)
    e = grids[0].channels
    up = [T.interpolate(g.data, (hmax, wmax)) for g in grids]
    piled = T.stack(up, axis=0)  # (S, E, Hm, Wm)
    tokens = T.reshape(T.transpose(piled, (2, 3, 0, 1)), (hmax * wmax, n_scales, e))
    mixed = _attn(tokens, cfg.attn_heads, params, f"{base}.cross")
    mixed = T.transpose(T.reshape(mixed, (hmax, wmax, n_scales, e)), (2, 3, 0, 1))
    out = []
    gamma, beta = params[f"{base}.gn_cs.gamma"], params[f"{base}.gn_cs.beta"]
    for i, g in enumerate(grids):
        h, w = g.data.shape[1], g.data.shape[2]
        delta = T.interpolate(mixed[i], (h, w))
        out.append(FeatureGrid(g.scale_index, T.group_norm(g.data + delta, cfg.gn_groups, gamma, beta)))
    return PyramidFeatures(out)


def clcg(pyr: PyramidFeatures, params, cfg: ModelConfig, layer: int = 0) -> PyramidFeatures:
    """conv -> LeakyReLU -> conv with a residual joined before group norm."""
    base = f"dpt.layer{layer}.clcg"
    w1, b1 = params[f"{base}.conv1.w"], params[f"{base}.conv1.b"]
    w2, b2 = params[f"{base}.conv2.w"], params[f"{base}.conv2.b"]
    gamma, beta = params[f"{base}.gn.gamma"], params[f"{base}.gn.beta"]
    grids = []
    for g in pyr.grids:
        inner = T.conv2d(T.leaky_relu(T.conv2d(g.data, w1, bias=b1)), w2, bias=b2)
        grids.append(FeatureGrid(g.scale_index, T.group_norm(inner + g.data, cfg.gn_groups, gamma, beta)))
    return PyramidFeatures(grids)


def dpt_layer(pyr: PyramidFeatures, params, cfg: ModelConfig, layer: int) -> PyramidFeatures:
    rc = PyramidFeatures([row_column_attention(g, params, cfg, layer) for g in pyr.grids])
    cs = cross_scale_attention(rc, params, cfg, layer)
    return clcg(cs, params, cfg, layer)


def dpt_forward(pyr: PyramidFeatures, params, cfg: ModelConfig) -> PyramidFeatures:
    """Stack of dpt_layers full layers; positional encoding must already be
    applied. Zero layers is the identity.
    """
    for layer in range(cfg.dpt_layers):
        pyr = dpt_layer(pyr, params, cfg, layer)
    return pyr


def all_scale_attention(pyr: PyramidFeatures, params, cfg: ModelConfig) -> PyramidFeatures:
    """Reference baseline: one attention over the concatenation of every cell
    of every scale. Only used for the pair-count benchmark and ablations.
    """
    flat = []
    shapes = []
    for g in pyr.grids:
        e, h, w = g.data.shape
        shapes.append((h, w))
        flat.append(T.reshape(T.transpose(g.data, (1, 2, 0)), (h * w, e)))
    tokens = T.concat(flat, axis=0)
    mixed = _attn(tokens, cfg.attn_heads, params, "allscale")
    grids = []
    offset = 0
    for g, (h, w) in zip(pyr.grids, shapes):
        e = g.channels
        block = mixed[offset : offset + h * w]
        offset += h * w
        grids.append(FeatureGrid(g.scale_index, T.transpose(T.reshape(block, (h, w, e)), (2, 0, 1))))
    return PyramidFeatures(grids)


# instrumentation ---------------------------------------------------------------


def _equal_grid_pyramid(scales: int, height: int, width: int, e: int, rng) -> PyramidFeatures:
    return PyramidFeatures([
        FeatureGrid(i, Tensor(rng.normal(size=(e, height, width)))) for i in range(scales)
    ])


def measure_dpt_pairs(scales: int, height: int, width: int, channels: int = 8,
                      heads: int = 2, seed: int = 0) -> int:
    """Query-key pairs actually formed by one decomposed layer on ``scales``
    equal grids of ``height x width``; counted inside the attention op.
    """
    cfg = ModelConfig(max_rank=1, channels=channels, grid_sides=(4, 2), attn_heads=heads,
                      gn_groups=1, dpt_layers=1, conv_layers=0)
    rng = np.random.default_rng(seed)
    params = init_dpt_params(cfg, rng)
    pyr = _equal_grid_pyramid(scales, height, width, channels, rng)
    with T.no_grad():
        T.reset_attention_pairs()
        rc = PyramidFeatures([row_column_attention(g, params, cfg, 0) for g in pyr.grids])
        cross_scale_attention(rc, params, cfg, 0)
        return T.attention_pairs()


def measure_all_scale_pairs(scales: int, height: int, width: int, channels: int = 8,
                            heads: int = 2, seed: int = 0) -> int:
    cfg = ModelConfig(max_rank=1, channels=channels, grid_sides=(4, 2), attn_heads=heads,
                      gn_groups=1, dpt_layers=1, conv_layers=0)
    rng = np.random.default_rng(seed)
    params = init_all_scale_params(cfg, rng)
    pyr = _equal_grid_pyramid(scales, height, width, channels, rng)
    with T.no_grad():
        T.reset_attention_pairs()
        all_scale_attention(pyr, params, cfg)
        return T.attention_pairs()
