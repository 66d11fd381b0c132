"""Full network assembly, inference, and checkpointing."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import dpt, heads, pyramid, sorting_head, tensor as T
from .config import ModelConfig, TrainConfig, config_from_dict, config_hash, config_to_dict
from .errors import ConfigurationError, DataError
from .heads import MaskBranch, PartitionMatrix
from .p2r import RankedInstance, partition_to_rank
from .tensor import Parameter, Tensor


@dataclass
class ModelOutputs:
    partition: PartitionMatrix | None
    sorting_scores: Tensor | None
    mask: MaskBranch
    origins: list[tuple[int, int, int]]


def init_model_params(cfg: ModelConfig, seed: int) -> dict[str, Parameter]:
    rng = np.random.default_rng(seed)
    params: dict[str, Parameter] = {}
    params.update(pyramid.init_encoder_params(cfg, rng))
    params.update(pyramid.init_posenc_params(cfg))
    params.update(dpt.init_dpt_params(cfg, rng))
    params.update(heads.init_mask_head_params(cfg, rng))
    if cfg.head_type == "partition":
        params.update(heads.init_partition_head_params(cfg, rng))
    else:
        params.update(sorting_head.init_sorting_head_params(cfg, rng))
    return params


def forward(image: Tensor, params, cfg: ModelConfig) -> ModelOutputs:
    canvas = image.shape[1]
    stages = pyramid.encoder_stages(image, params, cfg)
    grids = pyramid.pyramid_from_stages(stages, cfg)
    harmonized = dpt.cgr(grids, params, cfg)
    positioned = pyramid.add_positional_encoding(harmonized, params)
    f_hat = dpt.dpt_forward(positioned, params, cfg)
    mask = heads.mask_branch(f_hat, stages, params, cfg, canvas)
    if cfg.head_type == "partition":
        partition = heads.partition_forward(f_hat, params, cfg.max_rank)
        return ModelOutputs(partition=partition, sorting_scores=None, mask=mask,
                            origins=partition.origins)
    scores, origins = sorting_head.sorting_head_forward(f_hat, params, cfg.max_rank)
    return ModelOutputs(partition=None, sorting_scores=scores, mask=mask, origins=origins)


def predict(image: np.ndarray, params, cfg: ModelConfig) -> list[RankedInstance]:
    """Inference for one image: forward pass, masks upsampled to the canvas,
    then rank decoding with the configured head's procedure.
    """
    canvas = image.shape[1]
    with T.no_grad():
        outputs = forward(Tensor(image), params, cfg)
        soft = outputs.mask.soft_masks()  # (K, Hm, Wm)
        full = T.interpolate(soft, (canvas, canvas)).data
        if cfg.head_type == "partition":
            return partition_to_rank(
                full, outputs.partition, cfg.max_rank,
                threshold=cfg.partition_threshold, nms_iou=cfg.nms_iou,
                objectness_floor=cfg.objectness_floor,
                binarize_threshold=cfg.binarize_threshold,
            )
        return sorting_head.sort_to_ranks(
            outputs.sorting_scores.data, full, cfg.max_rank,
            nms_iou=cfg.nms_iou, binarize_threshold=cfg.binarize_threshold,
        )


# checkpointing ----------------------------------------------------------------


def save_checkpoint(path, params, model_cfg: ModelConfig, train_cfg: TrainConfig, seed: int) -> None:
    meta = {
        "format": 1,
        "config": config_to_dict(model_cfg, train_cfg),
        "config_hash": config_hash(model_cfg, train_cfg),
        "seed": seed,
        "param_names": sorted(params),
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays = {f"param/{k}": p.data for k, p in params.items()}
    np.savez(path, __meta__=np.array(json.dumps(meta, sort_keys=True)), **arrays)


def load_checkpoint(path):
    path = Path(path)
    if not path.exists():
        raise DataError(f"no checkpoint at {path}")
    with np.load(path) as blob:
        meta = json.loads(str(blob["__meta__"]))
        if meta.get("format") != 1:
            raise DataError(f"unsupported checkpoint format {meta.get('format')}")
        params = {}
        for name in meta["param_names"]:
            key = f"param/{name}"
            if key not in blob:
                raise DataError(f"checkpoint missing parameter {name}")
            params[name] = Parameter(blob[key])
    model_cfg, train_cfg = config_from_dict(meta["config"])
    if meta["config_hash"] != config_hash(model_cfg, train_cfg):
        raise ConfigurationError("checkpoint config hash does not match its stored config")
    return params, model_cfg, train_cfg, meta
