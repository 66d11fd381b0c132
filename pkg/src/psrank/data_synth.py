"""Synthetic ranked scenes and dataset persistence.

Each scene places K disjoint flat-colored shapes on a textured background.
Ground-truth saliency is a fixed closed form computed from the finished
image, so it can be re-derived from a stored sample alone:

    score = contrast * area_fraction * center_proximity

    contrast         mean over RGB of |instance color - mean background color|
    area_fraction    mask pixels / canvas pixels
    center_proximity 1 - d / (diag/2), d = distance from the mask's center of
                     mass to the canvas center

Ranks are descending score order (ties broken by instance index); generation
rejects scenes whose consecutive scores are closer than a fixed ratio so the
ordering is unambiguous and learnable. The rule does not claim to model human
attention; it exists so ranks are verifiable.

On disk a dataset is ``manifest.json`` plus ``samples/<id>.json``. Images are
stored as base64 float32 RGB triplets in row-major (H, W, 3) order, or as
nested arrays when flagged. Masks use run-length counts over row-major
pixels, alternating runs starting with a zero-run.
"""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError, GenerationError

FORMAT_VERSION = 1
PLACEMENT_BUDGET = 100


@dataclass(frozen=True)
class GenConfig:
    canvas: int = 64
    max_rank: int = 3
    k_min: int = 1
    k_max: int = 3
    min_sqrt_area: float = 10.0
    max_sqrt_area: float = 26.0
    score_ratio: float = 1.25
    contrast_floor: float = 0.2
    noise_amplitude: float = 0.03
    gradient_amplitude: float = 0.04

    def __post_init__(self):
        if self.k_max > self.max_rank:
            raise DataError(f"k_max {self.k_max} exceeds max_rank {self.max_rank}")
        if self.canvas < 32:
            raise DataError(f"canvas {self.canvas} below minimum 32")


@dataclass
class SceneSample:
    image: np.ndarray  # (3, H, W) in [0,1], float32-representable
    instances: list[tuple[np.ndarray, int]]  # (bool mask, rank), rank == index+1
    seed: int


def instance_scores(image: np.ndarray, masks) -> np.ndarray:
    """The documented saliency score for each mask, from the image alone."""
    _, h, w = image.shape
    union = np.zeros((h, w), dtype=bool)
    for m in masks:
        union |= m
    bg_color = image[:, ~union].mean(axis=1)
    center = np.array([h / 2.0, w / 2.0])
    half_diag = np.sqrt(h * h + w * w) / 2.0
    scores = np.zeros(len(masks))
    for i, m in enumerate(masks):
        color = image[:, m].mean(axis=1)
        contrast = np.abs(color - bg_color).mean()
        area_fraction = m.sum() / (h * w)
        ys, xs = np.nonzero(m)
        com = np.array([ys.mean() + 0.5, xs.mean() + 0.5])
        proximity = 1.0 - np.linalg.norm(com - center) / half_diag
        scores[i] = contrast * area_fraction * proximity
    return scores


def _textured_background(cfg: GenConfig, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    h = w = cfg.canvas
    base = rng.uniform(0.3, 0.7, size=3)
    yy, xx = np.meshgrid(np.linspace(-1, 1, h), np.linspace(-1, 1, w), indexing="ij")
    image = np.empty((3, h, w))
    for c in range(3):
        direction = rng.uniform(-1, 1, size=2)
        ramp = (direction[0] * yy + direction[1] * xx) * cfg.gradient_amplitude
        noise = rng.uniform(-cfg.noise_amplitude, cfg.noise_amplitude, size=(h, w))
        image[c] = base[c] + ramp + noise
    return image, base


def _shape_mask(cfg: GenConfig, rng: np.random.Generator) -> np.ndarray | None:
    canvas = cfg.canvas
    sqrt_area = rng.uniform(cfg.min_sqrt_area, cfg.max_sqrt_area)
    aspect = rng.uniform(0.6, 1.6)
    h = sqrt_area * np.sqrt(aspect)
    w = sqrt_area / np.sqrt(aspect)
    if h >= canvas - 4 or w >= canvas - 4:
        return None
    cy = rng.uniform(h / 2 + 2, canvas - h / 2 - 2)
    cx = rng.uniform(w / 2 + 2, canvas - w / 2 - 2)
    mask = np.zeros((canvas, canvas), dtype=bool)
    if rng.random() < 0.5:
        r0, r1 = int(round(cy - h / 2)), int(round(cy + h / 2))
        c0, c1 = int(round(cx - w / 2)), int(round(cx + w / 2))
        mask[r0:r1, c0:c1] = True
    else:
        yy, xx = np.mgrid[0:canvas, 0:canvas]
        mask = ((yy + 0.5 - cy) / (h / 2)) ** 2 + ((xx + 0.5 - cx) / (w / 2)) ** 2 <= 1.0
    return mask if mask.any() else None


def _disjoint_with_gap(mask: np.ndarray, others, gap: int = 2) -> bool:
    if not others:
        return True
    grown = mask.copy()
    for _ in range(gap):
        g = grown.copy()
        g[1:] |= grown[:-1]
        g[:-1] |= grown[1:]
        g[:, 1:] |= grown[:, :-1]
        g[:, :-1] |= grown[:, 1:]
        grown = g
    return not any((grown & other).any() for other in others)


def _pick_color(bg_base: np.ndarray, taken, cfg: GenConfig, rng: np.random.Generator) -> np.ndarray | None:
    color = rng.uniform(0.0, 1.0, size=3)
    if np.abs(color - bg_base).mean() < cfg.contrast_floor:
        return None
    if any(np.abs(color - t).max() < 0.15 for t in taken):
        return None
    return color


def generate_scene(cfg: GenConfig, seed: int) -> SceneSample:
    """Deterministic scene for ``seed``; raises GenerationError when the
    placement/separation constraints cannot be met within the retry budget.
    """
    rng = np.random.default_rng(seed)
    k = int(rng.integers(cfg.k_min, cfg.k_max + 1))
    for _ in range(PLACEMENT_BUDGET):
        image, bg_base = _textured_background(cfg, rng)
        masks: list[np.ndarray] = []
        colors: list[np.ndarray] = []
        tries = 0
        while len(masks) < k and tries < PLACEMENT_BUDGET:
            tries += 1
            mask = _shape_mask(cfg, rng)
            if mask is None or not _disjoint_with_gap(mask, masks):
                continue
            color = _pick_color(bg_base, colors, cfg, rng)
            if color is None:
                continue
            masks.append(mask)
            colors.append(color)
        if len(masks) < k:
            continue
        for mask, color in zip(masks, colors):
            image[:, mask] = color[:, None]
        scores = instance_scores(image, masks)
        order = np.argsort(-scores, kind="stable")
        ordered_scores = scores[order]
        if np.any(ordered_scores[1:] * cfg.score_ratio > ordered_scores[:-1]):
            continue
        image = image.astype(np.float32).astype(np.float64)
        instances = [(masks[idx], rank + 1) for rank, idx in enumerate(order)]
        return SceneSample(image=image, instances=instances, seed=seed)
    raise GenerationError(f"could not build a valid scene for seed {seed}")


def generate_dataset(cfg: GenConfig, count: int, base_seed: int) -> list[SceneSample]:
    samples = []
    seed = base_seed
    while len(samples) < count:
        try:
            samples.append(generate_scene(cfg, seed))
        except GenerationError:
            pass  # skip pathological seeds; determinism is per-seed
        seed += 1
    return samples


# persistence ----------------------------------------------------------------


def mask_to_rle(mask: np.ndarray) -> list[int]:
    flat = np.asarray(mask, dtype=bool).reshape(-1).astype(np.int8)
    changes = np.nonzero(np.diff(flat))[0] + 1
    bounds = np.concatenate([[0], changes, [flat.size]])
    runs = np.diff(bounds).tolist()
    if flat[0]:
        runs = [0] + runs
    return [int(r) for r in runs]


def rle_to_mask(runs, shape) -> np.ndarray:
    total = int(np.prod(shape))
    if sum(runs) != total or any(r < 0 for r in runs):
        raise DataError(f"run-length data does not cover {total} pixels")
    flat = np.zeros(total, dtype=bool)
    pos = 0
    value = False
    for run in runs:
        if value:
            flat[pos : pos + run] = True
        pos += run
        value = not value
    return flat.reshape(shape)


def _encode_image(image: np.ndarray, image_format: str):
    hw3 = np.ascontiguousarray(image.transpose(1, 2, 0).astype(np.float32))
    if image_format == "base64":
        return base64.b64encode(hw3.tobytes()).decode("ascii")
    if image_format == "array":
        return hw3.astype(np.float64).tolist()
    raise DataError(f"unknown image format {image_format!r}")


def _decode_image(payload, image_format: str, canvas: int) -> np.ndarray:
    if image_format == "base64":
        flat = np.frombuffer(base64.b64decode(payload), dtype="<f4")
        hw3 = flat.reshape(canvas, canvas, 3)
    elif image_format == "array":
        hw3 = np.asarray(payload, dtype=np.float32)
    else:
        raise DataError(f"unknown image format {image_format!r}")
    return hw3.astype(np.float64).transpose(2, 0, 1)


def _json_bytes(obj) -> bytes:
    return (json.dumps(obj, sort_keys=True, separators=(",", ":")) + "\n").encode()


def save_dataset(splits: dict[str, list[SceneSample]], out_dir, max_rank: int,
                 image_format: str = "base64") -> None:
    out = Path(out_dir)
    (out / "samples").mkdir(parents=True, exist_ok=True)
    entries = []
    canvas = None
    for split in sorted(splits):
        for i, sample in enumerate(splits[split]):
            canvas = sample.image.shape[1]
            sample_id = f"{split}_{i:04d}"
            rel = f"samples/{sample_id}.json"
            payload = {
                "seed": sample.seed,
                "image_format": image_format,
                "image": _encode_image(sample.image, image_format),
                "instances": [
                    {"rle": mask_to_rle(mask), "rank": int(rank)}
                    for mask, rank in sample.instances
                ],
            }
            (out / rel).write_bytes(_json_bytes(payload))
            entries.append({"id": sample_id, "file": rel, "split": split})
    manifest = {
        "version": FORMAT_VERSION,
        "max_rank": int(max_rank),
        "canvas": int(canvas),
        "count": len(entries),
        "samples": entries,
    }
    (out / "manifest.json").write_bytes(_json_bytes(manifest))


def load_manifest(data_dir) -> dict:
    path = Path(data_dir) / "manifest.json"
    if not path.exists():
        raise DataError(f"no manifest at {path}")
    manifest = json.loads(path.read_text())
    if manifest.get("version") != FORMAT_VERSION:
        raise DataError(f"unsupported dataset version {manifest.get('version')}")
    listed = manifest["samples"]
    if manifest["count"] != len(listed):
        raise DataError(f"manifest count {manifest['count']} != {len(listed)} listed samples")
    return manifest


def load_dataset(data_dir) -> dict[str, list[SceneSample]]:
    root = Path(data_dir)
    manifest = load_manifest(root)
    canvas = manifest["canvas"]
    splits: dict[str, list[SceneSample]] = {}
    for entry in manifest["samples"]:
        path = root / entry["file"]
        if not path.exists():
            raise DataError(f"sample file missing: {path}")
        try:
            payload = json.loads(path.read_text())
            image = _decode_image(payload["image"], payload["image_format"], canvas)
            instances = [
                (rle_to_mask(inst["rle"], (canvas, canvas)), int(inst["rank"]))
                for inst in payload["instances"]
            ]
            sample = SceneSample(image=image, instances=instances, seed=int(payload["seed"]))
        except Exception as exc:
            raise DataError(f"corrupt sample {path}: {exc}") from exc
        splits.setdefault(entry["split"], []).append(sample)
    return splits
