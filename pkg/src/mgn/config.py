"""Configuration schema: defaults, strict JSON loading, canonical dumps.

One flat JSON document mirrors ModelConfig + TrainConfig + LossWeights, with
dataset settings nested under "dataset".  Unknown keys are rejected so typos
fail loudly instead of silently training the default.
"""

import json
from dataclasses import dataclass

from .model import FUSION_MODES, RESIDUAL_MODES, ModelConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class LossWeights:
    alpha_g: float = 0.01
    alpha_l: float = 0.05


@dataclass(frozen=True)
class DatasetConfig:
    kind: str = "synthetic"
    train_pairs: int = 200
    val_pairs: int = 32
    image_size: int = 64


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 8
    crop: int = 64
    lr0: float = 5e-4
    total_steps: int = 2000
    val_interval: int = 250
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    dataset: DatasetConfig = DatasetConfig()


_MODEL_KEYS = (
    "base_channels", "token_grid", "stages", "partitions", "fusion_mode",
    "residual_mode", "block_mask", "aux_supervision", "eps",
)
_TRAIN_KEYS = (
    "batch_size", "crop", "lr0", "total_steps", "val_interval", "seed",
    "beta1", "beta2", "adam_eps",
)
_LOSS_KEYS = ("alpha_g", "alpha_l")
_DATASET_KEYS = ("kind", "train_pairs", "val_pairs", "image_size")


def config_dict(model_cfg: ModelConfig, train_cfg: TrainConfig, weights: LossWeights) -> dict:
    """Flat JSON-ready dict holding every field (defaults included)."""
    doc = {k: getattr(model_cfg, k) for k in _MODEL_KEYS}
    doc["block_mask"] = list(model_cfg.block_mask)
    doc.update({k: getattr(train_cfg, k) for k in _TRAIN_KEYS})
    doc.update({k: getattr(weights, k) for k in _LOSS_KEYS})
    doc["dataset"] = {k: getattr(train_cfg.dataset, k) for k in _DATASET_KEYS}
    return doc


def default_config() -> dict:
    return config_dict(ModelConfig(), TrainConfig(), LossWeights())


def _need_int(doc, key, minimum=None):
    v = doc[key]
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(f"{key} must be an integer, got {v!r}")
    if minimum is not None and v < minimum:
        raise ConfigError(f"{key} must be >= {minimum}, got {v}")
    return v


def _need_number(doc, key, minimum=None, strict=False):
    v = doc[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{key} must be a number, got {v!r}")
    v = float(v)
    if minimum is not None and (v <= minimum if strict else v < minimum):
        raise ConfigError(f"{key} must be {'>' if strict else '>='} {minimum}, got {v}")
    return v


def parse_config(doc: dict):
    """Validate a config document; returns (ModelConfig, TrainConfig, LossWeights)."""
    if not isinstance(doc, dict):
        raise ConfigError(f"config must be a JSON object, got {type(doc).__name__}")
    merged = default_config()
    known = set(merged) | {"dataset"}
    unknown = sorted(set(doc) - known)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    ds_doc = doc.get("dataset", {})
    if not isinstance(ds_doc, dict):
        raise ConfigError("dataset must be a JSON object")
    unknown = sorted(set(ds_doc) - set(_DATASET_KEYS))
    if unknown:
        raise ConfigError(f"unknown dataset keys: {', '.join(unknown)}")
    merged.update({k: v for k, v in doc.items() if k != "dataset"})
    merged["dataset"] = {**merged["dataset"], **ds_doc}

    for key in ("base_channels", "token_grid", "stages", "partitions"):
        _need_int(merged, key, 1)
    if merged["fusion_mode"] not in FUSION_MODES:
        raise ConfigError(f"fusion_mode must be one of {FUSION_MODES}, got {merged['fusion_mode']!r}")
    if merged["residual_mode"] not in RESIDUAL_MODES:
        raise ConfigError(f"residual_mode must be one of {RESIDUAL_MODES}, got {merged['residual_mode']!r}")
    mask = merged["block_mask"]
    if not isinstance(mask, (list, tuple)) or not all(isinstance(b, bool) for b in mask):
        raise ConfigError("block_mask must be a list of booleans")
    if not isinstance(merged["aux_supervision"], bool):
        raise ConfigError("aux_supervision must be a boolean")
    _need_number(merged, "eps", 0.0, strict=True)

    _need_int(merged, "batch_size", 1)
    crop = _need_int(merged, "crop", 8)
    if crop % 4:
        raise ConfigError(f"crop must be divisible by 4, got {crop}")
    _need_number(merged, "lr0", 0.0, strict=True)
    _need_int(merged, "total_steps", 1)
    _need_int(merged, "val_interval", 1)
    _need_int(merged, "seed", 0)
    for key in ("beta1", "beta2"):
        v = _need_number(merged, key, 0.0)
        if v >= 1.0:
            raise ConfigError(f"{key} must be < 1, got {v}")
    _need_number(merged, "adam_eps", 0.0, strict=True)
    for key in _LOSS_KEYS:
        _need_number(merged, key, 0.0)

    ds = merged["dataset"]
    if ds["kind"] != "synthetic":
        raise ConfigError(f"dataset.kind must be 'synthetic', got {ds['kind']!r}")
    for key in ("train_pairs", "val_pairs"):
        if isinstance(ds[key], bool) or not isinstance(ds[key], int) or ds[key] < 1:
            raise ConfigError(f"dataset.{key} must be an integer >= 1, got {ds[key]!r}")
    size = ds["image_size"]
    if isinstance(size, bool) or not isinstance(size, int) or size < 8 or size % 4:
        raise ConfigError(f"dataset.image_size must be >= 8 and divisible by 4, got {size!r}")
    if size < crop:
        raise ConfigError(f"dataset.image_size {size} smaller than crop {crop}")

    try:
        model_cfg = ModelConfig(
            base_channels=merged["base_channels"],
            token_grid=merged["token_grid"],
            stages=merged["stages"],
            partitions=merged["partitions"],
            fusion_mode=merged["fusion_mode"],
            residual_mode=merged["residual_mode"],
            block_mask=tuple(mask),
            aux_supervision=merged["aux_supervision"],
            eps=merged["eps"],
        )
    except ValueError as e:
        raise ConfigError(str(e)) from None
    train_cfg = TrainConfig(
        batch_size=merged["batch_size"],
        crop=crop,
        lr0=merged["lr0"],
        total_steps=merged["total_steps"],
        val_interval=merged["val_interval"],
        seed=merged["seed"],
        beta1=merged["beta1"],
        beta2=merged["beta2"],
        adam_eps=merged["adam_eps"],
        dataset=DatasetConfig(
            kind=ds["kind"],
            train_pairs=ds["train_pairs"],
            val_pairs=ds["val_pairs"],
            image_size=size,
        ),
    )
    weights = LossWeights(alpha_g=float(merged["alpha_g"]), alpha_l=float(merged["alpha_l"]))
    return model_cfg, train_cfg, weights


def load_config(path):
    """Parse and validate a JSON config file."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as e:
        raise ConfigError(f"invalid JSON in {path}: {e}") from None
    return parse_config(doc)
