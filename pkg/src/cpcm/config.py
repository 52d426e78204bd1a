"""Run configuration: one flat key=value file plus command-line overrides.

Keys use dotted section prefixes (scene.*, data.*, model.*, train.*,
mask.*, augment.*, eval.*) except the four named seeds. Unknown keys are
rejected. Flag overrides win over the file.

The masking region size and the loss weights default per label budget:
budgets below 0.1 percent labeled get region_size 8 and weights (5, 10),
larger budgets get region_size 4 and weights (1, 5). Setting train.alpha,
train.beta or mask.region_size explicitly bypasses the rule.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from cpcm.augment import AugmentConfig
from cpcm.losses import LossWeights
from cpcm.masking import MaskConfig
from cpcm.model import ModelConfig
from cpcm.scenes import SceneConfig
from cpcm.trainer import TrainConfig

EXTREME_BUDGET_RATIO = 0.001
EXTREME_DEFAULTS = (8, 5.0, 10.0)  # region_size, alpha, beta
LIMITED_DEFAULTS = (4, 1.0, 5.0)


class ConfigError(ValueError):
    """Bad key, bad value, or malformed config file."""


def _parse_float_list(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip() != ""]


@dataclass
class RunConfig:
    # scene generation
    scene_extent_x: float = 4.0
    scene_extent_y: float = 4.0
    scene_extent_z: float = 2.5
    scene_density: float = 400.0
    scene_min_objects: int = 3
    scene_max_objects: int = 6
    scene_color_noise: float = 0.05
    scene_position_noise: float = 0.005
    # data pipeline
    data_voxel_size: float = 0.2
    # model
    model_hidden_dim: int = 32
    model_num_blocks: int = 2
    model_k_neighbors: int = 8
    # training
    train_mode: str = "cpcm"
    train_epochs: int = 30
    train_base_lr: float = 1e-2
    train_weight_decay: float = 1e-3
    train_poly_power: float = 0.9
    train_momentum: float = 0.0
    train_batch: int = 1
    train_budget: str = "0.001"
    train_alpha: float | None = None
    train_beta: float | None = None
    # masking
    mask_ratio: float = 0.75
    mask_region_size: int | None = None
    mask_strategy: str = "region"
    # augmentation
    augment_rotation: float = float(np.pi)
    augment_flip_prob: float = 0.5
    augment_scale_lo: float = 0.9
    augment_scale_hi: float = 1.1
    augment_color_jitter: float = 0.05
    augment_translation: float = 0.1
    # evaluation
    eval_ratios: list[float] = None  # type: ignore[assignment]
    eval_mask_seeds: int = 3
    # named seeds
    data_seed: int = 0
    label_seed: int = 0
    train_seed: int = 0
    mask_seed: int = 0

    def __post_init__(self) -> None:
        if self.eval_ratios is None:
            self.eval_ratios = [0.0, 0.2, 0.4, 0.6, 0.8]


_SEED_KEYS = ("data_seed", "label_seed", "train_seed", "mask_seed")


def _key_to_attr(key: str) -> str:
    return key if key in _SEED_KEYS else key.replace(".", "_")


def _attr_to_key(attr: str) -> str:
    return attr if attr in _SEED_KEYS else attr.replace("_", ".", 1)


KNOWN_KEYS = {_attr_to_key(f.name): f.name for f in fields(RunConfig)}


def _coerce(attr: str, raw: str):
    raw = raw.strip()
    if attr == "eval_ratios":
        return _parse_float_list(raw)
    if attr in ("train_mode", "mask_strategy", "train_budget"):
        return raw
    if attr in ("train_alpha", "train_beta"):
        return float(raw)
    if attr == "mask_region_size":
        return int(raw)
    default = RunConfig.__dataclass_fields__[attr].default
    if isinstance(default, bool):
        return raw.lower() in ("1", "true", "yes")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    return raw


def parse_config_file(path) -> dict[str, str]:
    """Read `key = value` lines; '#' starts a comment, blank lines skipped."""
    path = Path(path)
    mapping: dict[str, str] = {}
    for lineno, raw in enumerate(path.read_text(encoding="ascii").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key in mapping:
            raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
        mapping[key] = value
    return mapping


def load_run_config(path=None, overrides: dict[str, str] | None = None) -> RunConfig:
    """Build a RunConfig from an optional file plus overriding key=value pairs."""
    mapping = parse_config_file(path) if path is not None else {}
    if overrides:
        mapping.update(overrides)
    config = RunConfig()
    for key, raw in mapping.items():
        if key not in KNOWN_KEYS:
            raise ConfigError(f"unknown config key {key!r}")
        attr = KNOWN_KEYS[key]
        try:
            setattr(config, attr, _coerce(attr, raw))
        except ValueError as err:
            raise ConfigError(f"bad value for {key!r}: {raw!r}") from err
    # re-validate everything module-level constructors enforce
    build_scene_config(config)
    build_model_config(config, num_classes=2)
    build_train_config(config, effective_budget_ratio=1.0)
    parse_budget(config.train_budget)
    for ratio in config.eval_ratios:
        if not 0.0 <= ratio <= 1.0:
            raise ConfigError(f"eval.ratios entries must be in [0, 1], got {ratio}")
    if config.data_voxel_size < 0:
        raise ConfigError("data.voxel_size must be >= 0 (0 disables downsampling)")
    return config


def parse_budget(text: str) -> tuple[str, float]:
    """'0.001' style decimals are label ratios; bare integers are points per scene."""
    text = text.strip()
    try:
        if "." in text or "e" in text.lower():
            ratio = float(text)
            if not 0.0 < ratio <= 1.0:
                raise ValueError
            return "ratio", ratio
        count = int(text)
        if count < 1:
            raise ValueError
        return "count", float(count)
    except ValueError:
        raise ConfigError(
            f"budget must be a ratio in (0, 1] or a positive point count, got {text!r}"
        ) from None


def effective_budget_ratio(budget: str, scene_sizes: list[int]) -> float:
    """Labeled fraction the budget amounts to, for the regime rule."""
    kind, value = parse_budget(budget)
    if kind == "ratio":
        return value
    return value / float(np.median(scene_sizes))


def budget_kwargs(budget: str) -> dict:
    """Keyword arguments for sample_weak_labels."""
    kind, value = parse_budget(budget)
    return {"ratio": value} if kind == "ratio" else {"count": int(value)}


def build_scene_config(config: RunConfig, seed: int | None = None) -> SceneConfig:
    return SceneConfig(
        extent_x=config.scene_extent_x,
        extent_y=config.scene_extent_y,
        extent_z=config.scene_extent_z,
        density=config.scene_density,
        min_objects=config.scene_min_objects,
        max_objects=config.scene_max_objects,
        color_noise=config.scene_color_noise,
        position_noise=config.scene_position_noise,
        seed=config.data_seed if seed is None else seed,
    )


def build_model_config(config: RunConfig, num_classes: int) -> ModelConfig:
    return ModelConfig(
        num_classes=num_classes,
        hidden_dim=config.model_hidden_dim,
        num_blocks=config.model_num_blocks,
        k_neighbors=config.model_k_neighbors,
        init_seed=config.train_seed,
    )


def resolve_mask_and_weights(
    config: RunConfig, effective_budget_ratio: float
) -> tuple[MaskConfig, LossWeights]:
    """Fill region_size/alpha/beta from the budget regime unless set explicitly."""
    region_default, alpha_default, beta_default = (
        EXTREME_DEFAULTS if effective_budget_ratio < EXTREME_BUDGET_RATIO else LIMITED_DEFAULTS
    )
    mask = MaskConfig(
        ratio=config.mask_ratio,
        region_size=config.mask_region_size if config.mask_region_size is not None else region_default,
        strategy=config.mask_strategy,
    )
    weights = LossWeights(
        alpha=config.train_alpha if config.train_alpha is not None else alpha_default,
        beta=config.train_beta if config.train_beta is not None else beta_default,
    )
    return mask, weights


def build_augment_config(config: RunConfig) -> AugmentConfig:
    return AugmentConfig(
        rotation=config.augment_rotation,
        flip_prob=config.augment_flip_prob,
        scale_lo=config.augment_scale_lo,
        scale_hi=config.augment_scale_hi,
        color_jitter=config.augment_color_jitter,
        translation=config.augment_translation,
    )


def build_train_config(config: RunConfig, effective_budget_ratio: float) -> TrainConfig:
    mask, weights = resolve_mask_and_weights(config, effective_budget_ratio)
    mode = config.train_mode
    if mode == "ce_only":
        weights = LossWeights(0.0, 0.0)
    return TrainConfig(
        mode=mode,
        epochs=config.train_epochs,
        base_lr=config.train_base_lr,
        weight_decay=config.train_weight_decay,
        poly_power=config.train_poly_power,
        momentum=config.train_momentum,
        batch=config.train_batch,
        weights=weights,
        mask=mask,
        augment=build_augment_config(config),
        seed=config.train_seed,
    )
