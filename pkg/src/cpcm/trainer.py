"""Training loop: augment, mask, shared-weight forwards, combined loss, SGD.

One step processes one scene (or a small batch): two augmented branches are
always built; in ``cpcm`` mode a third branch sees the color-masked cloud
and is pulled toward the detached unmasked predictions; ``mask_no_cmt``
instead masks one of the two consistency branches directly, which serves as
the ablation where the dedicated masked stream is removed. Updates are
plain SGD with polynomial learning-rate decay, optional momentum, and L2
weight decay added to the gradient.

All randomness flows from the config seed through one generator, so a
(dataset, config, seed) triple fully determines the parameter trajectory.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from cpcm.augment import AugmentConfig, augment
from cpcm.autodiff import NumericError, Tensor
from cpcm.cloud import PointCloud, WeakLabels
from cpcm.losses import LossBreakdown, LossWeights, objective
from cpcm.masking import MaskConfig, apply_mask, mask_flags
from cpcm.model import (
    ModelConfig,
    ModelParams,
    NeighborAverager,
    forward,
    init,
    neighbor_averager,
)

TRAIN_MODES = ("ce_only", "consis_baseline", "cpcm", "mask_no_cmt")

Scene = tuple[PointCloud, WeakLabels]


class TrainingError(RuntimeError):
    """Aborted step, e.g. a non-finite loss; the message carries diagnostics."""


@dataclass
class TrainConfig:
    mode: str = "cpcm"
    epochs: int = 30
    base_lr: float = 1e-2
    weight_decay: float = 1e-3
    poly_power: float = 0.9
    momentum: float = 0.0
    batch: int = 1
    weights: LossWeights = field(default_factory=LossWeights)
    mask: MaskConfig = field(default_factory=MaskConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    seed: int = 0

    def __post_init__(self) -> None:
        if self.mode not in TRAIN_MODES:
            raise ValueError(f"mode must be one of {TRAIN_MODES}, got {self.mode!r}")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.base_lr <= 0:
            raise ValueError("base_lr must be positive")
        if self.poly_power <= 0:
            raise ValueError("poly_power must be positive")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must be in [0, 1)")
        if self.batch < 1:
            raise ValueError("batch must be >= 1")


@dataclass
class StepRecord:
    step: int
    epoch: int
    lr: float
    seg: float
    consis: float
    mask: float
    total: float


@dataclass
class TrainState:
    params: ModelParams
    total_steps: int
    step: int = 0
    velocities: dict[str, np.ndarray] = field(default_factory=dict)
    history: list[StepRecord] = field(default_factory=list)


@dataclass
class TrainHistory:
    steps: list[StepRecord]
    epoch_mious: list[tuple[int, float]]


def lr_at(step: int, total_steps: int, config: TrainConfig) -> float:
    """Polynomial decay from base_lr at step 0 to exactly 0 at total_steps."""
    if total_steps <= 0:
        raise ValueError("total_steps must be positive")
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    return config.base_lr * (1.0 - step / total_steps) ** config.poly_power


def _scene_objective(
    params: ModelParams,
    scene: Scene,
    config: TrainConfig,
    seeds: tuple[int, int, int],
    neighbors: NeighborAverager | None,
):
    cloud, labels = scene
    aug_seed1, aug_seed2, mask_seed = seeds
    needs_mask = config.mode in ("cpcm", "mask_no_cmt")
    flags = mask_flags(cloud, config.mask, mask_seed) if needs_mask else None

    view1 = augment(cloud, config.augment, aug_seed1)
    view2 = augment(cloud, config.augment, aug_seed2)
    if config.mode == "mask_no_cmt":
        view2 = apply_mask(view2, flags)

    z1 = forward(params, view1, neighbors).row_softmax()
    z2 = forward(params, view2, neighbors).row_softmax()
    zm = None
    if config.mode == "cpcm":
        masked = apply_mask(cloud, flags)
        zm = forward(params, masked, neighbors).row_softmax()

    weights = LossWeights(0.0, 0.0) if config.mode == "ce_only" else config.weights
    objective_mode = "cpcm" if config.mode == "cpcm" else "consis_baseline"
    return objective(z1, z2, zm, labels, weights, objective_mode)


def _update(
    state: TrainState,
    group: list[Scene],
    config: TrainConfig,
    rng: np.random.Generator,
    neighbors: list[NeighborAverager | None],
    epoch: int,
) -> StepRecord:
    lr = lr_at(state.step, state.total_steps, config)
    totals: list[Tensor] = []
    parts: list[LossBreakdown] = []
    try:
        for scene, nbr in zip(group, neighbors):
            seeds = tuple(int(s) for s in rng.integers(0, 2**31 - 1, size=3))
            total, breakdown = _scene_objective(state.params, scene, config, seeds, nbr)
            totals.append(total)
            parts.append(breakdown)
    except NumericError as err:
        raise TrainingError(f"step {state.step}: {err}") from err

    combined = totals[0]
    for extra in totals[1:]:
        combined = combined.add(extra)
    if len(totals) > 1:
        combined = combined.scale(1.0 / len(totals))
    if not math.isfinite(combined.item()):
        detail = ", ".join(
            f"(seg={p.seg:.6g}, consis={p.consis:.6g}, mask={p.mask:.6g})" for p in parts
        )
        raise TrainingError(f"step {state.step}: non-finite loss; components {detail}")

    state.params.zero_grad()
    combined.backward()
    for name, tensor in state.params.items():
        grad = tensor.grad if tensor.grad is not None else np.zeros_like(tensor.values)
        direction = grad + config.weight_decay * tensor.values
        if config.momentum > 0.0:
            velocity = state.velocities.get(name)
            if velocity is None:
                velocity = np.zeros_like(tensor.values)
            velocity = config.momentum * velocity + direction
            state.velocities[name] = velocity
            direction = velocity
        tensor.values = tensor.values - lr * direction
        if not np.all(np.isfinite(tensor.values)):
            raise TrainingError(f"step {state.step}: parameter {name} became non-finite")

    record = StepRecord(
        step=state.step,
        epoch=epoch,
        lr=lr,
        seg=float(np.mean([p.seg for p in parts])),
        consis=float(np.mean([p.consis for p in parts])),
        mask=float(np.mean([p.mask for p in parts])),
        total=combined.item(),
    )
    state.history.append(record)
    state.step += 1
    return record


def train_step(
    state: TrainState,
    scene: Scene,
    config: TrainConfig,
    rng: np.random.Generator,
    neighbors: NeighborAverager | None = None,
    epoch: int = 0,
) -> TrainState:
    """One optimization step on a single scene."""
    if scene[1].num_labeled < 1:
        raise ValueError("scene has no labeled points")
    _update(state, [scene], config, rng, [neighbors], epoch)
    return state


def train(
    dataset: list[Scene],
    config: TrainConfig,
    model_config: ModelConfig,
    eval_scenes: list[tuple[PointCloud, np.ndarray]] | None = None,
    neighbors: list[NeighborAverager] | None = None,
    eval_neighbors: list[NeighborAverager] | None = None,
) -> tuple[ModelParams, TrainHistory]:
    """Run the full epoch loop with per-epoch shuffling.

    When ``eval_scenes`` (cloud, ground-truth labels) are given, pooled mIoU
    over them is recorded after every epoch. Precomputed neighbor operators
    can be passed to skip the per-scene k-NN search.
    """
    from cpcm.evaluation import evaluate_scenes

    if not dataset:
        raise ValueError("dataset is empty")
    for i, (_, labels) in enumerate(dataset):
        if labels.num_labeled < 1:
            raise ValueError(f"scene {i} has no labeled points")

    params = init(model_config)
    rng = np.random.default_rng(config.seed)
    batches_per_epoch = math.ceil(len(dataset) / config.batch)
    state = TrainState(params=params, total_steps=config.epochs * batches_per_epoch)

    if neighbors is None:
        neighbors = [neighbor_averager(cloud, model_config.k_neighbors) for cloud, _ in dataset]
    if eval_scenes and eval_neighbors is None:
        eval_neighbors = [
            neighbor_averager(cloud, model_config.k_neighbors) for cloud, _ in eval_scenes
        ]

    epoch_mious: list[tuple[int, float]] = []
    for epoch in range(config.epochs):
        order = rng.permutation(len(dataset))
        for start in range(0, len(order), config.batch):
            ids = order[start : start + config.batch]
            _update(
                state,
                [dataset[i] for i in ids],
                config,
                rng,
                [neighbors[i] for i in ids],
                epoch,
            )
        if eval_scenes:
            _, pooled = evaluate_scenes(params, eval_scenes, neighbors=eval_neighbors)
            epoch_mious.append((epoch, pooled))

    return params, TrainHistory(steps=state.history, epoch_mious=epoch_mious)
