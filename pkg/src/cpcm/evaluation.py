"""Segmentation metrics and evaluation under color masking.

mIoU averages per-class intersection-over-union, skipping classes absent
from both prediction and ground truth. Masked evaluation re-scores the same
scenes after region-masking their colors at a given ratio, probing how much
the model leans on color versus context; ratio 0 reproduces the plain
evaluation exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from cpcm.cloud import PointCloud
from cpcm.masking import MaskConfig, apply_mask, region_mask_flags
from cpcm.model import ModelParams, NeighborAverager, forward, neighbor_averager

EvalScene = tuple[PointCloud, np.ndarray]


def predict(
    params: ModelParams, cloud: PointCloud, neighbors: NeighborAverager | None = None
) -> np.ndarray:
    """Per-point argmax class, ties resolved to the smallest class index."""
    probs = forward(params, cloud, neighbors).row_softmax().values
    return np.argmax(probs, axis=1).astype(np.int64)


def confusion_matrix(pred: np.ndarray, truth: np.ndarray, num_classes: int) -> np.ndarray:
    """Counts[i, j] = points of true class i predicted as class j."""
    pred = np.asarray(pred, dtype=np.int64)
    truth = np.asarray(truth, dtype=np.int64)
    if pred.shape != truth.shape:
        raise ValueError(f"length mismatch: pred {pred.shape} vs truth {truth.shape}")
    if pred.size and (min(pred.min(), truth.min()) < 0 or max(pred.max(), truth.max()) >= num_classes):
        raise ValueError(f"class indices outside [0, {num_classes - 1}]")
    counts = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(counts, (truth, pred), 1)
    return counts


def miou_from_confusion(counts: np.ndarray) -> tuple[np.ndarray, float]:
    """Per-class IoU (NaN for classes with empty union) and their mean."""
    tp = np.diag(counts).astype(np.float64)
    fp = counts.sum(axis=0) - tp
    fn = counts.sum(axis=1) - tp
    union = tp + fp + fn
    ious = np.full(counts.shape[0], np.nan)
    present = union > 0
    ious[present] = tp[present] / union[present]
    mean = float(np.mean(ious[present])) if np.any(present) else 0.0
    return ious, mean


def miou(pred: np.ndarray, truth: np.ndarray, num_classes: int) -> tuple[np.ndarray, float]:
    """Per-class IoU vector and mIoU for one prediction."""
    return miou_from_confusion(confusion_matrix(pred, truth, num_classes))


def evaluate_scenes(
    params: ModelParams,
    scenes: list[EvalScene],
    neighbors: list[NeighborAverager] | None = None,
) -> tuple[np.ndarray, float]:
    """Pooled confusion over all scenes, reduced to per-class IoU and mIoU."""
    num_classes = params.config.num_classes
    counts = np.zeros((num_classes, num_classes), dtype=np.int64)
    for i, (cloud, truth) in enumerate(scenes):
        nbr = neighbors[i] if neighbors is not None else None
        counts += confusion_matrix(predict(params, cloud, nbr), truth, num_classes)
    return miou_from_confusion(counts)


@dataclass
class MaskEvalRow:
    ratio: float
    miou_mean: float
    miou_sd: float


def masked_evaluation(
    params: ModelParams,
    scenes: list[EvalScene],
    ratios: list[float],
    region_size: int,
    seeds: list[int],
    neighbors: list[NeighborAverager] | None = None,
) -> list[MaskEvalRow]:
    """mIoU per mask ratio, mean and sd over mask seeds.

    For each (ratio, seed) every scene is color-masked with region masking,
    predictions are pooled over all scenes and all points, and scored
    against the full ground truth.
    """
    for ratio in ratios:
        if not 0.0 <= ratio <= 1.0:
            raise ValueError(f"mask ratio must be in [0, 1], got {ratio}")
    if neighbors is None:
        neighbors = [neighbor_averager(cloud, params.config.k_neighbors) for cloud, _ in scenes]
    num_classes = params.config.num_classes
    rows = []
    for ratio in ratios:
        config = MaskConfig(ratio=ratio, region_size=region_size, strategy="region")
        scores = []
        for seed in seeds:
            rng = np.random.default_rng(seed)
            counts = np.zeros((num_classes, num_classes), dtype=np.int64)
            for (cloud, truth), nbr in zip(scenes, neighbors):
                flags = region_mask_flags(cloud, config, int(rng.integers(0, 2**31 - 1)))
                pred = predict(params, apply_mask(cloud, flags), nbr)
                counts += confusion_matrix(pred, truth, num_classes)
            scores.append(miou_from_confusion(counts)[1])
        scores = np.asarray(scores)
        sd = float(scores.std(ddof=1)) if scores.size > 1 else 0.0
        rows.append(MaskEvalRow(ratio=ratio, miou_mean=float(scores.mean()), miou_sd=sd))
    return rows
