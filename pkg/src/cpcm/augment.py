"""Random augmentations for the two consistency branches.

The transform chain is uniform scale, yaw rotation about z, optional mirror
of each horizontal axis, then translation; colors get one whole-view tint
shift plus clamped per-point jitter. Point order is preserved so per-point
losses can compare branches index-wise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from cpcm.cloud import PointCloud


@dataclass
class AugmentConfig:
    rotation: float = math.pi
    flip_prob: float = 0.5
    scale_lo: float = 0.9
    scale_hi: float = 1.1
    color_jitter: float = 0.05
    color_shift: float = 0.1
    translation: float = 0.1

    def __post_init__(self) -> None:
        if self.rotation < 0:
            raise ValueError("rotation bound must be >= 0")
        if not 0.0 <= self.flip_prob <= 1.0:
            raise ValueError("flip_prob must be in [0, 1]")
        if not 0.0 < self.scale_lo <= self.scale_hi:
            raise ValueError("scale range must satisfy 0 < lo <= hi")
        if self.color_jitter < 0 or self.color_shift < 0 or self.translation < 0:
            raise ValueError("jitter, shift, and translation amplitudes must be >= 0")


def rotate_z(positions: np.ndarray, angle: float) -> np.ndarray:
    """Rotate points about the vertical axis by the given yaw angle."""
    c, s = math.cos(angle), math.sin(angle)
    rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    return positions @ rot.T


def augment(cloud: PointCloud, config: AugmentConfig, seed: int = 0) -> PointCloud:
    """Apply one random draw of the transform chain; deterministic per seed."""
    rng = np.random.default_rng(seed)
    scale = rng.uniform(config.scale_lo, config.scale_hi)
    angle = rng.uniform(-config.rotation, config.rotation) if config.rotation > 0 else 0.0
    flips = rng.random(2) < config.flip_prob
    shift = rng.uniform(-config.translation, config.translation, size=3)

    positions = cloud.positions * scale
    if angle != 0.0:
        positions = rotate_z(positions, angle)
    for axis in range(2):
        if flips[axis]:
            positions = positions.copy()
            positions[:, axis] = -positions[:, axis]
    positions = positions + shift

    colors = cloud.colors
    if config.color_shift > 0:
        # one tint offset for the whole view, like chromatic translation
        colors = colors + rng.uniform(-config.color_shift, config.color_shift, size=3)
    if config.color_jitter > 0:
        colors = colors + rng.uniform(-config.color_jitter, config.color_jitter, size=colors.shape)
    if config.color_shift > 0 or config.color_jitter > 0:
        colors = np.clip(colors, 0.0, 1.0)
    return PointCloud(positions, colors.copy())
