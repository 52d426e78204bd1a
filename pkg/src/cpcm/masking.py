"""Masked point cloud construction.

Two strategies produce a per-point mask flag vector (1 = masked):

* point masking: each point is masked independently with probability R;
* region masking: the bounding box is split into G^3 equal cuboids and
  exactly round(R * G^3) of them are masked wholesale.

Applying a mask zeroes the colors of flagged points and never touches
coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from cpcm.cloud import Aabb, PointCloud, bounding_box

STRATEGIES = ("point", "region")


@dataclass
class MaskConfig:
    ratio: float = 0.75
    region_size: int = 4
    strategy: str = "region"

    def __post_init__(self) -> None:
        if not 0.0 <= self.ratio <= 1.0:
            raise ValueError(f"mask ratio must be in [0, 1], got {self.ratio}")
        if self.region_size < 1:
            raise ValueError(f"region_size must be >= 1, got {self.region_size}")
        if self.strategy not in STRATEGIES:
            raise ValueError(f"strategy must be one of {STRATEGIES}, got {self.strategy!r}")


@dataclass
class RegionGrid:
    """G^3 equal cuboids tiling a bounding box.

    Membership is half-open, [lo, hi) along each axis, with the topmost slab
    closed at the box maximum so every point in the box falls in exactly one
    region. A degenerate axis (zero extent) collapses to a single slab.
    Regions are indexed flat as ix * G^2 + iy * G + iz.
    """

    box: Aabb
    region_size: int
    edges: tuple[np.ndarray, np.ndarray, np.ndarray] = field(init=False)

    def __post_init__(self) -> None:
        if self.region_size < 1:
            raise ValueError(f"region_size must be >= 1, got {self.region_size}")
        g = self.region_size
        self.edges = tuple(
            np.linspace(self.box.min_corner[a], self.box.max_corner[a], g + 1)
            for a in range(3)
        )

    @property
    def num_regions(self) -> int:
        return self.region_size ** 3

    @property
    def regions(self) -> list[Aabb]:
        g = self.region_size
        ex, ey, ez = self.edges
        out = []
        for i in range(g):
            for j in range(g):
                for k in range(g):
                    out.append(
                        Aabb(
                            (ex[i], ey[j], ez[k]),
                            (ex[i + 1], ey[j + 1], ez[k + 1]),
                        )
                    )
        return out

    def point_region_indices(self, positions: np.ndarray) -> np.ndarray:
        """Flat region index of each point; points on the box max go to the top slab."""
        positions = np.asarray(positions, dtype=np.float64)
        g = self.region_size
        idx = np.empty((positions.shape[0], 3), dtype=np.int64)
        for a in range(3):
            idx[:, a] = np.searchsorted(self.edges[a], positions[:, a], side="right") - 1
        idx = np.clip(idx, 0, g - 1)
        return idx[:, 0] * g * g + idx[:, 1] * g + idx[:, 2]


def point_mask_flags(n_points: int, ratio: float, seed: int = 0) -> np.ndarray:
    """Independent Bernoulli(ratio) flag per point."""
    if n_points < 1:
        raise ValueError("n_points must be >= 1")
    if not 0.0 <= ratio <= 1.0:
        raise ValueError(f"mask ratio must be in [0, 1], got {ratio}")
    rng = np.random.default_rng(seed)
    return (rng.random(n_points) < ratio).astype(np.uint8)


def region_partition(box: Aabb, region_size: int) -> RegionGrid:
    """Split a box into region_size^3 equal cuboids."""
    return RegionGrid(box, region_size)


def region_mask_flags(cloud: PointCloud, config: MaskConfig, seed: int = 0) -> np.ndarray:
    """Flag every point inside round(R * G^3) randomly chosen regions.

    Regions are drawn uniformly without replacement over all G^3 cuboids of
    the cloud's bounding box, empty ones included, so the achieved point-level
    fraction only approximates R.
    """
    if config.strategy != "region":
        raise ValueError(f"region_mask_flags requires strategy 'region', got {config.strategy!r}")
    grid = region_partition(bounding_box(cloud), config.region_size)
    n_selected = round(config.ratio * grid.num_regions)
    rng = np.random.default_rng(seed)
    selected = rng.choice(grid.num_regions, size=n_selected, replace=False)
    point_regions = grid.point_region_indices(cloud.positions)
    return np.isin(point_regions, selected).astype(np.uint8)


def mask_flags(cloud: PointCloud, config: MaskConfig, seed: int = 0) -> np.ndarray:
    """Dispatch to the configured masking strategy."""
    if config.strategy == "point":
        return point_mask_flags(cloud.n, config.ratio, seed)
    return region_mask_flags(cloud, config, seed)


def apply_mask(cloud: PointCloud, flags: np.ndarray) -> PointCloud:
    """Zero the colors of flagged points; positions pass through unchanged."""
    flags = np.asarray(flags)
    if flags.shape != (cloud.n,):
        raise ValueError(f"mask length {flags.shape} does not match N={cloud.n}")
    if flags.size and not np.all((flags == 0) | (flags == 1)):
        raise ValueError("mask flags must be 0 or 1")
    colors = cloud.colors.copy()
    colors[flags.astype(bool)] = 0.0
    return PointCloud(cloud.positions.copy(), colors)
