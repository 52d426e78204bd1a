"""Point cloud data model, scene-file I/O, voxel downsampling and weak-label sampling.

Scene text format (ASCII, LF line endings):

    line 1:      "N C"                (point count, class count)
    data lines:  "x y z r g b label"  (six reals, then one integer)

A label of -1 marks an unlabeled point. Lines starting with ``#`` and blank
lines are skipped. Color channels are stored in [0, 1]; files whose channels
exceed 1 are read as 0-255 integers and rescaled on load.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

UNLABELED = -1


class SceneFormatError(ValueError):
    """A scene file violated the text format; the message names the line."""


@dataclass
class PointCloud:
    """N points with xyz positions (meters) and rgb colors in [0, 1]."""

    positions: np.ndarray
    colors: np.ndarray

    def __post_init__(self) -> None:
        self.positions = np.asarray(self.positions, dtype=np.float64)
        self.colors = np.asarray(self.colors, dtype=np.float64)
        if self.positions.ndim != 2 or self.positions.shape[1] != 3:
            raise ValueError(f"positions must have shape (N, 3), got {self.positions.shape}")
        if self.colors.shape != self.positions.shape:
            raise ValueError(
                f"colors shape {self.colors.shape} does not match positions shape {self.positions.shape}"
            )
        if self.n < 1:
            raise ValueError("a point cloud needs at least one point")
        if not np.all(np.isfinite(self.positions)):
            raise ValueError("positions contain non-finite values")
        if not np.all(np.isfinite(self.colors)):
            raise ValueError("colors contain non-finite values")
        if self.colors.min() < 0.0 or self.colors.max() > 1.0:
            raise ValueError("color channels must lie in [0, 1]")

    @property
    def n(self) -> int:
        return self.positions.shape[0]


@dataclass
class WeakLabels:
    """Per-point class labels where UNLABELED (-1) marks unsupervised points."""

    labels: np.ndarray
    num_classes: int

    def __post_init__(self) -> None:
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.labels.ndim != 1 or self.labels.size < 1:
            raise ValueError("labels must be a non-empty 1-D vector")
        if self.num_classes < 1:
            raise ValueError("num_classes must be positive")
        bad = (self.labels != UNLABELED) & (
            (self.labels < 0) | (self.labels >= self.num_classes)
        )
        if np.any(bad):
            raise ValueError(
                f"labels must be {UNLABELED} or in [0, {self.num_classes - 1}]"
            )

    @property
    def labeled_indices(self) -> np.ndarray:
        return np.nonzero(self.labels != UNLABELED)[0]

    @property
    def unlabeled_indices(self) -> np.ndarray:
        return np.nonzero(self.labels == UNLABELED)[0]

    @property
    def num_labeled(self) -> int:
        return int(np.count_nonzero(self.labels != UNLABELED))


@dataclass
class Aabb:
    """Axis-aligned bounding box given by its min and max corners."""

    min_corner: np.ndarray
    max_corner: np.ndarray

    def __post_init__(self) -> None:
        self.min_corner = np.asarray(self.min_corner, dtype=np.float64).reshape(3)
        self.max_corner = np.asarray(self.max_corner, dtype=np.float64).reshape(3)
        if np.any(self.max_corner < self.min_corner):
            raise ValueError("max_corner must be >= min_corner component-wise")

    @property
    def extent(self) -> np.ndarray:
        return self.max_corner - self.min_corner

    @property
    def diagonal(self) -> float:
        return float(math.sqrt(float(np.sum(self.extent ** 2))))

    def contains(self, points: np.ndarray) -> np.ndarray:
        """Closed-box membership test for an (N, 3) array of points."""
        points = np.asarray(points, dtype=np.float64)
        return np.all((points >= self.min_corner) & (points <= self.max_corner), axis=1)


def bounding_box(cloud: PointCloud) -> Aabb:
    """Smallest axis-aligned box covering every point of the cloud."""
    if cloud.n < 1:
        raise ValueError("cannot bound an empty cloud")
    return Aabb(cloud.positions.min(axis=0), cloud.positions.max(axis=0))


def _parse_color(value: float) -> float:
    ok = (0.0 <= value <= 1.0) or (value.is_integer() and 0.0 <= value <= 255.0)
    if not ok:
        raise ValueError
    return value


def load_scene(path) -> tuple[PointCloud, np.ndarray]:
    """Read one scene file, returning the cloud and its per-point labels."""
    path = Path(path)
    header: tuple[int, int] | None = None
    rows: list[list[float]] = []
    labels: list[int] = []
    with path.open("r", encoding="ascii") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            fields = line.split()
            if header is None:
                if len(fields) != 2:
                    raise SceneFormatError(f"{path}:{lineno}: header must be 'N C'")
                try:
                    n, c = int(fields[0]), int(fields[1])
                except ValueError:
                    raise SceneFormatError(f"{path}:{lineno}: non-integer header field") from None
                if n < 1 or c < 1:
                    raise SceneFormatError(f"{path}:{lineno}: N and C must be positive")
                header = (n, c)
                continue
            if len(rows) >= header[0]:
                raise SceneFormatError(
                    f"{path}:{lineno}: more data rows than the declared N={header[0]}"
                )
            if len(fields) != 7:
                raise SceneFormatError(f"{path}:{lineno}: expected 7 fields, got {len(fields)}")
            try:
                values = [float(f) for f in fields[:6]]
                label = int(fields[6])
            except ValueError:
                raise SceneFormatError(f"{path}:{lineno}: non-numeric field") from None
            try:
                for channel in values[3:6]:
                    _parse_color(channel)
            except ValueError:
                raise SceneFormatError(
                    f"{path}:{lineno}: color channel must be in [0, 1] or a 0-255 integer"
                ) from None
            if label != UNLABELED and not 0 <= label < header[1]:
                raise SceneFormatError(
                    f"{path}:{lineno}: label {label} out of range for C={header[1]}"
                )
            rows.append(values)
            labels.append(label)
    if header is None:
        raise SceneFormatError(f"{path}: missing header line")
    if len(rows) != header[0]:
        raise SceneFormatError(
            f"{path}: header declares N={header[0]} but found {len(rows)} data rows"
        )
    data = np.asarray(rows, dtype=np.float64)
    colors = data[:, 3:6]
    if colors.max() > 1.0:
        colors = colors / 255.0
    cloud = PointCloud(data[:, :3], colors)
    return cloud, np.asarray(labels, dtype=np.int64)


def save_scene(cloud: PointCloud, labels: np.ndarray, path, num_classes: int | None = None) -> None:
    """Write a scene file; load_scene inverts it up to 6-decimal precision.

    The header class count defaults to max(labels) + 1 when not given.
    """
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (cloud.n,):
        raise ValueError(f"labels length {labels.shape} does not match N={cloud.n}")
    if num_classes is None:
        num_classes = int(labels.max()) + 1 if np.any(labels != UNLABELED) else 1
    if np.any((labels != UNLABELED) & ((labels < 0) | (labels >= num_classes))):
        raise ValueError(f"labels do not fit num_classes={num_classes}")
    path = Path(path)
    with path.open("w", encoding="ascii", newline="\n") as fh:
        fh.write(f"{cloud.n} {max(num_classes, 1)}\n")
        for p, c, y in zip(cloud.positions, cloud.colors, labels):
            fh.write(
                f"{p[0]:.6f} {p[1]:.6f} {p[2]:.6f} {c[0]:.6f} {c[1]:.6f} {c[2]:.6f} {int(y)}\n"
            )


def read_scene_header(path) -> tuple[int, int]:
    """Point and class counts from the first non-comment line of a scene file."""
    path = Path(path)
    with path.open("r", encoding="ascii") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            fields = line.split()
            try:
                if len(fields) != 2:
                    raise ValueError
                return int(fields[0]), int(fields[1])
            except ValueError:
                raise SceneFormatError(f"{path}:{lineno}: header must be 'N C'") from None
    raise SceneFormatError(f"{path}: missing header line")


def voxel_downsample(
    cloud: PointCloud, labels: np.ndarray, voxel_size: float
) -> tuple[PointCloud, np.ndarray]:
    """Collapse each occupied voxel to its centroid.

    Output colors are the per-voxel mean; the output label is the majority
    non-unlabeled vote (ties go to the smaller class index), or UNLABELED if
    the voxel holds no labeled point. Output order follows the lexicographic
    order of voxel coordinates, so the result is deterministic.
    """
    if voxel_size <= 0:
        raise ValueError("voxel_size must be positive")
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (cloud.n,):
        raise ValueError(f"labels length {labels.shape} does not match N={cloud.n}")
    # voxel centers sit at integer multiples of voxel_size, so axis-aligned
    # surfaces near a multiple (walls, floors) do not straddle a boundary
    keys = np.floor(cloud.positions / voxel_size + 0.5).astype(np.int64)
    _, inverse = np.unique(keys, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    m = int(inverse.max()) + 1
    counts = np.bincount(inverse, minlength=m).astype(np.float64)
    pos = np.empty((m, 3))
    col = np.empty((m, 3))
    for j in range(3):
        pos[:, j] = np.bincount(inverse, weights=cloud.positions[:, j], minlength=m)
        col[:, j] = np.bincount(inverse, weights=cloud.colors[:, j], minlength=m)
    pos /= counts[:, None]
    col /= counts[:, None]
    out_labels = np.full(m, UNLABELED, dtype=np.int64)
    labeled = labels != UNLABELED
    if np.any(labeled):
        num_classes = int(labels[labeled].max()) + 1
        votes = np.zeros((m, num_classes), dtype=np.int64)
        np.add.at(votes, (inverse[labeled], labels[labeled]), 1)
        has_votes = votes.sum(axis=1) > 0
        out_labels[has_votes] = np.argmax(votes[has_votes], axis=1)
    # mean of values in [0, 1] can exceed the bound by float rounding only
    col = np.clip(col, 0.0, 1.0)
    return PointCloud(pos, col), out_labels


def sample_weak_labels(
    full_labels: np.ndarray,
    num_classes: int,
    *,
    ratio: float | None = None,
    count: int | None = None,
    seed: int = 0,
) -> WeakLabels:
    """Keep a uniformly sampled subset of labels, blanking the rest.

    Exactly one of ``ratio`` (keeps max(1, floor(ratio * N)) labels) or
    ``count`` must be given. Deterministic for a fixed seed.
    """
    full_labels = np.asarray(full_labels, dtype=np.int64)
    if full_labels.ndim != 1 or full_labels.size < 1:
        raise ValueError("full_labels must be a non-empty 1-D vector")
    n = full_labels.size
    if (ratio is None) == (count is None):
        raise ValueError("exactly one of ratio or count must be given")
    if ratio is not None:
        if not 0.0 < ratio <= 1.0:
            raise ValueError(f"ratio must be in (0, 1], got {ratio}")
        k = max(1, int(math.floor(ratio * n)))
    else:
        k = int(count)
        if not 1 <= k <= n:
            raise ValueError(f"count must be in [1, {n}], got {count}")
    rng = np.random.default_rng(seed)
    keep = rng.choice(n, size=k, replace=False)
    labels = np.full(n, UNLABELED, dtype=np.int64)
    labels[keep] = full_labels[keep]
    return WeakLabels(labels, num_classes)
