"""Procedural indoor-like scenes with known per-point labels.

A scene is a rectangular room sampled on its floor and four walls, plus a
few axis-aligned boxes and spheres resting on the floor and thin boards
hung flush on the walls. Points are drawn uniformly per surface area,
labeled by the generating surface, and colored by a per-class base color
plus noise and one random per-scene lighting tint.

The palette and tint are chosen so that color is informative but never
sufficient on its own: the box color sits between floor and wall, the tint
varies more than the box-wall gap, and boards are geometrically just wall
patches that only color and their surroundings can reveal. Classifiers
that lean on absolute color transfer poorly to unseen tints, and masked
regions can only be filled from context.

Class ids: 0 floor, 1 wall, 2 box, 3 sphere, 4 board.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from cpcm.cloud import PointCloud, load_scene, read_scene_header, save_scene

CLASS_NAMES = ("floor", "wall", "box", "sphere", "board")
NUM_CLASSES = len(CLASS_NAMES)

DEFAULT_BASE_COLORS = (
    (0.46, 0.36, 0.28),  # floor: warm brown
    (0.62, 0.60, 0.56),  # wall: light gray
    (0.55, 0.50, 0.45),  # box: between floor and wall, ambiguous with both
    (0.38, 0.44, 0.58),  # sphere: muted blue
    (0.24, 0.25, 0.28),  # board: dark panel, color-distinct but wall-shaped
)

MAX_PLACEMENT_RETRIES = 100


class GenerationError(RuntimeError):
    """Object placement failed after the retry budget."""


@dataclass
class SceneConfig:
    extent_x: float = 4.0
    extent_y: float = 4.0
    extent_z: float = 2.5
    density: float = 400.0
    min_objects: int = 3
    max_objects: int = 6
    min_boards: int = 2
    max_boards: int = 3
    color_noise: float = 0.05
    color_tint: float = 0.1
    position_noise: float = 0.005
    base_colors: tuple = DEFAULT_BASE_COLORS
    seed: int = 0

    def __post_init__(self) -> None:
        if min(self.extent_x, self.extent_y, self.extent_z) <= 0:
            raise ValueError("room extents must be positive")
        if self.density <= 0:
            raise ValueError("density must be positive")
        if not 0 <= self.min_objects <= self.max_objects:
            raise ValueError("need 0 <= min_objects <= max_objects")
        if not 0 <= self.min_boards <= self.max_boards:
            raise ValueError("need 0 <= min_boards <= max_boards")
        if self.color_noise < 0 or self.color_tint < 0 or self.position_noise < 0:
            raise ValueError("noise amplitudes must be >= 0")
        if len(self.base_colors) != NUM_CLASSES:
            raise ValueError(f"base_colors must list {NUM_CLASSES} rgb triples")


def _sample_rect(rng, count, origin, u_axis, u_len, v_axis, v_len, fixed_axis, fixed_val):
    pts = np.tile(np.asarray(origin, dtype=np.float64), (count, 1))
    pts[:, u_axis] += rng.uniform(0.0, u_len, size=count)
    pts[:, v_axis] += rng.uniform(0.0, v_len, size=count)
    pts[:, fixed_axis] = fixed_val
    return pts


def _sample_box_surface(rng, count, center, half):
    """Uniform-by-area samples on all six faces of an axis-aligned box."""
    hx, hy, hz = half
    face_areas = np.array([hy * hz, hy * hz, hx * hz, hx * hz, hx * hy, hx * hy]) * 4.0
    probs = face_areas / face_areas.sum()
    faces = rng.choice(6, size=count, p=probs)
    u = rng.uniform(-1.0, 1.0, size=count)
    v = rng.uniform(-1.0, 1.0, size=count)
    pts = np.empty((count, 3))
    sign = np.where(faces % 2 == 0, 1.0, -1.0)
    axis = faces // 2  # 0: +-x faces, 1: +-y faces, 2: +-z faces
    for a in range(3):
        sel = axis == a
        if not np.any(sel):
            continue
        ua, va = [o for o in range(3) if o != a]
        pts[sel, a] = sign[sel] * half[a]
        pts[sel, ua] = u[sel] * half[ua]
        pts[sel, va] = v[sel] * half[va]
    return pts + np.asarray(center)


def _sample_sphere_surface(rng, count, center, radius):
    direction = rng.normal(size=(count, 3))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    return center + radius * direction


def _surface_count(area: float, density: float) -> int:
    return max(1, int(round(area * density)))


def generate_scene(config: SceneConfig) -> tuple[PointCloud, np.ndarray]:
    """One labeled scene; deterministic for a fixed config seed."""
    rng = np.random.default_rng(config.seed)
    lx, ly, lz = config.extent_x, config.extent_y, config.extent_z
    chunks: list[tuple[np.ndarray, int]] = []

    chunks.append(
        (_sample_rect(rng, _surface_count(lx * ly, config.density), (0, 0, 0), 0, lx, 1, ly, 2, 0.0), 0)
    )
    wall_specs = [
        ((0, 0, 0), 0, lx, 2, lz, 1, 0.0),
        ((0, 0, 0), 0, lx, 2, lz, 1, ly),
        ((0, 0, 0), 1, ly, 2, lz, 0, 0.0),
        ((0, 0, 0), 1, ly, 2, lz, 0, lx),
    ]
    for origin, ua, ulen, va, vlen, fa, fval in wall_specs:
        area = ulen * vlen
        chunks.append(
            (_sample_rect(rng, _surface_count(area, config.density), origin, ua, ulen, va, vlen, fa, fval), 1)
        )

    n_objects = int(rng.integers(config.min_objects, config.max_objects + 1))
    placed: list[tuple[float, float, float]] = []  # (cx, cy, footprint radius)
    for obj_index in range(n_objects):
        # the first two objects pin one box and one sphere so every class
        # shows up in every scene; the rest are drawn at random
        if obj_index == 0:
            is_box = True
        elif obj_index == 1:
            is_box = False
        else:
            is_box = bool(rng.random() < 0.5)
        for attempt in range(MAX_PLACEMENT_RETRIES + 1):
            if attempt == MAX_PLACEMENT_RETRIES:
                raise GenerationError(
                    f"could not place object {len(placed) + 1} of {n_objects} "
                    f"after {MAX_PLACEMENT_RETRIES} retries"
                )
            # later retries draw smaller objects so crowded rooms still resolve
            shrink = 1.0 if attempt < 40 else 0.7
            if is_box:
                half = rng.uniform(0.25, 0.52, size=3) * shrink
                footprint = float(np.hypot(half[0], half[1]))
                height = half[2]
            else:
                radius = float(rng.uniform(0.25, 0.48)) * shrink
                footprint = radius
                height = radius
            margin = footprint + 0.1
            if margin >= lx - margin or margin >= ly - margin:
                continue
            cx = float(rng.uniform(margin, lx - margin))
            cy = float(rng.uniform(margin, ly - margin))
            if all(np.hypot(cx - px, cy - py) > footprint + pr + 0.05 for px, py, pr in placed):
                break
        placed.append((cx, cy, footprint))
        if is_box:
            area = 8.0 * (half[0] * half[1] + half[0] * half[2] + half[1] * half[2])
            count = _surface_count(area, config.density)
            pts = _sample_box_surface(rng, count, (cx, cy, height), half)
            chunks.append((pts, 2))
        else:
            area = 4.0 * np.pi * radius**2
            count = _surface_count(area, config.density)
            pts = _sample_sphere_surface(rng, count, np.array([cx, cy, height]), radius)
            chunks.append((pts, 3))

    # boards: thin rectangles hung flush on a wall, skipped in tiny rooms
    n_boards = int(rng.integers(config.min_boards, config.max_boards + 1))
    wall_faces = [(1, 0.0, 1.0), (1, ly, -1.0), (0, 0.0, 1.0), (0, lx, -1.0)]
    hung: list[tuple[int, float, float]] = []  # (wall index, center, half width)
    for _ in range(n_boards):
        if min(lx, ly) < 1.2 or lz < 0.8:
            break
        for attempt in range(MAX_PLACEMENT_RETRIES + 1):
            if attempt == MAX_PLACEMENT_RETRIES:
                raise GenerationError(
                    f"could not hang board after {MAX_PLACEMENT_RETRIES} retries"
                )
            wall = int(rng.integers(0, 4))
            normal_axis, coord, inward = wall_faces[wall]
            along_axis = 0 if normal_axis == 1 else 1
            along_len = lx if along_axis == 0 else ly
            half_w = min(float(rng.uniform(0.5, 0.8)), 0.3 * along_len)
            half_h = min(float(rng.uniform(0.35, 0.55)), 0.28 * lz)
            cu = float(rng.uniform(half_w + 0.15, along_len - half_w - 0.15))
            cz = float(rng.uniform(half_h + 0.15, lz - half_h - 0.15))
            if all(w != wall or abs(cu - pu) > half_w + pw + 0.1 for w, pu, pw in hung):
                break
        hung.append((wall, cu, half_w))
        count = _surface_count(4.0 * half_w * half_h, config.density)
        pts = np.empty((count, 3))
        pts[:, along_axis] = rng.uniform(cu - half_w, cu + half_w, size=count)
        pts[:, 2] = rng.uniform(cz - half_h, cz + half_h, size=count)
        pts[:, normal_axis] = coord + inward * 0.03
        chunks.append((pts, 4))

    positions = np.vstack([pts for pts, _ in chunks])
    labels = np.concatenate(
        [np.full(len(pts), cls, dtype=np.int64) for pts, cls in chunks]
    )
    if config.position_noise > 0:
        positions = positions + rng.uniform(
            -config.position_noise, config.position_noise, size=positions.shape
        )
    base = np.asarray(config.base_colors, dtype=np.float64)[labels]
    tint = rng.uniform(-config.color_tint, config.color_tint, size=3)
    colors = np.clip(base + tint + rng.normal(0.0, config.color_noise, size=base.shape), 0.0, 1.0)
    return PointCloud(positions, colors), labels


def generate_dataset(
    n_train: int,
    n_eval: int,
    config: SceneConfig,
    seed: int = 0,
    out_dir: str | Path | None = None,
) -> tuple[list[tuple[PointCloud, np.ndarray]], list[tuple[PointCloud, np.ndarray]]]:
    """Generate train and eval scenes from per-scene derived seeds.

    With ``out_dir`` set, every scene is written in the scene text format
    together with a manifest of "filename split" lines.
    """
    if n_train < 1 or n_eval < 0:
        raise ValueError("need n_train >= 1 and n_eval >= 0")
    rng = np.random.default_rng(seed)
    scene_seeds = rng.integers(0, 2**31 - 1, size=n_train + n_eval)
    scenes = [
        generate_scene(replace(config, seed=int(s))) for s in scene_seeds
    ]
    train = scenes[:n_train]
    heldout = scenes[n_train:]
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        manifest_lines = []
        for i, (cloud, labels) in enumerate(scenes):
            name = f"scene_{i:03d}.txt"
            save_scene(cloud, labels, out_dir / name, num_classes=NUM_CLASSES)
            manifest_lines.append(f"{name} {'train' if i < n_train else 'eval'}")
        (out_dir / "manifest.txt").write_text("\n".join(manifest_lines) + "\n", encoding="ascii")
    return train, heldout


def load_manifest(
    data_dir: str | Path,
) -> tuple[list[tuple[PointCloud, np.ndarray]], list[tuple[PointCloud, np.ndarray]], int]:
    """Read every scene listed in ``manifest.txt`` under the data directory.

    Returns the train scenes, eval scenes, and the class count (the largest
    header C across all listed files).
    """
    data_dir = Path(data_dir)
    manifest = data_dir / "manifest.txt"
    if not manifest.exists():
        raise FileNotFoundError(f"no manifest.txt in {data_dir}")
    train: list[tuple[PointCloud, np.ndarray]] = []
    heldout: list[tuple[PointCloud, np.ndarray]] = []
    num_classes = 0
    for lineno, raw in enumerate(manifest.read_text(encoding="ascii").splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 2 or parts[1] not in ("train", "eval"):
            raise ValueError(f"{manifest}:{lineno}: expected 'filename train|eval'")
        path = data_dir / parts[0]
        num_classes = max(num_classes, read_scene_header(path)[1])
        scene = load_scene(path)
        (train if parts[1] == "train" else heldout).append(scene)
    if not train and not heldout:
        raise ValueError(f"{manifest}: lists no scenes")
    return train, heldout, num_classes
