"""Toy point-wise segmentation network with shared weights across branches.

Per-point input features are centroid-centered, diagonal-scaled xyz plus
rgb. An embedding layer feeds a stack of neighborhood blocks, each of which
concatenates the point feature with the mean feature of its k nearest
neighbors and applies linear + relu; a final linear layer emits class
logits. Neighborhoods come from exact brute-force k-NN with ties broken by
the smaller point index, so the forward pass is deterministic and
permutation-equivariant.

The k-NN graph depends only on pairwise distance ratios, which every
augmentation here preserves (uniform scale, rotation, mirror, shift), so
callers training several branches of the same scene may build one
``neighbor_averager`` and pass it to every ``forward``.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse

from cpcm.autodiff import Tensor
from cpcm.cloud import PointCloud, bounding_box

CHECKPOINT_HEADER = "cpcm-params v1"
INPUT_DIM = 6


@dataclass
class ModelConfig:
    num_classes: int
    hidden_dim: int = 32
    num_blocks: int = 2
    k_neighbors: int = 8
    init_seed: int = 0

    def __post_init__(self) -> None:
        if min(self.num_classes, self.hidden_dim, self.num_blocks, self.k_neighbors) < 1:
            raise ValueError("all model dimensions must be positive")


class ModelParams:
    """Named parameter tensors plus the config they were built for."""

    def __init__(self, config: ModelConfig, tensors: dict[str, Tensor]):
        self.config = config
        self.tensors = tensors

    def items(self):
        return self.tensors.items()

    def zero_grad(self) -> None:
        for t in self.tensors.values():
            t.zero_grad()

    def copy(self) -> "ModelParams":
        return ModelParams(
            self.config,
            {k: Tensor(v.values.copy(), requires_grad=True) for k, v in self.tensors.items()},
        )


def _layer_dims(config: ModelConfig) -> list[tuple[str, int, int]]:
    h = config.hidden_dim
    dims = [("embed", INPUT_DIM, h)]
    dims += [(f"block{i}", 2 * h, h) for i in range(config.num_blocks)]
    dims.append(("head", h, config.num_classes))
    return dims


def init(config: ModelConfig) -> ModelParams:
    """Glorot-uniform weights, zero biases; deterministic per init_seed."""
    rng = np.random.default_rng(config.init_seed)
    tensors: dict[str, Tensor] = {}
    for name, fan_in, fan_out in _layer_dims(config):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        tensors[f"{name}.w"] = Tensor(
            rng.uniform(-bound, bound, size=(fan_in, fan_out)), requires_grad=True
        )
        tensors[f"{name}.b"] = Tensor(np.zeros((1, fan_out)), requires_grad=True)
    return ModelParams(config, tensors)


def knn_indices(positions: np.ndarray, k: int, chunk: int = 512) -> np.ndarray:
    """Exact k nearest neighbors per point (self included), ties to smaller index."""
    positions = np.asarray(positions, dtype=np.float64)
    n = positions.shape[0]
    k = min(k, n)
    out = np.empty((n, k), dtype=np.int64)
    for start in range(0, n, chunk):
        block = positions[start : start + chunk]
        d2 = ((block[:, None, :] - positions[None, :, :]) ** 2).sum(axis=2)
        out[start : start + block.shape[0]] = np.argsort(d2, axis=1, kind="stable")[:, :k]
    return out


class NeighborAverager:
    """Sparse row-stochastic operator taking each point to its k-NN feature mean."""

    def __init__(self, indices: np.ndarray):
        indices = np.asarray(indices, dtype=np.int64)
        if indices.ndim != 2:
            raise ValueError("neighbor indices must be (N, k)")
        n, k = indices.shape
        if indices.size and (indices.min() < 0 or indices.max() >= n):
            raise ValueError("neighbor indices out of range")
        self.indices = indices
        data = np.full(n * k, 1.0 / k)
        indptr = np.arange(0, n * k + 1, k)
        self._matrix = scipy.sparse.csr_matrix((data, indices.ravel(), indptr), shape=(n, n))
        self._adjoint = self._matrix.T.tocsr()

    def apply(self, values: np.ndarray) -> np.ndarray:
        return self._matrix @ values

    def apply_adjoint(self, grad: np.ndarray) -> np.ndarray:
        return self._adjoint @ grad


def neighbor_averager(cloud: PointCloud, k: int) -> NeighborAverager:
    """k-NN averaging operator for a cloud.

    Neighborhoods depend only on distance ratios, so one operator serves every
    similarity-transformed or color-masked view of the same points.
    """
    return NeighborAverager(knn_indices(cloud.positions, k))


def point_features(cloud: PointCloud) -> np.ndarray:
    """Centered and diagonal-normalized xyz concatenated with rgb."""
    centroid = cloud.positions.mean(axis=0)
    diag = bounding_box(cloud).diagonal
    scale = diag if diag > 0 else 1.0
    return np.hstack([(cloud.positions - centroid) / scale, cloud.colors])


def forward(
    params: ModelParams, cloud: PointCloud, neighbors: NeighborAverager | None = None
) -> Tensor:
    """Per-point class logits, shape (N, C)."""
    if cloud.n < 1:
        raise ValueError("forward needs a non-empty cloud")
    cfg = params.config
    if neighbors is None:
        neighbors = neighbor_averager(cloud, cfg.k_neighbors)
    t = params.tensors
    h = Tensor(point_features(cloud)).matmul(t["embed.w"]).add(t["embed.b"]).relu()
    for i in range(cfg.num_blocks):
        pooled = h.linear_map(neighbors)
        h = h.concat_cols(pooled).matmul(t[f"block{i}.w"]).add(t[f"block{i}.b"]).relu()
    return h.matmul(t["head.w"]).add(t["head.b"])


def save_params(params: ModelParams, path) -> None:
    """Versioned text checkpoint: config line, then one block per tensor."""
    cfg = params.config
    path = Path(path)
    with path.open("w", encoding="ascii", newline="\n") as fh:
        fh.write(f"{CHECKPOINT_HEADER}\n")
        fh.write(
            "config"
            f" num_classes={cfg.num_classes}"
            f" hidden_dim={cfg.hidden_dim}"
            f" num_blocks={cfg.num_blocks}"
            f" k_neighbors={cfg.k_neighbors}"
            f" init_seed={cfg.init_seed}\n"
        )
        for name, tensor in params.items():
            rows, cols = tensor.shape
            fh.write(f"param {name} {rows} {cols}\n")
            for row in tensor.values:
                fh.write(" ".join(f"{v:.17g}" for v in row) + "\n")


def load_params(path) -> ModelParams:
    path = Path(path)
    with path.open("r", encoding="ascii") as fh:
        lines = [line.rstrip("\n") for line in fh]
    if not lines or lines[0] != CHECKPOINT_HEADER:
        raise ValueError(f"{path}: not a '{CHECKPOINT_HEADER}' checkpoint")
    if len(lines) < 2 or not lines[1].startswith("config "):
        raise ValueError(f"{path}: missing config line")
    fields = dict(item.split("=", 1) for item in lines[1].split()[1:])
    config = ModelConfig(
        num_classes=int(fields["num_classes"]),
        hidden_dim=int(fields["hidden_dim"]),
        num_blocks=int(fields["num_blocks"]),
        k_neighbors=int(fields["k_neighbors"]),
        init_seed=int(fields["init_seed"]),
    )
    tensors: dict[str, Tensor] = {}
    i = 2
    while i < len(lines):
        if not lines[i]:
            i += 1
            continue
        head = lines[i].split()
        if head[0] != "param" or len(head) != 4:
            raise ValueError(f"{path}: bad param header at line {i + 1}")
        name, rows, cols = head[1], int(head[2]), int(head[3])
        block = lines[i + 1 : i + 1 + rows]
        values = np.array([[float(v) for v in line.split()] for line in block])
        if values.shape != (rows, cols):
            raise ValueError(f"{path}: tensor {name} has wrong shape")
        tensors[name] = Tensor(values, requires_grad=True)
        i += 1 + rows
    expected = [f"{n}.{s}" for n, _, _ in _layer_dims(config) for s in ("w", "b")]
    if list(tensors) != expected:
        raise ValueError(f"{path}: parameter set does not match config")
    return ModelParams(config, tensors)
