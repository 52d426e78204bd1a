"""Training objectives.

Three components over row-stochastic (N, C) probability matrices:

* supervised cross-entropy on the labeled subset, summed over both
  augmented branches and averaged by the labeled count;
* consistency: mean per-point Jensen-Shannon divergence between the two
  augmented branches;
* masked consistency: mean per-point JS divergence of the masked branch
  against both unmasked branches, whose probabilities are detached so they
  act as fixed targets.

Probabilities are clamped to [1e-12, 1] before every log.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from cpcm.autodiff import Tensor
from cpcm.cloud import WeakLabels

EPS = 1e-12

OBJECTIVE_MODES = ("consis_baseline", "cpcm")


@dataclass
class LossWeights:
    alpha: float = 1.0
    beta: float = 5.0

    def __post_init__(self) -> None:
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("loss weights must be non-negative")


@dataclass
class LossBreakdown:
    seg: float
    consis: float
    mask: float
    total: float


def js_divergence(p: np.ndarray, q: np.ndarray) -> float:
    """JS divergence of two probability rows, natural log; in [0, ln 2]."""
    p = np.clip(np.asarray(p, dtype=np.float64), EPS, None)
    q = np.clip(np.asarray(q, dtype=np.float64), EPS, None)
    m = np.clip(0.5 * (p + q), EPS, None)
    return float(0.5 * np.sum(p * (np.log(p) - np.log(m)) + q * (np.log(q) - np.log(m))))


def _js_sum(p: Tensor, q: Tensor) -> Tensor:
    """Sum over all rows of JS(p[n], q[n]) as a graph op."""
    m = p.add(q).scale(0.5).clamp_min(EPS)
    ph = p.clamp_min(EPS)
    qh = q.clamp_min(EPS)
    log_m = m.log()
    t1 = ph.mul(ph.log().sub(log_m))
    t2 = qh.mul(qh.log().sub(log_m))
    return t1.add(t2).scale(0.5).sum_all()


def ce_labeled(z1: Tensor, z2: Tensor, labels: WeakLabels) -> Tensor:
    """Cross-entropy of both branches on labeled points, averaged by |S|."""
    if z1.shape != z2.shape:
        raise ValueError(f"branch shapes differ: {z1.shape} vs {z2.shape}")
    selected = labels.labeled_indices
    if selected.size == 0:
        raise ValueError("no labeled points")
    targets = labels.labels[selected]
    onehot = np.zeros((selected.size, z1.shape[1]))
    onehot[np.arange(selected.size), targets] = 1.0
    marker = Tensor(onehot)
    picked1 = z1.gather_rows(selected).clamp_min(EPS).log().mul(marker).sum_all()
    picked2 = z2.gather_rows(selected).clamp_min(EPS).log().mul(marker).sum_all()
    return picked1.add(picked2).scale(-1.0 / selected.size)


def consis_loss(z1: Tensor, z2: Tensor) -> Tensor:
    """Mean per-point JS divergence between the two branches."""
    if z1.shape != z2.shape:
        raise ValueError(f"branch shapes differ: {z1.shape} vs {z2.shape}")
    return _js_sum(z1, z2).scale(1.0 / z1.shape[0])


def mask_loss(z1: Tensor, z2: Tensor, zm: Tensor, detach_targets: bool = True) -> Tensor:
    """Mean per-point JS of the masked branch against both unmasked branches.

    The unmasked branches are detached, so gradients reach only the masked
    branch. ``detach_targets=False`` exists solely as a test hook to confirm
    the detachment changes gradients.
    """
    if not (z1.shape == z2.shape == zm.shape):
        raise ValueError(f"branch shapes differ: {z1.shape}, {z2.shape}, {zm.shape}")
    t1 = z1.detach() if detach_targets else z1
    t2 = z2.detach() if detach_targets else z2
    return _js_sum(t1, zm).add(_js_sum(t2, zm)).scale(1.0 / zm.shape[0])


def objective(
    z1: Tensor,
    z2: Tensor,
    zm: Tensor | None,
    labels: WeakLabels,
    weights: LossWeights,
    mode: str,
) -> tuple[Tensor, LossBreakdown]:
    """Combine the loss components for the selected training scheme.

    ``consis_baseline`` is seg + alpha * consis and ignores zm and beta;
    ``cpcm`` adds beta * mask and requires the masked branch.
    """
    if mode not in OBJECTIVE_MODES:
        raise ValueError(f"mode must be one of {OBJECTIVE_MODES}, got {mode!r}")
    seg = ce_labeled(z1, z2, labels)
    consis = consis_loss(z1, z2)
    total = seg.add(consis.scale(weights.alpha))
    mask_value = 0.0
    if mode == "cpcm":
        if zm is None:
            raise ValueError("cpcm objective requires the masked branch")
        masked = mask_loss(z1, z2, zm)
        total = total.add(masked.scale(weights.beta))
        mask_value = masked.item()
    breakdown = LossBreakdown(
        seg=seg.item(), consis=consis.item(), mask=mask_value, total=total.item()
    )
    return total, breakdown
