"""Training objectives: class-balanced cross-entropy, the batch contrastive
loss over normalized features, and their fixed-coefficient combination.

The canonical class weights are w_c = (N0 + N1) / (2 * N_c); the raw
inverse-frequency form 1/freq_c differs from it by an overall factor of 2
and is available behind `raw_inverse_freq` for completeness. The push term
of the contrastive loss is an unclamped -log of squared distances, so the
total loss may legitimately go negative.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor
from .errors import ProtocolError


@dataclass(frozen=True)
class ClassWeights:
    w0: float
    w1: float


@dataclass(frozen=True)
class LossConfig:
    lam: float = 0.1
    eps: float = 1e-6

    def __post_init__(self):
        if self.lam < 0 or self.eps <= 0:
            raise ValueError("lambda must be >= 0 and epsilon > 0")


def class_weights(n0: int, n1: int, raw_inverse_freq: bool = False) -> ClassWeights:
    if n0 < 1 or n1 < 1:
        raise ProtocolError(f"training needs both classes, got n0={n0}, n1={n1}")
    total = n0 + n1
    if raw_inverse_freq:
        return ClassWeights(w0=total / n0, w1=total / n1)
    return ClassWeights(w0=total / (2.0 * n0), w1=total / (2.0 * n1))


def _check_labels(labels: np.ndarray) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.ndim != 1 or not np.isin(labels, (0, 1)).all():
        raise ValueError("labels must be a flat vector of 0/1")
    return labels.astype(np.int64)


def balanced_ce(probs: Tensor, labels: np.ndarray, weights: ClassWeights) -> Tensor:
    """-(1/M) sum_i w_{y_i} log P_i[y_i], log clamped below at 1e-12."""
    labels = _check_labels(labels)
    m = probs.shape[0]
    if labels.shape[0] != m:
        raise ValueError("probs and labels disagree on batch size")
    row_sums = probs.data.sum(axis=-1)
    if np.abs(row_sums - 1.0).max() > 1e-6:
        raise ValueError("probability rows must sum to 1")
    onehot = np.zeros((m, 2), dtype=probs.data.dtype)
    onehot[np.arange(m), labels] = 1.0
    p_true = (probs * Tensor(onehot)).sum(axis=-1)
    w = np.where(labels == 0, weights.w0, weights.w1).astype(probs.data.dtype)
    return (p_true.clamp_min(1e-12).log() * Tensor(w)).sum() * (-1.0 / m)


def contrastive(features: Tensor, labels: np.ndarray, eps: float = 1e-6) -> Tensor:
    """Pull same-class squared distances together, push cross-class apart.

    (1/M) sum_i [ sum_{j: y_j=y_i} ||F_i-F_j||^2 / count(y_i)
                  - sum_{j: y_j!=y_i} log(||F_i-F_j||^2 + eps) ].
    The same-class sum includes j = i (a zero contribution, kept as written).
    """
    labels = _check_labels(labels)
    m, d = features.shape
    if labels.shape[0] != m:
        raise ValueError("features and labels disagree on batch size")
    diff = features.reshape(m, 1, d) - features.reshape(1, m, d)
    sq = (diff * diff).sum(axis=-1)  # exact zeros on the diagonal

    same = (labels[:, None] == labels[None, :]).astype(features.data.dtype)
    counts = same.sum(axis=1)  # count(y_i), includes self
    pull = (sq * Tensor(same / counts[:, None])).sum()
    push_mask = 1.0 - same
    push = ((sq + eps).log() * Tensor(push_mask)).sum()
    return (pull - push) * (1.0 / m)


def band_loss(
    probs: Tensor,
    labels: np.ndarray,
    features: Tensor,
    weights: ClassWeights,
    cfg: LossConfig = LossConfig(),
) -> Tensor:
    """balanced_ce + lambda * contrastive; the contrastive branch is skipped
    entirely at lambda = 0 so an ablated run's loss equals the CE term exactly."""
    ce = balanced_ce(probs, labels, weights)
    if cfg.lam == 0.0:
        return ce
    return ce + cfg.lam * contrastive(features, labels, cfg.eps)
