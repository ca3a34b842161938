"""Mask-aware probability-level band fusion.

Band weights are development-set accuracies normalized to sum to one, with
w = 0 for bands that never reached the development evaluation and a uniform
fallback when every accuracy is zero. Fusion renormalizes the weights over a
sample's valid-band mask, so a single-band mask reproduces that band's
probabilities bit-exactly. Fusion consumes stored weights and per-band
probabilities only; it never touches model parameters.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ProtocolError
from .spectral_data import BANDS


@dataclass(frozen=True)
class EnsembleWeights:
    acc: dict[int, float] = field(default_factory=dict)
    w: dict[int, float] = field(default_factory=dict)


@dataclass(frozen=True)
class FusedDecision:
    p_ens: np.ndarray
    yhat: int
    bands_used: frozenset[int]


def band_accuracy(preds: np.ndarray, labels: np.ndarray) -> float:
    preds = np.asarray(preds)
    labels = np.asarray(labels)
    if preds.shape != labels.shape or preds.size == 0:
        raise ProtocolError("band_accuracy needs equal-length nonempty vectors")
    return float((preds == labels).mean())


def band_weights(accs: dict[int, float]) -> EnsembleWeights:
    """w_k = acc_k / sum(acc); uniform over present bands when all accs are 0."""
    for band, acc in accs.items():
        if band not in BANDS:
            raise ValueError(f"unknown band {band}")
        if not 0.0 <= acc <= 1.0:
            raise ValueError(f"accuracy out of range for band {band}: {acc}")
    total = sum(accs.values())
    w = {b: 0.0 for b in BANDS}
    if accs:
        if total > 0.0:
            for b, a in accs.items():
                w[b] = a / total
        else:
            for b in accs:
                w[b] = 1.0 / len(accs)
    return EnsembleWeights(acc=dict(accs), w=w)


def fuse(
    probs: dict[int, np.ndarray],
    weights: EnsembleWeights,
    mask: set[int] | frozenset[int],
) -> FusedDecision:
    """P_ens = sum_{k in mask} w_k P_k / sum w_k, with ties decided as attack."""
    effective = sorted(b for b in mask if b in probs)
    if not effective:
        raise ProtocolError("fusion needs at least one valid band with probabilities")
    raw = np.array([weights.w.get(b, 0.0) for b in effective], dtype=np.float64)
    total = raw.sum()
    if total > 0.0:
        norm = raw / total
    else:
        norm = np.full(len(effective), 1.0 / len(effective))
    p_ens = np.zeros(2, dtype=np.float64)
    used = []
    for nw, b in zip(norm, effective):
        if nw == 0.0:
            continue
        p = np.asarray(probs[b], dtype=np.float64)
        if p.shape != (2,):
            raise ValueError(f"band {b} probabilities must have shape (2,)")
        p_ens = p_ens + nw * p
        used.append(b)
    yhat = 1 if p_ens[1] >= p_ens[0] else 0
    return FusedDecision(p_ens=p_ens, yhat=yhat, bands_used=frozenset(used))


def decide(p_ens: np.ndarray, threshold: float = 0.5) -> int:
    """Attack iff p_attack >= threshold (the fixed 0.5 rule equals argmax)."""
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must lie in (0, 1), got {threshold}")
    p = np.asarray(p_ens, dtype=np.float64)
    if p.shape != (2,) or abs(p.sum() - 1.0) > 1e-6:
        raise ValueError("p_ens must be a 2-vector summing to 1")
    return 1 if p[1] >= threshold else 0
