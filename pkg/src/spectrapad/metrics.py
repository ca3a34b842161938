"""ISO 30107-3 style error rates on attack-probability scores.

APCER: fraction of an artefact's attack presentations accepted as bona fide
(score < threshold). BPCER: fraction of bona fide presentations rejected
(score >= threshold); the decision rule matches ensemble.decide exactly.
D-EER comes from a discrete sweep over the observed score values plus
midpoints and sentinels (no ROC interpolation), reporting (apcer+bpcer)/2 at
the |apcer-bpcer| minimizer; ties prefer the smaller mean, then the smaller
threshold. Aggregation over tested artefacts is mean and sample SD (n-1).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ProtocolError


@dataclass(frozen=True)
class ScoreSet:
    bona_scores: np.ndarray
    attack_scores: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "bona_scores", np.asarray(self.bona_scores, dtype=np.float64))
        object.__setattr__(
            self, "attack_scores", np.asarray(self.attack_scores, dtype=np.float64)
        )
        if self.bona_scores.size == 0 or self.attack_scores.size == 0:
            raise ProtocolError("score sets need both bona fide and attack scores")


def apcer_bpcer(scores: ScoreSet, threshold: float) -> tuple[float, float]:
    apcer = float((scores.attack_scores < threshold).mean())
    bpcer = float((scores.bona_scores >= threshold).mean())
    return apcer, bpcer


def hter(apcer: float, bpcer: float) -> float:
    return (apcer + bpcer) / 2.0


def _candidate_thresholds(scores: ScoreSet) -> np.ndarray:
    uniq = np.unique(np.concatenate([scores.bona_scores, scores.attack_scores]))
    mids = (uniq[:-1] + uniq[1:]) / 2.0
    return np.concatenate([[uniq[0] - 0.5], np.sort(np.concatenate([uniq, mids])),
                           [uniq[-1] + 0.5]])


def threshold_sweep(scores: ScoreSet) -> list[tuple[float, float, float]]:
    """(threshold, apcer, bpcer) rows over all candidate operating points."""
    bona = np.sort(scores.bona_scores)
    attack = np.sort(scores.attack_scores)
    out = []
    for t in _candidate_thresholds(scores):
        below_attack = int(np.searchsorted(attack, t, side="left"))
        below_bona = int(np.searchsorted(bona, t, side="left"))
        a = below_attack / attack.size
        b = (bona.size - below_bona) / bona.size
        out.append((float(t), float(a), float(b)))
    return out


def d_eer(scores: ScoreSet) -> tuple[float, float]:
    """Equal error rate and its operating threshold by exhaustive sweep."""
    best_key = None
    best = None
    for t, a, b in threshold_sweep(scores):
        key = (abs(a - b), (a + b) / 2.0, t)
        if best_key is None or key < best_key:
            best_key = key
            best = ((a + b) / 2.0, t)
    return best


def aggregate(values: list[float]) -> tuple[float, float]:
    """Arithmetic mean and sample SD; SD is 0 for a single report."""
    if not values:
        raise ProtocolError("aggregate needs at least one value")
    arr = np.asarray(values, dtype=np.float64)
    mean = float(arr.mean())
    sd = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
    return mean, sd
