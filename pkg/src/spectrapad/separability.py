"""Feature-space separability statistics and their correlation with PAD error.

Fisher-Bhattacharyya distance is evaluated per feature dimension with the
univariate formula and summed across dimensions by default (a mean-across-
dimensions variant is available). MMD^2 uses an RBF kernel
k(x, y) = exp(-||x-y||^2 / (2 sigma^2)) with the bandwidth from the median
heuristic on pooled features, and the unbiased U-statistic estimator whose
cross term excludes index-paired points, so two identical, identically
ordered samples give exactly zero and overlapping samples may go negative.
Spearman rho comes with jackknife 95% confidence intervals and an exact
permutation p-value for K <= 8 points (t approximation above that).
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import permutations

import numpy as np
from scipy.stats import rankdata
from scipy.stats import t as t_dist

from .errors import ProtocolError

VAR_FLOOR = 1e-12


@dataclass(frozen=True)
class SpearmanResult:
    rho: float
    ci_lo: float
    ci_hi: float
    p: float


def _class_matrix(x, name) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] < 2:
        raise ValueError(f"{name} needs a (n >= 2, d) matrix, got shape {arr.shape}")
    return arr


def fb_distance(class0, class1, reduce: str = "sum") -> float:
    """Per-dimension Fisher-Bhattacharyya distance, aggregated over dimensions.

    D = (1/8)(mu0-mu1)^2 / ((v0+v1)/2) + (1/2) ln((v0+v1) / (2 s0 s1)),
    with population variances floored at 1e-12.
    """
    a = _class_matrix(class0, "class0")
    b = _class_matrix(class1, "class1")
    if a.shape[1] != b.shape[1]:
        raise ValueError("classes disagree on feature dimension")
    if reduce not in ("sum", "mean"):
        raise ValueError("reduce must be 'sum' or 'mean'")
    mu0 = a.mean(axis=0)
    mu1 = b.mean(axis=0)
    v0 = np.maximum(a.var(axis=0), VAR_FLOOR)
    v1 = np.maximum(b.var(axis=0), VAR_FLOOR)
    gap = 0.125 * (mu0 - mu1) ** 2 / ((v0 + v1) / 2.0)
    overlap = 0.5 * np.log((v0 + v1) / (2.0 * np.sqrt(v0) * np.sqrt(v1)))
    per_dim = gap + overlap
    return float(per_dim.sum() if reduce == "sum" else per_dim.mean())


def median_heuristic(pooled) -> float:
    """Median pairwise Euclidean distance over the pooled features (i < j),
    excluding zero distances unless every pair coincides."""
    x = _class_matrix(pooled, "pooled")
    sq = np.sum(x * x, axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (x @ x.T)
    iu = np.triu_indices(x.shape[0], k=1)
    dists = np.sqrt(np.maximum(d2[iu], 0.0))
    nonzero = dists[dists > 0.0]
    if nonzero.size == 0:
        raise ProtocolError("all pooled points coincide; bandwidth is degenerate")
    return float(np.median(nonzero))


def _kernel(x: np.ndarray, y: np.ndarray, bandwidth: float) -> np.ndarray:
    sx = np.sum(x * x, axis=1)
    sy = np.sum(y * y, axis=1)
    d2 = np.maximum(sx[:, None] + sy[None, :] - 2.0 * (x @ y.T), 0.0)
    return np.exp(-d2 / (2.0 * bandwidth * bandwidth))


def mmd2_unbiased(class0, class1, bandwidth: float) -> float:
    """Unbiased MMD^2 with diagonal-free within- and cross-terms.

    sum_{i != j} k(x_i, x_j) / (n0 (n0-1)) + sum_{i != j} k(y_i, y_j) / (n1 (n1-1))
    - 2 sum_{i != j} k(x_i, y_j) / (n0 n1 - min(n0, n1)).
    Every cross pair shares the expectation E k(X, Y) under independence, so
    dropping the index-paired diagonal keeps the estimator unbiased while
    making mmd2(A, A) identically zero.
    """
    if bandwidth <= 0.0:
        raise ValueError(f"bandwidth must be positive, got {bandwidth}")
    x = _class_matrix(class0, "class0")
    y = _class_matrix(class1, "class1")
    n0 = x.shape[0]
    n1 = y.shape[0]
    kxx = _kernel(x, x, bandwidth)
    kyy = _kernel(y, y, bandwidth)
    kxy = _kernel(x, y, bandwidth)
    within_x = (kxx.sum() - np.trace(kxx)) / (n0 * (n0 - 1))
    within_y = (kyy.sum() - np.trace(kyy)) / (n1 * (n1 - 1))
    m = min(n0, n1)
    cross_sum = kxy.sum() - np.trace(kxy[:m, :m])
    cross = cross_sum / (n0 * n1 - m)
    return float(within_x + within_y - 2.0 * cross)


def _spearman_rho(xs: np.ndarray, ys: np.ndarray) -> float:
    rx = rankdata(xs, method="average")
    ry = rankdata(ys, method="average")
    rx = rx - rx.mean()
    ry = ry - ry.mean()
    denom = np.sqrt((rx * rx).sum() * (ry * ry).sum())
    if denom == 0.0:
        raise ProtocolError("correlation undefined for constant input")
    return float((rx * ry).sum() / denom)


def spearman_jackknife(xs, ys) -> SpearmanResult:
    """Spearman rho with jackknife 95% CI and permutation/t p-value.

    Exact two-sided permutation p over all K! orderings when K <= 8;
    t approximation with K-2 degrees of freedom otherwise. The jackknife
    SE uses the standard (K-1)/K-scaled leave-one-out variance and the CI
    rho +- 1.96 SE is clipped to [-1, 1].
    """
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    k = xs.size
    if ys.size != k or k < 4:
        raise ValueError("need matched vectors with K >= 4")
    rho = _spearman_rho(xs, ys)

    loo = np.empty(k)
    for i in range(k):
        keep = np.arange(k) != i
        loo[i] = _spearman_rho(xs[keep], ys[keep])
    se = np.sqrt((k - 1) / k * ((loo - loo.mean()) ** 2).sum())
    ci_lo = float(np.clip(rho - 1.96 * se, -1.0, 1.0))
    ci_hi = float(np.clip(rho + 1.96 * se, -1.0, 1.0))

    if k <= 8:
        obs = abs(rho)
        hits = 0
        total = 0
        for perm in permutations(range(k)):
            total += 1
            if abs(_spearman_rho(xs, ys[list(perm)])) >= obs - 1e-12:
                hits += 1
        p = hits / total
    else:
        if abs(rho) >= 1.0:
            p = 0.0
        else:
            t = rho * np.sqrt((k - 2) / (1.0 - rho * rho))
            p = float(2.0 * t_dist.sf(abs(t), df=k - 2))
    return SpearmanResult(rho=rho, ci_lo=ci_lo, ci_hi=ci_hi, p=p)


METRIC_PAIRS = (
    ("d_fb", "eer"),
    ("d_fb", "hter"),
    ("mmd2", "eer"),
    ("mmd2", "hter"),
)


def correlate_metrics(per_artefact: list[dict[str, float]]) -> list[dict]:
    """Four Spearman rows (D_FB/MMD^2 against EER/HTER) over tested artefacts."""
    if len(per_artefact) < 4:
        raise ProtocolError(
            f"need >= 4 tested artefacts for rank correlation, got {len(per_artefact)}"
        )
    rows = []
    for feat, err in METRIC_PAIRS:
        xs = [r[feat] for r in per_artefact]
        ys = [r[err] for r in per_artefact]
        res = spearman_jackknife(xs, ys)
        rows.append(
            {
                "metric_pair": f"{feat}_vs_{err}",
                "rho": res.rho,
                "ci_lo": res.ci_lo,
                "ci_hi": res.ci_hi,
                "p": res.p,
            }
        )
    return rows
