"""separability: FB distance, median heuristic, unbiased MMD^2, Spearman."""

import math

import numpy as np
import pytest

from spectrapad.errors import ProtocolError
from spectrapad.separability import (
    correlate_metrics,
    fb_distance,
    median_heuristic,
    mmd2_unbiased,
    spearman_jackknife,
)

import oracles


# -- Fisher-Bhattacharyya -----------------------------------------------------


def test_fb_identical_statistics_zero():
    a = np.array([[0.0, 1.0], [2.0, 3.0], [4.0, 5.0]])
    assert fb_distance(a, a.copy()) == pytest.approx(0.0, abs=1e-12)


def test_fb_univariate_mean_gap_case():
    # population stats: class0 mu=0 var=1, class1 mu=2 var=1
    c0 = np.array([[-1.0], [1.0]])
    c1 = np.array([[1.0], [3.0]])
    assert fb_distance(c0, c1) == pytest.approx(0.5, abs=1e-9)


def test_fb_univariate_variance_case():
    c0 = np.array([[-1.0], [1.0]])       # var 1
    c1 = np.array([[-2.0], [2.0]])       # var 4
    want = 0.5 * math.log(5.0 / 4.0)     # ~0.11157
    assert fb_distance(c0, c1) == pytest.approx(want, abs=1e-9)
    assert fb_distance(c0, c1) == pytest.approx(0.1116, abs=1e-4)


def test_fb_sum_vs_mean_reduction():
    rng = np.random.default_rng(0)
    a = rng.standard_normal((30, 6))
    b = rng.standard_normal((30, 6)) + 1.0
    assert fb_distance(a, b, reduce="sum") == pytest.approx(
        6 * fb_distance(a, b, reduce="mean"), rel=1e-12
    )


def test_fb_symmetry_and_invariances():
    rng = np.random.default_rng(1)
    a = rng.standard_normal((20, 4))
    b = 2.0 + 0.5 * rng.standard_normal((25, 4))
    base = fb_distance(a, b)
    assert fb_distance(b, a) == base
    shift = rng.standard_normal(4)
    assert fb_distance(a + shift, b + shift) == pytest.approx(base, rel=1e-9)
    assert fb_distance(3.0 * a, 3.0 * b) == pytest.approx(base, rel=1e-9)


def test_fb_requires_two_samples_per_class():
    with pytest.raises(ValueError):
        fb_distance(np.ones((1, 3)), np.ones((5, 3)))


# -- median heuristic ------------------------------------------------------------


def test_median_two_points():
    assert median_heuristic(np.array([[0.0], [3.0]])) == pytest.approx(3.0, abs=1e-12)


def test_median_collinear_three_points():
    got = median_heuristic(np.array([[0.0], [1.0], [3.0]]))
    assert got == pytest.approx(2.0, abs=1e-12)  # distances {1, 2, 3}


def test_median_excludes_zero_distances():
    got = median_heuristic(np.array([[0.0], [0.0], [5.0]]))
    assert got == pytest.approx(5.0, abs=1e-12)


def test_median_all_identical_degenerate():
    with pytest.raises(ProtocolError):
        median_heuristic(np.ones((4, 2)))


def test_median_matches_exhaustive_oracle():
    rng = np.random.default_rng(2)
    pts = rng.standard_normal((1000, 4))
    dists = []
    for i in range(len(pts)):
        for j in range(i + 1, len(pts)):
            dists.append(math.dist(pts[i], pts[j]))
    assert median_heuristic(pts) == float(np.median(dists))


# -- MMD^2 -------------------------------------------------------------------------


def test_mmd_identical_point_sets_zero_exactly():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((12, 5))
    assert mmd2_unbiased(x, x.copy(), bandwidth=1.3) == 0.0


def test_mmd_two_sample_hand_expansion():
    rng = np.random.default_rng(4)
    x = rng.standard_normal((2, 3))
    y = rng.standard_normal((2, 3))
    bw = 0.8
    got = mmd2_unbiased(x, y, bw)
    assert got == pytest.approx(oracles.mmd2_hand_n2(x, y, bw), abs=1e-12)


def test_mmd_far_singleton_clusters_near_two():
    rng = np.random.default_rng(5)
    bw = 1.0
    x = rng.normal(0.0, 0.05, (50, 2))
    y = rng.normal(0.0, 0.05, (50, 2)) + np.array([100.0, 0.0])  # 100 sigma apart
    got = mmd2_unbiased(x, y, bw)
    assert 1.9 <= got <= 2.0


def test_mmd_symmetry_and_negativity():
    rng = np.random.default_rng(6)
    x = rng.standard_normal((15, 3))
    y = rng.standard_normal((18, 3))
    assert mmd2_unbiased(x, y, 1.0) == pytest.approx(mmd2_unbiased(y, x, 1.0), abs=1e-15)
    vals = []
    for seed in range(40):
        r = np.random.default_rng(seed)
        vals.append(mmd2_unbiased(r.standard_normal((6, 2)), r.standard_normal((6, 2)), 1.0))
    assert min(vals) < 0.0, "unbiased estimator should go negative on overlapping samples"


def test_mmd_parameter_validation():
    x = np.zeros((3, 2))
    with pytest.raises(ValueError):
        mmd2_unbiased(x, x, bandwidth=0.0)
    with pytest.raises(ValueError):
        mmd2_unbiased(np.zeros((1, 2)), x, bandwidth=1.0)


# -- Spearman with jackknife ----------------------------------------------------------


def test_spearman_perfect_monotone():
    xs = np.arange(7.0)
    res = spearman_jackknife(xs, xs * 3.0 + 1.0)
    assert res.rho == pytest.approx(1.0, abs=1e-12)
    assert (res.ci_lo, res.ci_hi) == (1.0, 1.0)
    assert res.p == pytest.approx(2.0 / math.factorial(7), abs=1e-12)


def test_spearman_perfect_decreasing():
    xs = np.arange(6.0)
    res = spearman_jackknife(xs, -xs)
    assert res.rho == pytest.approx(-1.0, abs=1e-12)


def test_spearman_scrambled_matches_permutation_oracle():
    xs = np.arange(1.0, 8.0)
    ys = np.array([3.0, 1.0, 4.0, 7.0, 5.0, 2.0, 6.0])
    res = spearman_jackknife(xs, ys)
    assert res.rho == pytest.approx(oracles.spearman_rho_oracle(xs, ys), abs=1e-12)
    # no-ties formula: sum d^2 = 4+1+1+9+0+16+1 = 32
    assert res.rho == pytest.approx(1 - 6 * 32 / (7 * 48), abs=1e-12)
    assert res.p == pytest.approx(oracles.spearman_exact_p_oracle(xs, ys), abs=1e-12)
    assert res.ci_lo <= res.rho <= res.ci_hi


def test_spearman_monotone_transform_invariance():
    rng = np.random.default_rng(7)
    xs = rng.standard_normal(9)
    ys = rng.standard_normal(9)
    base = spearman_jackknife(xs, ys)
    warped = spearman_jackknife(np.exp(xs), ys**3)
    assert warped.rho == pytest.approx(base.rho, abs=1e-12)


def test_spearman_t_approximation_branch():
    rng = np.random.default_rng(8)
    xs = rng.standard_normal(20)
    ys = xs + 0.5 * rng.standard_normal(20)
    res = spearman_jackknife(xs, ys)
    assert 0.0 <= res.p <= 1.0 and res.p < 0.05
    assert res.ci_lo <= res.rho <= res.ci_hi


def test_spearman_rejects_constant_or_short_input():
    with pytest.raises(ProtocolError):
        spearman_jackknife(np.ones(5), np.arange(5.0))
    with pytest.raises(ValueError):
        spearman_jackknife(np.arange(3.0), np.arange(3.0))


# -- correlation table ------------------------------------------------------------------


def _rows(k=7, seed=9):
    rng = np.random.default_rng(seed)
    rows = []
    for _ in range(k):
        eer = float(rng.random())
        rows.append(
            {"d_fb": 1.0 - eer + 0.01 * rng.random(), "mmd2": float(rng.random()),
             "eer": eer, "hter": eer * 0.8 + 0.1 * rng.random()}
        )
    return rows


def test_correlate_metrics_four_rows_over_seven_artefacts():
    table = correlate_metrics(_rows())
    assert [r["metric_pair"] for r in table] == [
        "d_fb_vs_eer", "d_fb_vs_hter", "mmd2_vs_eer", "mmd2_vs_hter",
    ]
    for r in table:
        assert r["ci_lo"] <= r["rho"] <= r["ci_hi"]
        assert 0.0 <= r["p"] <= 1.0


def test_correlate_metrics_identity_pair_rho_one():
    rows = _rows()
    for r in rows:
        r["d_fb"] = r["eer"]
    table = correlate_metrics(rows)
    assert table[0]["rho"] == pytest.approx(1.0, abs=1e-12)


def test_correlate_metrics_needs_four_artefacts():
    with pytest.raises(ProtocolError):
        correlate_metrics(_rows(k=3))
