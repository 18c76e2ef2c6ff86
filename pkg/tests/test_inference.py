import warnings

import numpy as np
import pytest

from rdge._variance import VarianceSpec, adjust_residuals, aggregate, nn_residuals
from rdge.bandwidth import BandwidthPair
from rdge.core import Sample, fit_local_poly
from rdge.errors import LeverageOne, MissingCluster, ZeroFirstStage
from rdge.inference import (cluster_by_running_variable, robust_bias_corrected,
                            robust_bias_corrected_fuzzy, side_variance)

from oracles import draw

BW = BandwidthPair.of(0.5, 0.8)


def test_two_point_mean_closed_form():
    s = Sample([0.1, 0.2], [0.0, 2.0])
    fit = fit_local_poly(s, "right", 0, 1.0, "uniform")
    assert side_variance(fit, VarianceSpec("hc0")) == pytest.approx(0.5)
    assert side_variance(fit, VarianceSpec("hc3")) == pytest.approx(2.0)
    assert side_variance(fit, VarianceSpec("hc2")) == pytest.approx(1.0)
    assert side_variance(fit, VarianceSpec("hc1")) == pytest.approx(1.0)


def test_flavor_ordering():
    rng = np.random.default_rng(1)
    s = draw(rng, 300)
    fit = fit_local_poly(s, "left", 1, 0.4)
    v0, v2, v3 = (side_variance(fit, VarianceSpec(f)) for f in ("hc0", "hc2", "hc3"))
    assert v0 <= v2 <= v3


def test_singleton_clusters_equal_hc0():
    rng = np.random.default_rng(2)
    s = draw(rng, 400)
    sc = s.with_clusters(np.arange(s.n))
    a = robust_bias_corrected(s, 1, "triangular", BW, VarianceSpec("hc0"))
    b = robust_bias_corrected(sc, 1, "triangular", BW, VarianceSpec("cluster", small_cluster_correction=False))
    assert b.se_conventional == pytest.approx(a.se_conventional, rel=1e-12)
    assert b.se_robust == pytest.approx(a.se_robust, rel=1e-12)


def test_aggregate_matches_block_outer_products():
    rng = np.random.default_rng(3)
    a, e = rng.normal(size=30), rng.normal(size=30)
    cl = rng.integers(0, 7, 30)
    ref = sum(np.sum(a[cl == g] * e[cl == g]) ** 2 for g in np.unique(cl))
    assert aggregate(a, e, cl, correction=False) == pytest.approx(ref)
    G = np.unique(cl).size
    assert aggregate(a, e, cl, k=2) == pytest.approx(ref * G / (G - 1) * 29 / 28)


def test_nn_residuals_brute_force():
    rng = np.random.default_rng(4)
    x = np.round(rng.uniform(0, 1, 25), 1)  # many ties
    y = rng.normal(size=25)
    got = nn_residuals(x, y, 3)
    for i in range(25):
        others = sorted((abs(x[j] - x[i]), x[j], j) for j in range(25) if j != i)
        # equal distance: lower (x, index) position first
        others.sort(key=lambda t: (t[0], (t[1], t[2])))
        nb = [j for _, _, j in others[:3]]
        assert got[i] == pytest.approx(np.sqrt(3 / 4) * (y[i] - y[nb].mean()))


def test_leverage_one_names_observation():
    with pytest.raises(LeverageOne) as err:
        adjust_residuals(np.zeros(3), np.array([0.2, 1.0, 0.3]), "hc3", 1, index=np.array([7, 8, 9]))
    assert err.value.index == 8


def test_missing_cluster():
    s = draw(np.random.default_rng(5), 200)
    with pytest.raises(MissingCluster):
        robust_bias_corrected(s, 1, "triangular", BW, VarianceSpec("cluster"))


def test_cluster_by_running_variable():
    s = cluster_by_running_variable(Sample([0.35, 0.35, 0.41], [1, 2, 3]))
    assert np.unique(s.cluster).size == 2
    s = cluster_by_running_variable(Sample(np.repeat(np.linspace(0, 1, 17), 4), np.zeros(68)))
    assert np.unique(s.cluster).size == 17


def test_noiseless_linear_has_no_bias():
    x = np.linspace(-1, 1, 301)
    s = Sample(x, 1 + 2 * x + 0.7 * (x >= 0))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        r = robust_bias_corrected(s, 1, "triangular", BW, VarianceSpec("hc3"))
    assert r.tau_conventional == pytest.approx(0.7, abs=1e-8)
    assert r.bias_estimate == pytest.approx(0.0, abs=1e-8)
    assert r.tau_bias_corrected == pytest.approx(0.7, abs=1e-8)


def test_quadratic_bias_is_removed():
    x = np.linspace(-1, 1, 401)
    s = Sample(x, x**2 + 0.5 * (x >= 0))
    r = robust_bias_corrected(s, 1, "triangular", BandwidthPair.of(0.4, 0.6), VarianceSpec("hc3"))
    assert abs(r.tau_bias_corrected - 0.5) < abs(r.tau_conventional - 0.5)
    assert r.tau_bias_corrected == pytest.approx(0.5, abs=1e-10)


def test_result_invariants_and_shift():
    s = draw(np.random.default_rng(6), 800)
    r = robust_bias_corrected(s, 1, "triangular", BW)
    assert r.tau_bias_corrected == pytest.approx(r.tau_conventional - r.bias_estimate)
    assert np.mean(r.ci_robust) == pytest.approx(r.tau_bias_corrected)
    assert r.se_robust >= 0
    r2 = robust_bias_corrected(s.with_outcome(s.y + 5), 1, "triangular", BW)
    assert r2.se_robust == pytest.approx(r.se_robust, rel=1e-9)
    assert r2.tau_conventional == pytest.approx(r.tau_conventional, abs=1e-9)


def test_treated_below_flips_sign():
    s = draw(np.random.default_rng(7), 500)
    a = robust_bias_corrected(s, 1, "triangular", BW)
    b = robust_bias_corrected(s, 1, "triangular", BW, treated_below=True)
    assert b.tau_conventional == -a.tau_conventional
    assert b.ci_robust == pytest.approx((-a.ci_robust[1], -a.ci_robust[0]))


def test_robust_se_exceeds_conventional_mostly():
    rng = np.random.default_rng(8)
    wins = 0
    for _ in range(100):
        r = robust_bias_corrected(draw(rng, 500), 1, "triangular", BandwidthPair.of(0.3, 0.5))
        wins += r.se_robust >= r.se_conventional
    assert wins >= 95


def test_all_zero_nn_residuals_fall_back_to_hc3():
    x = np.repeat(np.linspace(-1, 1, 40), 5)
    y = np.repeat(np.random.default_rng(9).normal(size=40), 5)
    with pytest.warns(RuntimeWarning):
        r = robust_bias_corrected(Sample(x, y), 1, "triangular", BW)
    assert r.vce == "hc3"
    assert any("HC3" in n or "hc3" in n for n in r.notes)


# -- fuzzy --------------------------------------------------------------------


def _fuzzy_sample(rng, n=600):
    s = draw(rng, n)
    t = ((s.x >= 0) ^ (rng.random(n) < 0.25)).astype(float)
    return s.with_outcome(s.y + 0.8 * t).with_treatment(t)


def test_fuzzy_ratio_identity():
    rng = np.random.default_rng(10)
    for _ in range(20):
        s = _fuzzy_sample(rng)
        f = robust_bias_corrected_fuzzy(s, 1, "triangular", BW)
        y = robust_bias_corrected(s, 1, "triangular", BW)
        t = robust_bias_corrected(s.with_outcome(s.t), 1, "triangular", BW)
        assert f.tau_conventional == pytest.approx(y.tau_conventional / t.tau_conventional, rel=1e-12)
        assert f.tau_bias_corrected == pytest.approx(y.tau_bias_corrected / t.tau_bias_corrected, rel=1e-12)


def test_fuzzy_constructed_ratio():
    x = np.linspace(-1, 1, 200)
    t = np.where(x >= 0, 0.75, 0.25) + 0.0
    y = 0.6 * (x >= 0) + 0.1 * x
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        r = robust_bias_corrected_fuzzy(Sample(x, y, t=t), 1, "triangular", BW, VarianceSpec("hc3"))
    assert r.tau_conventional == pytest.approx(1.2, abs=1e-10)


def test_sharp_compliance_equals_sharp():
    s = draw(np.random.default_rng(11), 600)
    t = (s.x >= 0).astype(float)
    f = robust_bias_corrected_fuzzy(s.with_treatment(t), 1, "triangular", BW)
    r = robust_bias_corrected(s, 1, "triangular", BW)
    assert f.tau_conventional == pytest.approx(r.tau_conventional, abs=1e-12)
    assert f.tau_bias_corrected == pytest.approx(r.tau_bias_corrected, abs=1e-12)


def test_zero_first_stage():
    x = np.linspace(-1, 1, 100)
    s = Sample(x, x, t=np.ones(100))
    with pytest.raises(ZeroFirstStage):
        robust_bias_corrected_fuzzy(s, 1, "triangular", BW, VarianceSpec("hc3"))


def test_weak_first_stage_noted():
    rng = np.random.default_rng(12)
    s = draw(rng, 400)
    t = (rng.random(s.n) < 0.5 + 0.03 * (s.x >= 0)).astype(float)
    r = robust_bias_corrected_fuzzy(s.with_treatment(t), 1, "triangular", BW)
    assert abs(r.first_stage_t) < 3.16
    assert any("weak first stage" in n for n in r.notes)
