import warnings

import numpy as np
import pytest

from rdge.bandwidth import BandwidthPair, BandwidthSpec, manual_pair, select_bandwidth, select_mse_bandwidth
from rdge.core import Sample
from rdge.errors import DegeneratePilot, InsufficientData

from oracles import draw, lee_mean


def test_manual_pair_examples():
    ref = BandwidthPair(0.05, 0.10, 0.5)
    got = manual_pair(0.10, ref)
    assert (got.h, got.b, got.rho) == pytest.approx((0.10, 0.20, 0.5))
    assert manual_pair(0.05, ref) is ref
    assert manual_pair(0.033, ref).b == pytest.approx(0.066)
    with pytest.raises(ValueError):
        manual_pair(0.0, ref)


@pytest.mark.parametrize("h", [0.001, 0.07, 3.0])
def test_manual_pair_preserves_rho(h):
    ref = BandwidthPair.of(0.11, 0.19)
    assert manual_pair(h, ref).rho == ref.rho


def test_spec_validation():
    with pytest.raises(ValueError):
        BandwidthSpec(mode="manual", h=-1)
    with pytest.raises(ValueError):
        BandwidthSpec(p=2, q=2)
    assert BandwidthSpec(p=2).q == 3
    assert BandwidthSpec(vce="cluster").cluster_aware


def test_positive_deterministic_and_scale_equivariant():
    s = draw(np.random.default_rng(5), 800, lee_mean)
    a = select_mse_bandwidth(s)
    b = select_mse_bandwidth(s)
    assert a == b
    assert a.h > 0 and a.b > 0 and np.isfinite(a.h) and a.rho == pytest.approx(a.h / a.b)
    s10 = Sample(s.x * 10, s.y, cutoff=0.0)
    c = select_mse_bandwidth(s10)
    assert c.h == pytest.approx(10 * a.h, rel=1e-9)
    assert c.b == pytest.approx(10 * a.b, rel=1e-9)


def test_shift_of_cutoff_is_invariant():
    s = draw(np.random.default_rng(6), 600)
    moved = Sample(s.x + 0.3929, s.y, cutoff=0.3929)
    assert select_mse_bandwidth(moved).h == pytest.approx(select_mse_bandwidth(s).h, rel=1e-8)


def test_recomputed_per_outcome():
    s = draw(np.random.default_rng(7), 600)
    other = s.with_outcome(np.cos(4 * s.x) + 0.1 * np.random.default_rng(8).standard_normal(s.n))
    assert select_mse_bandwidth(s).h != select_mse_bandwidth(other).h


def test_more_noise_gives_wider_bandwidth():
    rng = np.random.default_rng(9)
    lo, hi = [], []
    for _ in range(60):
        x = 2 * rng.beta(2, 4, 500) - 1
        e = rng.standard_normal(500)
        m = lee_mean(x)
        lo.append(select_mse_bandwidth(Sample(x, m + 0.1 * e)).h)
        hi.append(select_mse_bandwidth(Sample(x, m + 0.2 * e)).h)
    assert np.mean(hi) > np.mean(lo)


def test_too_few_points():
    s = Sample(np.linspace(-1, 1, 10), np.zeros(10))
    with pytest.raises(InsufficientData):
        select_mse_bandwidth(s)


def test_degenerate_pilot_fallback_and_raise():
    x = np.linspace(-1, 0.5, 200)
    s = Sample(x, 1 + 2 * x + 0.7 * (x >= 0))
    with pytest.warns(RuntimeWarning):
        bw = select_mse_bandwidth(s)
    assert bw.h == pytest.approx(0.5) and bw.b == pytest.approx(0.5)
    with pytest.raises(DegeneratePilot):
        select_mse_bandwidth(s, BandwidthSpec(on_degenerate="raise"))


def test_manual_modes():
    s = draw(np.random.default_rng(10), 500)
    assert select_bandwidth(s, BandwidthSpec(mode="manual_both", h=0.2, b=0.4)) == BandwidthPair(0.2, 0.4, 0.5)
    assert select_bandwidth(s, BandwidthSpec(mode="manual", h=0.2, rho=0.8)).b == pytest.approx(0.25)
    auto = select_mse_bandwidth(s)
    got = select_bandwidth(s, BandwidthSpec(mode="manual", h=0.2))
    assert got.rho == pytest.approx(auto.rho)


def test_cluster_aware_and_weighted_change_selection():
    rng = np.random.default_rng(11)
    s = draw(rng, 600)
    cl = np.repeat(np.arange(60), 10)
    sc = s.with_clusters(cl[np.argsort(np.argsort(s.x))])
    base = select_mse_bandwidth(sc)
    assert select_mse_bandwidth(sc, BandwidthSpec(cluster_aware=True)).h != base.h
    sw = sc.with_weights(rng.uniform(0.5, 2, s.n))
    assert select_mse_bandwidth(sw, BandwidthSpec(weighted=True)).h != select_mse_bandwidth(sw).h


def test_fuzzy_selection_runs():
    rng = np.random.default_rng(12)
    s = draw(rng, 800)
    t = ((s.x < 0) ^ (rng.random(s.n) < 0.2)).astype(float)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        bw = select_bandwidth(s.with_treatment(t), BandwidthSpec(), t=t)
    assert bw.h > 0
