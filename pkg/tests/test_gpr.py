from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from channelsearch.gpr import (BeliefMap, FastGprConfig, GprCache, GprError, KernelConfig, Measurement,
                               fit_predict, incremental_update, kernel, kernel_matrix)

from conftest import make_grid

SE = KernelConfig(form="squared-exponential")


def full_gpr(points, ms, cfg, kcfg):
    """Exact GP posterior on all measurements (oracle)."""
    x = np.array([m.position for m in ms])
    y = np.array([m.depth for m in ms]) - cfg.prior_mean
    gram = cfg.prior_variance * kernel_matrix(x, x, kcfg) + np.diag(
        [cfg.noise_variance / m.count + cfg.jitter for m in ms])
    cross = cfg.prior_variance * kernel_matrix(x, points, kcfg)
    mean = cfg.prior_mean + cross.T @ np.linalg.solve(gram, y)
    var = cfg.prior_variance - np.einsum("ij,ij->j", cross, np.linalg.solve(gram, cross))
    return mean, var


def random_measurements(rng, n, extent, agent=0):
    return [Measurement(tuple(rng.uniform(0, extent, 2)), float(rng.uniform(6, 26)), float(t), agent)
            for t in range(n)]


def smooth_measurements(rng, n, extent):
    """Samples of a smooth depth surface with 0.2 ft sensor noise."""
    out = []
    for t in range(n):
        x, y = rng.uniform(0, extent, 2)
        depth = 16 + 6 * math.sin(x / 25) * math.cos(y / 35) + rng.normal(0, 0.2)
        out.append(Measurement((float(x), float(y)), float(depth), float(t), 0))
    return out


def test_kernel_examples():
    lit = KernelConfig()
    l = lit.length_scale_m
    assert kernel((0, 0), (0, 0)) == 1.0
    assert kernel((0, 0), (2 * l * l, 0), lit) == pytest.approx(math.exp(-1))
    assert kernel((0, 0), (l * math.sqrt(2), 0), SE) == pytest.approx(math.exp(-1))
    assert KernelConfig(length_scale_ft=28.8).length_scale_m == pytest.approx(8.77824)
    with pytest.raises(ValueError):
        KernelConfig(length_scale_ft=0)


@settings(max_examples=50, deadline=None)
@given(a=st.tuples(st.floats(-100, 100), st.floats(-100, 100)),
       b=st.tuples(st.floats(-100, 100), st.floats(-100, 100)),
       form=st.sampled_from(["paper-literal", "squared-exponential"]))
def test_kernel_symmetric_bounded(a, b, form):
    cfg = KernelConfig(form=form)
    k = kernel(a, b, cfg)
    assert k == kernel(b, a, cfg)
    assert 0 <= k <= 1
    if a == b:
        assert k == 1.0


@settings(max_examples=30, deadline=None)
@given(d1=st.floats(0, 50), d2=st.floats(0, 50), form=st.sampled_from(["paper-literal", "squared-exponential"]))
def test_kernel_decreasing(d1, d2, form):
    cfg = KernelConfig(form=form)
    lo, hi = sorted((d1, d2))
    if hi - lo > 1e-6:
        assert kernel((0, 0), (hi, 0), cfg) < kernel((0, 0), (lo, 0), cfg)


@settings(max_examples=25, deadline=None)
@given(n=st.integers(1, 50), seed=st.integers(0, 10**6), form=st.sampled_from(["paper-literal", "squared-exponential"]))
def test_gram_psd(n, seed, form):
    rng = np.random.default_rng(seed)
    pts = np.unique(rng.uniform(0, 60, (n, 2)), axis=0)
    g = kernel_matrix(pts, pts, KernelConfig(form=form))
    assert np.array_equal(g, g.T)
    assert np.linalg.eigvalsh(g).min() >= -1e-8
    assert np.linalg.eigvalsh(g + 1e-6 * np.eye(len(pts))).min() > 0


def test_empty_is_prior(small_grid):
    cfg = FastGprConfig()
    b = fit_predict([], small_grid, cfg)
    assert np.all(b.mean == cfg.prior_mean) and np.all(b.variance == cfg.prior_variance)


def test_single_measurement_interpolates(small_grid):
    cfg = FastGprConfig(noise_variance=0.0, jitter=1e-12)
    b = fit_predict([Measurement((50, 50), 20.0, 0.0, 0)], small_grid, cfg)
    cell = 2 * 5 + 2
    assert b.mean[cell] == pytest.approx(20.0, abs=1e-6)
    assert b.variance[cell] < 1e-6


@pytest.mark.parametrize("form", ["paper-literal", "squared-exponential"])
def test_fast_vs_full(form):
    grid = make_grid(5, 5)
    ms = smooth_measurements(np.random.default_rng(1), 50, 100)
    kcfg = KernelConfig(form=form)
    fast = fit_predict(ms, grid, FastGprConfig(subset_count=4, subset_size=20), kcfg)
    exact, _ = full_gpr(grid.centers, ms, FastGprConfig(), kcfg)
    full = fit_predict(ms, grid, FastGprConfig(subset_count=1, subset_size=50), kcfg)
    assert np.allclose(full.mean, exact, atol=1e-8)
    assert np.sqrt(np.mean((fast.mean - full.mean) ** 2)) <= 0.5


@settings(max_examples=25, deadline=None)
@given(n=st.integers(0, 40), seed=st.integers(0, 10**6), k=st.integers(1, 4), ns=st.integers(1, 30),
       form=st.sampled_from(["paper-literal", "squared-exponential"]))
def test_posterior_variance_below_prior(n, seed, k, ns, form):
    grid = make_grid(4, 4)
    cfg = FastGprConfig(subset_count=k, subset_size=ns)
    ms = random_measurements(np.random.default_rng(seed), n, 80)
    b = fit_predict(ms, grid, cfg, KernelConfig(form=form))
    assert np.all(b.variance <= cfg.prior_variance + 1e-12)
    assert np.all(b.variance >= 0)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10**6), n=st.integers(1, 40), perm_seed=st.integers(0, 10**6))
def test_permutation_invariant(seed, n, perm_seed):
    grid = make_grid(4, 4)
    cfg = FastGprConfig(subset_count=3, subset_size=7)
    ms = random_measurements(np.random.default_rng(seed), n, 80)
    perm = [ms[i] for i in np.random.default_rng(perm_seed).permutation(n)]
    a, b = fit_predict(ms, grid, cfg, SE), fit_predict(perm, grid, cfg, SE)
    assert np.allclose(a.mean, b.mean, atol=1e-9) and np.allclose(a.variance, b.variance, atol=1e-9)


def test_measured_cell_variance_drops():
    grid = make_grid(5, 5)
    cfg = FastGprConfig(subset_count=2, subset_size=3)
    ms = random_measurements(np.random.default_rng(4), 10, 100)
    b = fit_predict(ms, grid, cfg, SE)
    for m in ms:
        cell = int(m.position[1] // 20) * 5 + int(m.position[0] // 20)
        assert b.variance[cell] < cfg.prior_variance


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10**6))
def test_far_field_reverts_to_prior(seed):
    # squared-exponential only: the unsquared form decays as exp(-d / 2l^2), so 10 l (~88 m)
    # is still within its correlation range; see the next test for its own scale
    cfg = FastGprConfig(subset_count=2, subset_size=10)
    ms = random_measurements(np.random.default_rng(seed), 15, 40)
    far = 10 * SE.length_scale_m
    points = np.array([[40 + far + 5, 0], [-far - 5, -far - 5], [500, 500]])
    b = fit_predict(ms, points, cfg, SE)
    pos = np.array([m.position for m in ms])
    dist = np.min(np.linalg.norm(points[:, None] - pos[None], axis=2), axis=1)
    assert np.all(dist > far)
    assert np.all(np.abs(b.mean - cfg.prior_mean) < 0.01)


def test_literal_far_field_at_its_own_scale():
    # the unsquared form reaches 1e-6 of the prior covariance only beyond ~2l^2 * 14 meters
    kcfg = KernelConfig()
    cfg = FastGprConfig()
    ms = [Measurement((0.0, 0.0), 26.0, 0.0, 0)]
    d = 2 * kcfg.length_scale_m ** 2 * 14
    b = fit_predict(ms, np.array([[d, 0.0]]), cfg, kcfg)
    assert abs(b.mean[0] - cfg.prior_mean) < 0.01


def test_incremental_matches_scratch():
    grid = make_grid(5, 5)
    cfg = FastGprConfig(subset_count=3, subset_size=8, seed=5)
    ms = random_measurements(np.random.default_rng(9), 20, 100)
    scratch = fit_predict(ms, grid, cfg, SE)
    cache = GprCache.empty(grid, cfg, SE)
    one = incremental_update(cache, ms)
    two = incremental_update(incremental_update(cache, ms[:10]), ms[10:])
    for b in (one.belief, two.belief):
        assert np.allclose(b.mean, scratch.mean, atol=1e-9, rtol=0)
        assert np.allclose(b.variance, scratch.variance, atol=1e-9, rtol=0)
    assert incremental_update(two, []) is two


def test_cache_mismatch_detected():
    grid = make_grid(3, 3)
    cfg = FastGprConfig(subset_count=2, subset_size=3)
    ms = random_measurements(np.random.default_rng(2), 6, 60)
    cache = incremental_update(GprCache.empty(grid, cfg, SE), ms)
    broken = GprCache(cache.points, cfg, SE, cache.measurements[:2], cache.experts, cache.belief)
    with pytest.raises(GprError):
        incremental_update(broken, ms[:1])


def test_duplicate_measurements_jittered(small_grid):
    cfg = FastGprConfig(noise_variance=0.0, jitter=0.0)
    ms = [Measurement((30, 30), 20.0, 0.0, 0)] * 5
    b = fit_predict(ms, small_grid, cfg, SE)
    assert np.all(np.isfinite(b.mean))


def test_validation():
    with pytest.raises(ValueError):
        Measurement((0, 0), 0.0, 0.0, 0)
    with pytest.raises(ValueError):
        Measurement((0, 0), 5.0, -1.0, 0)
    with pytest.raises(ValueError):
        FastGprConfig(subset_count=0)
    with pytest.raises(ValueError):
        BeliefMap([1.0], [-1.0])
