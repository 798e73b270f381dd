import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import brute_ssim
from ospr import (
    QuantizationScheme,
    RngSpec,
    SsimParams,
    TargetImage,
    mse,
    run_ospr,
    ssim,
    ssim_component_histograms,
    ssim_model,
    ssim_model_full,
)
from ospr.errors import DimensionError
from ospr.metrics import COMPONENTS, dynamic_range, fit_ssim_asymptote


def test_mse_cases():
    assert mse(np.zeros((2, 2)), np.eye(2)) == 0.5
    a = np.arange(16.0).reshape(4, 4)
    assert mse(a, a) == 0.0
    with pytest.raises(DimensionError):
        mse(np.zeros((2, 2)), np.zeros((2, 3)))


def test_ssim_identical_is_one(rng):
    t = rng.random((32, 32))
    rep = ssim(t, t)
    assert rep.global_ssim == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_allclose(rep.s1, 1.0, atol=1e-12)


def test_ssim_against_zero_image(rng):
    t = rng.random((16, 16)) + 0.5
    p = SsimParams.for_target(t)
    rep = ssim(t, np.zeros_like(t), p)
    np.testing.assert_allclose(rep.s1, p.c1 / (rep.mu_t**2 + p.c1), rtol=1e-12)
    np.testing.assert_allclose(rep.s2, p.c2 / (rep.var_t + p.c2), rtol=1e-12)


@settings(max_examples=25, deadline=None)
@given(
    rows=st.integers(8, 32),
    cols=st.integers(8, 32),
    seed=st.integers(0, 2**32 - 1),
    scale=st.floats(0.01, 100),
)
def test_ssim_matches_brute_force(rows, cols, seed, scale):
    gen = np.random.default_rng(seed)
    t = gen.random((rows, cols)) * scale
    r = gen.random((rows, cols)) * scale
    p = SsimParams.for_target(t)
    rep = ssim(t, r, p)
    ref, per_window = brute_ssim(t, r, p.c1, p.c2)
    assert abs(rep.global_ssim - ref) < 1e-12
    assert np.max(np.abs((rep.s1 * rep.s2).ravel() - per_window)) < 1e-12


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_ssim_symmetric_and_bounded(seed):
    gen = np.random.default_rng(seed)
    t, r = gen.random((16, 16)), gen.random((16, 16))
    p = SsimParams(1.0)
    a, b = ssim(t, r, p).global_ssim, ssim(r, t, p).global_ssim
    assert a == pytest.approx(b, abs=1e-14)
    assert -1.0 <= a <= 1.0


def test_ssim_window_count_and_errors(rng):
    t = rng.random((20, 12))
    rep = ssim(t, t)
    assert rep.s1.shape == (13, 5)
    assert ssim(t, t, SsimParams(1.0, stride=4)).s1.shape == (4, 2)
    with pytest.raises(DimensionError):
        ssim(np.ones((4, 4)), np.ones((4, 4)))
    with pytest.raises(ValueError):
        SsimParams(0.0)


def test_dynamic_range_flat_fallback():
    assert dynamic_range(np.full((4, 4), 2.0)) == 2.0
    assert dynamic_range(np.zeros((4, 4))) == 1.0
    assert dynamic_range(np.array([[0.5, 2.0]])) == 1.5


def test_component_histograms(rng):
    reports = [ssim(rng.random((16, 16)), rng.random((16, 16)), SsimParams(1.0), 3) for _ in range(3)]
    for c in COMPONENTS:
        h = ssim_component_histograms(reports, c, bins=10)
        assert h.counts.sum() == 3 * 81 == h.total
        assert h.n_subframes == 3
        assert h.edges.size == 11
    with pytest.raises(KeyError):
        ssim_component_histograms(reports, "luminance")
    with pytest.raises(ValueError):
        ssim_component_histograms([], "s1")


def test_ssim_model_properties():
    p = SsimParams(1.0)
    vals = [ssim_model(0.05, 0.8, n, p) for n in (1, 2, 4, 8, 1000)]
    assert all(a < b for a, b in zip(vals, vals[1:]))
    assert vals[-1] < 1
    assert ssim_model(0.0, 0.0, 1, p) == 1.0
    with pytest.raises(ValueError):
        ssim_model(0.05, 0.8, 0, p)


def test_ssim_model_full_unquantized_is_one(uniform_target):
    v = ssim_model_full(uniform_target, 0.0, 1, scheme=QuantizationScheme.NONE)
    assert v == pytest.approx(1.0, abs=1e-12)


def test_ssim_model_full_increases_with_n(uniform_target):
    vals = [ssim_model_full(uniform_target, 0.797, n) for n in (1, 2, 4, 8, 16)]
    assert all(a < b for a, b in zip(vals, vals[1:]))
    assert vals[-1] < 1


def test_ssim_model_full_tracks_measurement(uniform_target):
    ti = uniform_target.intensity
    p = SsimParams.for_target(ti)
    for n in (1, 4):
        measured = np.mean([
            ssim(ti, run_ospr(uniform_target, n, QuantizationScheme.BINARY_PHASE, RngSpec(9, r)).mean_intensity(), p).global_ssim
            for r in range(20)
        ])
        assert ssim_model_full(uniform_target, 0.797, n, p) == pytest.approx(measured, abs=0.05)


def test_ssim_model_full_constant_target():
    t = TargetImage(np.ones((16, 16)))
    # flat windows: s2 is c2 / (var_R + c2), strictly below 1
    assert 0 < ssim_model_full(t, 0.8, 1) < ssim_model_full(t, 0.8, 10) < 1


def test_fit_ssim_asymptote():
    ns = [1, 2, 4, 8]
    assert fit_ssim_asymptote(ns, [0.9 - 0.4 / n for n in ns]) == pytest.approx(0.9, abs=1e-12)
