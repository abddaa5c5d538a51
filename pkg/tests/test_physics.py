import numpy as np
import pytest
from numpy.testing import assert_allclose

from dispmc.physics import (
    ChannelParams,
    GainModel,
    compose_intensity,
    default_g0,
    kernel,
    tap_superposition,
)

CH = ChannelParams()


def test_default_g0_sphere_volume():
    assert_allclose(default_g0(5e-6), 4 / 3 * np.pi * 125e-18, rtol=1e-12)
    with pytest.raises(ValueError):
        default_g0(0.0)


def test_kernel_zero_at_and_before_release():
    assert kernel(10e-6, 0.0, CH) == 0.0
    assert kernel(10e-6, -1.0, CH) == 0.0
    out = kernel(10e-6, np.array([-0.5, 0.0, 0.5]), CH)
    assert out[0] == 0.0 and out[1] == 0.0 and out[2] > 0.0


def test_kernel_peak_matches_grid_search():
    # oracle: brute-force maximization of h(r, .) on a fine time grid
    r = 10e-6
    t = np.linspace(1e-4, 2.0, 200001)
    grid_argmax = t[np.argmax(kernel(r, t, CH))]
    closed = r**2 / (6 * CH.dm)
    assert abs(grid_argmax - closed) / closed < 0.01
    assert_allclose(closed, 1 / 6, rtol=1e-12)  # 10 um, 1e-10 m^2/s


def test_kernel_separation_ratio_identity():
    for r, t in [(5e-6, 0.3), (10e-6, 0.8), (20e-6, 1.7)]:
        ratio = kernel(r, t, CH) / kernel(2 * r, t, CH)
        assert_allclose(ratio, np.exp(3 * r**2 / (4 * CH.dm * t)), rtol=1e-12)


def test_kernel_monotone_in_separation():
    r = np.linspace(1e-6, 50e-6, 300)
    for t in (0.05, 0.5, 1.9):
        h = kernel(r, t, CH)
        assert np.all(np.diff(h) < 0)


def test_kernel_domain_errors():
    with pytest.raises(ValueError):
        kernel(-1e-6, 0.5, CH)
    with pytest.raises(ValueError):
        kernel(0.0, 0.5, CH)
    with pytest.raises(ValueError):
        kernel(np.nan, 0.5, CH)
    with pytest.raises(ValueError):
        kernel(1e-6, np.inf, CH)


def test_sample_offsets_mid_bin():
    ch = ChannelParams(t_sym=2.0, m_samples=4)
    assert_allclose(ch.sample_offsets(), [0.25, 0.75, 1.25, 1.75], rtol=1e-15)


def test_tap_superposition_additive_in_taps():
    ch = ChannelParams(memory=3)
    rng = np.random.default_rng(1)
    r = 10e-6 * (1 + 0.1 * rng.standard_normal(ch.m_samples))
    offsets = ch.sample_offsets()
    tilde = tap_superposition((1, 0, 1), r, ch)
    manual = (
        ch.a1 * kernel(r, offsets, ch)
        + ch.a0 * kernel(r, 1 * ch.t_sym + offsets, ch)
        + ch.a1 * kernel(r, 2 * ch.t_sym + offsets, ch)
    )
    assert_allclose(tilde, manual, rtol=1e-12)


def test_tap_superposition_clamps_small_separations():
    ch = ChannelParams(memory=1)
    r = np.full(ch.m_samples, 0.1e-6)  # below r_min
    clamped = np.full(ch.m_samples, ch.r_min)
    assert_allclose(tap_superposition((0,), r, ch), tap_superposition((0,), clamped, ch))


def test_tap_superposition_context_length_checked():
    ch = ChannelParams(memory=2)
    r = np.full(ch.m_samples, 10e-6)
    with pytest.raises(ValueError):
        tap_superposition((1,), r, ch)
    with pytest.raises(ValueError):
        tap_superposition((1, 0, 0), r, ch)


def test_compose_intensity_affine_in_gain():
    rng = np.random.default_rng(2)
    tilde = rng.uniform(0, 50, size=40)
    lo = compose_intensity(tilde, GainModel(1.0), CH)
    hi = compose_intensity(tilde, 2.0, CH)
    assert_allclose(hi - lo, tilde, rtol=1e-12)
    assert_allclose(lo - CH.lambda_bg, tilde, rtol=1e-12)


def test_compose_intensity_rejects_bad_gain():
    tilde = np.ones(40)
    for bad in (0.0, -1.0, np.nan, np.inf):
        with pytest.raises(ValueError):
            compose_intensity(tilde, bad, CH)
    with pytest.raises(ValueError):
        GainModel(0.0)
    with pytest.raises(ValueError):
        compose_intensity(-np.ones(40), 1.0, CH)


def test_channel_params_validation():
    with pytest.raises(ValueError):
        ChannelParams(memory=0)
    with pytest.raises(ValueError):
        ChannelParams(t_sym=0.0)
    with pytest.raises(ValueError):
        ChannelParams(r_min=0.0)
    with pytest.raises(ValueError):
        ChannelParams(a0=-1.0)
