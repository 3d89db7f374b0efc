import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from memamp.denoiser import (V_PHI_MAX, V_PHI_MIN, BgPrior, bg_posterior, denoise_bg,
                             sample_bg)

from oracles import bg_quadrature


def noisy(n, prior, v_in, seed):
    rng = np.random.default_rng(seed)
    x = sample_bg(n, prior, seed=rng.integers(2**32))
    if prior.field == "complex":
        w = (rng.standard_normal(n) + 1j * rng.standard_normal(n)) * math.sqrt(v_in / 2)
    else:
        w = rng.standard_normal(n) * math.sqrt(v_in)
    return x, x + w


def test_prior_validation():
    with pytest.raises(ValueError):
        BgPrior(0.0)
    with pytest.raises(ValueError):
        BgPrior(1.5)
    with pytest.raises(ValueError):
        BgPrior(0.5, "quaternion")


def test_gaussian_prior_closed_form(rng):
    r = rng.standard_normal(50)
    v = 0.3
    res = denoise_bg(r, v, BgPrior(1.0))
    np.testing.assert_allclose(res.x_post, r / (1 + v), rtol=1e-14)
    assert res.v_post == pytest.approx(v / (1 + v), rel=1e-14)


def test_zero_input_maps_to_zero():
    res = denoise_bg(np.zeros(4), 0.1, BgPrior(0.1))
    np.testing.assert_array_equal(res.x_post, 0.0)


def test_quadrature_example():
    mean, var = bg_posterior(np.array([1.0]), 0.05, 0.1, 10.0)
    qm, qv = bg_quadrature(1.0, 0.05, 0.1)
    assert abs(mean[0] - qm) <= 1e-6
    assert abs(var[0] - qv) <= 1e-6


@settings(max_examples=60, deadline=None)
@given(st.floats(-6, 6), st.floats(1e-3, 2.0), st.floats(0.02, 1.0))
def test_posterior_matches_quadrature(r, v, mu):
    mean, var = bg_posterior(np.array([r]), v, mu, 1.0 / mu)
    qm, qv = bg_quadrature(r, v, mu)
    assert abs(mean[0] - qm) <= 1e-6
    assert abs(var[0] - qv) <= 1e-6


def test_odd_symmetry(rng):
    r = rng.standard_normal(100) * 3
    m1, v1 = bg_posterior(r, 0.2, 0.1, 10.0)
    m2, v2 = bg_posterior(-r, 0.2, 0.1, 10.0)
    np.testing.assert_allclose(m1, -m2, rtol=1e-15)
    np.testing.assert_allclose(v1, v2, rtol=1e-15)


def test_extreme_inputs_stay_finite():
    r = np.array([0.0, 1e3, -1e3, 1e150])
    m, v = bg_posterior(r, 1e-8, 0.01, 100.0)
    assert np.all(np.isfinite(m)) and np.all(np.isfinite(v))


def test_nonpositive_variance_rejected():
    for v in (0.0, -1.0, math.nan):
        with pytest.raises(ValueError):
            denoise_bg(np.ones(3), v, BgPrior(0.1))


class TestSampler:
    def test_unit_variance(self):
        for field in ("real", "complex"):
            x = sample_bg(65536, BgPrior(0.1, field), seed=1)
            assert np.mean(np.abs(x) ** 2) == pytest.approx(1.0, rel=0.05)

    def test_zero_fraction(self):
        x = sample_bg(65536, BgPrior(0.1), seed=2)
        assert abs(np.mean(x == 0) - 0.9) <= 0.02

    def test_complex_parts_independent(self):
        x = sample_bg(65536, BgPrior(0.1, "complex"), seed=3)
        assert np.mean(x.real ** 2) == pytest.approx(0.5, rel=0.07)
        assert np.mean(x.imag ** 2) == pytest.approx(0.5, rel=0.07)
        assert abs(np.mean((x.real == 0) & (x.imag == 0)) - 0.81) <= 0.02

    def test_dense_prior_has_no_zeros(self):
        assert np.all(sample_bg(4096, BgPrior(1.0), seed=4) != 0)

    def test_reproducible(self):
        p = BgPrior(0.3)
        np.testing.assert_array_equal(sample_bg(100, p, seed=9), sample_bg(100, p, seed=9))


@pytest.mark.parametrize("field", ["real", "complex"])
@pytest.mark.parametrize("v_in", [0.01, 0.1, 0.5])
class TestStatistics:
    n = 16384

    def test_beats_every_affine_estimator(self, field, v_in):
        x, r = noisy(self.n, BgPrior(0.1, field), v_in, seed=5)
        res = denoise_bg(r, v_in, BgPrior(0.1, field))
        mmse = np.mean(np.abs(res.x_post - x) ** 2)
        for alpha in np.linspace(0.0, 1.5, 61):
            assert np.mean(np.abs(alpha * r - x) ** 2) - mmse >= 0.0

    def test_orthogonal_output(self, field, v_in):
        x, r = noisy(self.n, BgPrior(0.1, field), v_in, seed=6)
        res = denoise_bg(r, v_in, BgPrior(0.1, field))
        ip = np.real(np.vdot(res.x_orth - x, r - x)) / self.n
        assert abs(ip) <= 0.05 * math.sqrt(res.v_phi * v_in)

    def test_reported_variance_matches_error(self, field, v_in):
        x, r = noisy(self.n, BgPrior(0.1, field), v_in, seed=7)
        res = denoise_bg(r, v_in, BgPrior(0.1, field))
        assert np.mean(np.abs(res.x_post - x) ** 2) == pytest.approx(res.v_post, rel=0.1)
        assert 0 < res.v_post < v_in
        assert 1 / res.v_phi == pytest.approx(1 / res.v_post - 1 / v_in, rel=1e-12)
        assert res.flags == []


def test_v_phi_clamped_when_denoiser_gains_nothing():
    # with v_in this small the posterior variance rounds to v_in itself
    res = denoise_bg(np.ones(8), 1e-20, BgPrior(1.0))
    assert res.v_phi == V_PHI_MAX and "v_phi_clamped" in res.flags
    assert np.all(np.isfinite(res.x_orth))


def test_gaussian_v_phi_is_prior_variance():
    # 1/v_phi = (1 + v)/v - 1/v = 1
    res = denoise_bg(np.ones(8), 0.7, BgPrior(1.0))
    assert res.v_phi == pytest.approx(1.0, rel=1e-12)
    assert V_PHI_MIN <= res.v_phi <= V_PHI_MAX
