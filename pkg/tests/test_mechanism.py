"""Sensitivity bounds, Laplace sampling, and the two-stage privatization."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dpcov.errors import InputError
from dpcov.mechanism import (PrivacyParams, empirical_sensitivity,
                             laplace_noise, noise_scale, privatize_spectrum,
                             sensitivity_bound_theorem1,
                             sensitivity_bound_theorem2)
from dpcov.spectra import covariance_spectrum


class TestBounds:
    def test_identity_limit_small_t(self):
        d, n = 100, 400
        sb = sensitivity_bound_theorem1(trace=d, trace_sq=d, opnorm=1.0,
                                        sigma=1.0, n=n, t=1e-12)
        assert sb.value == pytest.approx(2 * d / n, rel=1e-4)

    def test_direct_substitution(self):
        n, t = 400, 400 ** -0.5
        sb = sensitivity_bound_theorem1(trace=200, trace_sq=200, opnorm=1.0,
                                        sigma=1.0, n=n, t=t)
        expected = (2 * 200 / n + 4 * np.sqrt(200) * np.sqrt(t / n) + 4 * t)
        assert sb.value == pytest.approx(expected, rel=1e-14)
        assert sb.failure_probability == pytest.approx(2 * np.exp(-n * t),
                                                       rel=1e-14)

    def test_sigma_scaling_is_quadratic(self):
        a = sensitivity_bound_theorem1(10, 10, 1, 1.0, 50, 0.1)
        b = sensitivity_bound_theorem1(10, 10, 1, 2.0, 50, 0.1)
        assert b.value == pytest.approx(4 * a.value, rel=1e-14)

    def test_theorem2_values(self):
        assert sensitivity_bound_theorem2(1.0, 1.0, 300, 300).value == \
            pytest.approx(2.01, rel=1e-14)
        assert sensitivity_bound_theorem2(2.0, 1.0, 200, 400).value == \
            pytest.approx(2.01, rel=1e-14)
        assert sensitivity_bound_theorem2(1.0, 1.0, 2000, 400).value == \
            pytest.approx(10.05, rel=1e-14)

    def test_theorem2_failure_probability(self):
        sb = sensitivity_bound_theorem2(1.0, 1.0, 100, 400, r=0.25)
        assert sb.failure_probability == pytest.approx(
            2 * np.exp(-400 ** 0.5), rel=1e-13)

    def test_preconditions(self):
        with pytest.raises(InputError):
            sensitivity_bound_theorem2(0.5, 1.0, 10, 10)
        with pytest.raises(InputError):
            sensitivity_bound_theorem1(-1, 1, 1, 1, 10, 0.1)


class TestLaplaceNoise:
    def test_moments(self):
        rng = np.random.default_rng(100)
        x = laplace_noise(1.0, 10 ** 6, rng)
        assert abs(x.mean()) < 0.005
        b = 0.7
        y = laplace_noise(b, 10 ** 6, rng)
        assert y.var() == pytest.approx(2 * b * b, rel=0.02)
        assert np.abs(y).mean() == pytest.approx(b, rel=0.01)

    def test_deterministic_given_seed(self):
        a = laplace_noise(2.0, 64, np.random.default_rng(42))
        b = laplace_noise(2.0, 64, np.random.default_rng(42))
        assert np.array_equal(a, b)

    @settings(max_examples=20, deadline=None)
    @given(seed=st.integers(0, 2 ** 32 - 1))
    def test_deterministic_property(self, seed):
        a = laplace_noise(0.5, 16, np.random.default_rng(seed))
        b = laplace_noise(0.5, 16, np.random.default_rng(seed))
        assert np.array_equal(a, b)

    def test_rejects_bad_scale(self):
        with pytest.raises(InputError):
            laplace_noise(0.0, 5, np.random.default_rng(0))


class TestPrivatize:
    def _spectrum(self, n=400, d=200, seed=0):
        rng = np.random.default_rng(seed)
        return covariance_spectrum(rng.standard_normal((n, d)))

    def test_no_privacy_limit(self):
        spec = self._spectrum()
        params = PrivacyParams(epsilon=1e9)
        priv = privatize_spectrum(spec, params, seed=1)
        assert priv.noise_scale < 1e-6
        assert np.allclose(priv.privatized, priv.raw, atol=1e-4)

    def test_gamma_hat_is_definitional(self):
        spec = self._spectrum(seed=3)
        priv = privatize_spectrum(spec, PrivacyParams(epsilon=2.0), seed=7)
        assert priv.gamma_hat == abs(priv.stage1_noisy.sum()) / spec.d

    def test_noise_stream_order_contract(self):
        # stage 1 consumes K uniforms, then stage 2 consumes K more
        spec = self._spectrum(seed=4)
        params = PrivacyParams(epsilon=2.0, gamma_tilde=2.0)
        priv = privatize_spectrum(spec, params, seed=11)
        rng = np.random.default_rng(np.random.SeedSequence(11))
        b1 = noise_scale(2.0, 2.0, 1.0, spec.d, spec.n)
        stage1 = spec.eigenvalues + laplace_noise(b1, spec.K, rng)
        gamma_hat = abs(stage1.sum()) / spec.d
        b2 = noise_scale(2.0, gamma_hat, 1.0, spec.d, spec.n)
        stage2 = spec.eigenvalues + laplace_noise(b2, spec.K, rng)
        assert np.array_equal(priv.stage1_noisy, stage1)
        assert np.array_equal(priv.privatized, stage2)

    def test_bitwise_determinism(self):
        spec = self._spectrum(seed=5)
        params = PrivacyParams(epsilon=1.5)
        a = privatize_spectrum(spec, params, seed=123)
        b = privatize_spectrum(spec, params, seed=123)
        assert np.array_equal(a.privatized, b.privatized)
        assert a.gamma_hat == b.gamma_hat

    def test_gamma_hat_concentrates_under_null(self):
        # epsilon large enough that the stage-1 noise does not swamp the
        # trace; consistency in n is the point of the estimate
        n, d = 400, 200
        hits = 0
        runs = 500
        for k in range(runs):
            rng = np.random.default_rng(np.random.SeedSequence((2024, k)))
            spec = covariance_spectrum(rng.standard_normal((n, d)))
            priv = privatize_spectrum(spec, PrivacyParams(epsilon=8.0),
                                      seed=k)
            hits += 0.8 <= priv.gamma_hat <= 1.2
        assert hits >= 0.95 * runs

    def test_scale_monotonicity(self):
        assert noise_scale(2.0, 1.0, 1.0, 200, 400) > \
            noise_scale(4.0, 1.0, 1.0, 200, 400)
        assert noise_scale(2.0, 2.0, 1.0, 200, 400) > \
            noise_scale(2.0, 1.0, 1.0, 200, 400)
        assert noise_scale(2.0, 1.0, 1.0, 400, 400) > \
            noise_scale(2.0, 1.0, 1.0, 200, 400)


class TestEmpiricalSensitivity:
    def test_equal_inputs_give_zero(self):
        X = np.arange(12.0).reshape(4, 3)
        assert empirical_sensitivity(X, X.copy()) == 0.0

    def test_interlacing_bound_per_draw(self):
        rng = np.random.default_rng(200)
        for _ in range(50):
            Y = rng.standard_normal((49, 20))
            x1 = rng.standard_normal(20)
            x1t = rng.standard_normal(20)
            X = np.vstack([x1, Y])
            Xt = np.vstack([x1t, Y])
            val = empirical_sensitivity(X, Xt)
            assert val <= (x1 @ x1 + x1t @ x1t) / 50 + 1e-10

    def test_two_changed_rows_rejected(self):
        rng = np.random.default_rng(201)
        X = rng.standard_normal((6, 3))
        Xt = X.copy()
        Xt[0] += 1
        Xt[3] += 1
        with pytest.raises(InputError, match="neighbors"):
            empirical_sensitivity(X, Xt)


class TestParams:
    def test_validation(self):
        with pytest.raises(InputError):
            PrivacyParams(epsilon=0.0)
        with pytest.raises(InputError):
            PrivacyParams(epsilon=1.0, gamma_tilde=0.5)
        with pytest.raises(InputError):
            PrivacyParams(epsilon=1.0, r=0.5)
