import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from survnetmix.exceptions import NonPositivePrecisionError, NotPositiveDefiniteError
from survnetmix.likelihood import (
    LOG_SURVIVAL_FLOOR,
    aft_log_terms,
    gaussian_logpdf,
    log_density_terms,
    observed_data_loglik,
    penalized_log_posterior,
    spike_slab_log_marginal,
)
from survnetmix.types import Dataset, Hyperparams, ModelParams

import oracles
from conftest import random_spd, toy_dataset


class TestGaussianLogpdf:
    def test_standard_bivariate_at_origin(self):
        val = gaussian_logpdf(np.zeros(2), np.zeros(2), np.eye(2))
        assert val == pytest.approx(-math.log(2 * math.pi), abs=1e-12)

    def test_unit_quadratic_form(self):
        val = gaussian_logpdf(np.array([1.0, 0.0]), np.zeros(2), np.eye(2))
        assert val == pytest.approx(-math.log(2 * math.pi) - 0.5, abs=1e-12)

    def test_matches_brute_force_oracle(self, rng):
        for _ in range(20):
            p = int(rng.integers(2, 5))
            omega = random_spd(rng, p)
            x = rng.normal(size=p)
            mu = rng.normal(size=p)
            expected = oracles.dense_gaussian_logpdf(x, mu, omega)
            assert gaussian_logpdf(x, mu, omega) == pytest.approx(expected, abs=1e-10)

    def test_batch_agrees_with_rows(self, rng):
        omega = random_spd(rng, 3)
        X = rng.normal(size=(6, 3))
        mu = rng.normal(size=3)
        batch = gaussian_logpdf(X, mu, omega)
        rows = [gaussian_logpdf(X[i], mu, omega) for i in range(6)]
        np.testing.assert_allclose(batch, rows, atol=1e-12)

    def test_non_spd_raises(self):
        with pytest.raises(NotPositiveDefiniteError):
            gaussian_logpdf(np.zeros(2), np.zeros(2), np.array([[1.0, 2.0], [2.0, 1.0]]))

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=30, deadline=None)
    def test_permutation_invariance(self, seed):
        rng = np.random.default_rng(seed)
        p = int(rng.integers(2, 5))
        omega = random_spd(rng, p)
        x, mu = rng.normal(size=p), rng.normal(size=p)
        perm = rng.permutation(p)
        base = gaussian_logpdf(x, mu, omega)
        permuted = gaussian_logpdf(x[perm], mu[perm], omega[np.ix_(perm, perm)])
        assert permuted == pytest.approx(base, abs=1e-10)


class TestAftLogTerms:
    def test_density_at_mean(self):
        for tau in (0.5, 1.0, 3.0):
            # t equal to the native-scale mean
            val = aft_log_terms(2.0, 1, np.zeros(2), 2.0 * tau, np.zeros(2), tau)
            assert val == pytest.approx(math.log(tau) - 0.5 * math.log(2 * math.pi), abs=1e-12)

    def test_survival_at_median(self):
        val = aft_log_terms(1.5, 0, np.zeros(1), 1.5, np.zeros(1), 1.0)
        assert val == pytest.approx(math.log(0.5), abs=1e-12)

    def test_survival_three_sigma(self):
        # (t - m) * tau = 3 with m = 0, tau = 1
        val = aft_log_terms(3.0, 0, np.zeros(1), 0.0, np.zeros(1), 1.0)
        assert val == pytest.approx(-6.607726221510348, abs=1e-9)

    def test_matches_erfc_reference(self, rng):
        for _ in range(50):
            a = rng.uniform(-8, 8)
            val = aft_log_terms(a, 0, np.zeros(1), 0.0, np.zeros(1), 1.0)
            assert val == pytest.approx(oracles.normal_log_sf(a), rel=1e-10)

    def test_survival_floor_keeps_finite(self):
        val = aft_log_terms(1e6, 0, np.zeros(1), 0.0, np.zeros(1), 1.0)
        assert val == LOG_SURVIVAL_FLOOR

    def test_nonpositive_precision(self):
        with pytest.raises(NonPositivePrecisionError):
            aft_log_terms(0.0, 1, np.zeros(1), 0.0, np.zeros(1), 0.0)

    @given(st.floats(-20, 20), st.floats(-20, 20), st.floats(0.05, 5.0))
    @settings(max_examples=60, deadline=None)
    def test_censored_monotone_decreasing_in_t(self, t, shift, tau):
        # within the unclamped range the survival term strictly decreases
        t2 = t + abs(shift) + 1e-3
        if max(abs(t - 0.0), abs(t2)) * tau > 30:
            return
        v1 = aft_log_terms(t, 0, np.zeros(1), 0.0, np.zeros(1), tau)
        v2 = aft_log_terms(t2, 0, np.zeros(1), 0.0, np.zeros(1), tau)
        assert v2 < v1


def make_params(K, p, rng, zero_sparse=False, identity_omega=False):
    omega = (
        np.stack([np.eye(p)] * K)
        if identity_omega
        else np.stack([random_spd(rng, p) for _ in range(K)])
    )
    scale = 0.0 if zero_sparse else 1.0
    return ModelParams.from_arrays(
        beta0=rng.normal(size=K),
        beta=scale * rng.normal(size=(K, p)),
        tau=rng.uniform(0.5, 2.0, size=K),
        mu=scale * rng.normal(size=(K, p)),
        omega=omega,
        pi=np.full(K, 1.0 / K),
    )


class TestPenalizedLogPosterior:
    def test_single_group_zero_params_constant_priors(self, rng):
        d = toy_dataset(rng, n=12, p=3)
        params = ModelParams.from_arrays(
            beta0=[0.0], beta=[[0.0] * 3], tau=[1.3], mu=[[0.0] * 3],
            omega=[np.eye(3)], pi=[1.0],
        )
        h = Hyperparams(tau0=0.05, v0=0.01, v1=1.0, p1=0.4, lambda1=2.0, lambda2=3.0, u=0.0)
        expected = 0.0
        for i in range(d.n):
            expected += oracles.dense_gaussian_logpdf(d.X[i], np.zeros(3), np.eye(3))
            a = (d.t[i] - 0.0) * 1.3
            if d.delta[i] == 1:
                expected += math.log(1.3) - 0.5 * math.log(2 * math.pi) - 0.5 * a * a
            else:
                expected += oracles.normal_log_sf(a)
        expected += -0.05 * 3  # diagonal prior at omega = I
        mix0 = 0.4 / 2.0 + 0.6 / 0.02  # spike-slab density at zero
        expected += 3 * math.log(mix0)  # p(p-1)/2 = 3 pairs
        got = penalized_log_posterior(d, params, h)
        assert got == pytest.approx(expected, rel=1e-10)

    def test_doubling_u_decreases_value(self, rng):
        d = toy_dataset(rng, n=10, p=3)
        params = make_params(2, 3, rng)
        h1 = Hyperparams(lambda1=1.0, lambda2=1.0, u=1.0)
        h2 = Hyperparams(lambda1=1.0, lambda2=1.0, u=2.0)
        assert penalized_log_posterior(d, params, h2) < penalized_log_posterior(d, params, h1)

    def test_toy_term_by_term(self, rng):
        # n=4, p=2, K=2 instance summed independently
        d = toy_dataset(rng, n=4, p=2)
        params = make_params(2, 2, rng)
        h = Hyperparams(tau0=0.1, v0=0.05, v1=2.0, p1=0.3, lambda1=0.7, lambda2=1.1, u=0.9, eps=1e-2)
        expected = 0.0
        for i in range(d.n):
            per_k = []
            for k in range(2):
                lx = oracles.dense_gaussian_logpdf(d.X[i], params.mu[k], params.omega[k])
                m = (params.beta0[k] + d.X[i] @ params.beta[k]) / params.tau[k]
                a = (d.t[i] - m) * params.tau[k]
                if d.delta[i] == 1:
                    lz = math.log(params.tau[k]) - 0.5 * math.log(2 * math.pi) - 0.5 * a * a
                else:
                    lz = oracles.normal_log_sf(a)
                per_k.append(math.log(params.pi[k]) + lx + lz)
            hi = max(per_k)
            expected += hi + math.log(sum(math.exp(v - hi) for v in per_k))
        for k in range(2):
            expected -= h.tau0 * np.trace(params.omega[k])
            expected -= h.lambda1 * np.abs(params.beta[k]).sum()
            expected -= h.lambda2 * np.abs(params.mu[k]).sum()
            w = abs(params.omega[k, 0, 1])
            expected += math.log(
                h.p1 / (2 * h.v1) * math.exp(-w / h.v1)
                + (1 - h.p1) / (2 * h.v0) * math.exp(-w / h.v0)
            )
        s = params.omega[:, 0, 1] / np.sqrt(params.omega[:, 0, 1] ** 2 + h.eps**2)
        expected -= 0.5 * h.u * (s[0] - s[1]) ** 2
        got = penalized_log_posterior(d, params, h)
        assert got == pytest.approx(expected, rel=1e-10)

    def test_beta_prior_term_accounting(self, rng):
        d = toy_dataset(rng, n=8, p=2)
        params = make_params(2, 2, rng)
        h = Hyperparams(lambda1=1.5, lambda2=1.0)
        bigger = ModelParams.from_arrays(
            beta0=params.beta0, beta=params.beta + np.sign(params.beta) * 0.5,
            tau=params.tau, mu=params.mu, omega=params.omega, pi=params.pi,
        )
        d_obj = penalized_log_posterior(d, bigger, h) - penalized_log_posterior(d, params, h)
        d_lik = observed_data_loglik(d, bigger) - observed_data_loglik(d, params)
        expected_prior_delta = -h.lambda1 * (
            np.abs(bigger.beta).sum() - np.abs(params.beta).sum()
        )
        assert d_obj - d_lik == pytest.approx(expected_prior_delta, abs=1e-9)
        assert expected_prior_delta < 0

    def test_responsibility_normalization(self, rng):
        d = toy_dataset(rng, n=15, p=3)
        params = make_params(3, 3, rng)
        terms = log_density_terms(d, params)
        from scipy.special import logsumexp

        log_rho = terms.log_total - logsumexp(terms.log_total, axis=1, keepdims=True)
        np.testing.assert_allclose(np.exp(log_rho).sum(axis=1), 1.0, atol=1e-12)


class TestSpikeSlabMarginal:
    def test_zero_argument_value(self):
        h = Hyperparams(v0=0.01, v1=1.0, p1=0.5, lambda1=1, lambda2=1)
        expected = math.log(0.5 / 2 + 0.5 / 0.02)
        assert spike_slab_log_marginal(0.0, h) == pytest.approx(expected, abs=1e-12)
