import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from survnetmix.em import EmConfig, fit
from survnetmix.exceptions import AllFitsFailedError
from survnetmix.selection import (
    bic,
    call_edges,
    compute_pip,
    count_sparse_parameters,
    select_model,
    sparsity_threshold,
    threshold_estimate,
)
from survnetmix.types import Dataset, FitResult, Hyperparams, ModelParams

import oracles
from conftest import random_spd, toy_dataset


def make_params(K, p, rng):
    return ModelParams.from_arrays(
        beta0=rng.normal(size=K),
        beta=rng.normal(size=(K, p)),
        tau=rng.uniform(0.5, 2.0, size=K),
        mu=rng.normal(size=(K, p)),
        omega=np.stack([random_spd(rng, p) for _ in range(K)]),
        pi=np.full(K, 1.0 / K),
    )


class TestThresholdEstimate:
    def test_zero_constant_is_identity(self, rng):
        params = make_params(2, 4, rng)
        out = threshold_estimate(params, 0.0, n=100)
        np.testing.assert_array_equal(out.beta, params.beta)
        np.testing.assert_array_equal(out.omega, params.omega)

    def test_infinite_constant_zeroes_sparse_params(self, rng):
        params = make_params(2, 4, rng)
        out = threshold_estimate(params, np.inf, n=100)
        assert not out.beta.any()
        assert not out.mu.any()
        off = out.omega.copy()
        for k in range(2):
            np.fill_diagonal(off[k], 0.0)
        assert not off.any()
        np.testing.assert_array_equal(
            np.diagonal(out.omega, axis1=1, axis2=2),
            np.diagonal(params.omega, axis1=1, axis2=2),
        )
        np.testing.assert_array_equal(out.tau, params.tau)
        np.testing.assert_array_equal(out.pi, params.pi)

    def test_boundary_arithmetic(self, rng):
        # K=2, p=100, n=300, c=1: level = sqrt(8 log(100) / 300)
        level = sparsity_threshold(2, 100, 300, 1.0)
        assert level == pytest.approx(0.35043478465046213, abs=1e-12)
        params = make_params(2, 100, rng)
        beta = np.zeros((2, 100))
        beta[0, 0], beta[0, 1] = 0.35, 0.36
        beta[1, 0], beta[1, 1] = -0.35, -0.36
        params = ModelParams(
            beta0=params.beta0, beta=beta, tau=params.tau,
            mu=params.mu, omega=params.omega, pi=params.pi,
        )
        out = threshold_estimate(params, 1.0, n=300)
        assert out.beta[0, 0] == 0.0 and out.beta[1, 0] == 0.0
        assert out.beta[0, 1] == 0.36 and out.beta[1, 1] == -0.36

    def test_idempotent(self, rng):
        params = make_params(2, 5, rng)
        once = threshold_estimate(params, 1.0, n=50)
        twice = threshold_estimate(once, 1.0, n=50)
        np.testing.assert_array_equal(once.beta, twice.beta)
        np.testing.assert_array_equal(once.mu, twice.mu)
        np.testing.assert_array_equal(once.omega, twice.omega)


class TestComputePip:
    def test_spot_value_at_zero(self):
        h = Hyperparams(v0=0.01, v1=1.0, p1=0.5, lambda1=1, lambda2=1)
        omega = np.zeros((1, 2, 2))
        pip = compute_pip(omega, h)
        assert pip[0, 0, 1] == pytest.approx(0.009900990099009901, abs=1e-12)
        assert pip[0, 0, 0] == 0.0  # diagonal sentinel

    def test_large_magnitude_tends_to_one(self):
        h = Hyperparams(v0=0.01, v1=1.0, lambda1=1, lambda2=1)
        omega = np.zeros((1, 2, 2))
        omega[0, 0, 1] = omega[0, 1, 0] = 50.0
        assert compute_pip(omega, h)[0, 0, 1] == pytest.approx(1.0, abs=1e-12)

    def test_symmetric_in_sign(self, rng):
        h = Hyperparams(v0=0.05, v1=2.0, lambda1=1, lambda2=1)
        vals = rng.normal(size=10)
        for v in vals:
            om_pos = np.array([[[1.0, v], [v, 1.0]]])
            om_neg = np.array([[[1.0, -v], [-v, 1.0]]])
            assert compute_pip(om_pos, h)[0, 0, 1] == compute_pip(om_neg, h)[0, 0, 1]

    @given(st.floats(0, 5), st.floats(0, 5))
    @settings(max_examples=50, deadline=None)
    def test_monotone_in_magnitude(self, a, b):
        h = Hyperparams(v0=0.2, v1=1.0, lambda1=1, lambda2=1)
        lo, hi = sorted((a, b))
        om = np.zeros((1, 2, 2))
        om[0, 0, 1] = lo
        pip_lo = compute_pip(om, h)[0, 0, 1]
        om[0, 0, 1] = hi
        pip_hi = compute_pip(om, h)[0, 0, 1]
        assert pip_hi >= pip_lo


class TestCallEdges:
    def test_all_zero_pip_gives_empty(self):
        assert call_edges(np.zeros((2, 4, 4))) == ((), ())

    def test_boundary_is_strict(self):
        pip = np.zeros((1, 3, 3))
        pip[0, 0, 1] = pip[0, 1, 0] = 0.5
        pip[0, 0, 2] = pip[0, 2, 0] = 0.5 + 1e-12
        assert call_edges(pip, 0.5) == (((0, 2),),)

    def test_single_edge(self):
        pip = np.zeros((1, 3, 3))
        pip[0, 1, 2] = pip[0, 2, 1] = 0.9
        assert call_edges(pip, 0.5) == (((1, 2),),)

    def test_monotone_shrinking_in_threshold(self, rng):
        pip = rng.uniform(size=(2, 6, 6))
        pip = 0.5 * (pip + np.transpose(pip, (0, 2, 1)))
        prev = None
        for a in (0.1, 0.3, 0.5, 0.7, 0.9):
            edges = call_edges(pip, a)
            flat = {(k, e) for k in range(2) for e in edges[k]}
            if prev is not None:
                assert flat <= prev
            prev = flat


def _result_from(params, d, h, c=0.0, a=0.5):
    thresholded = threshold_estimate(params, c, d.n)
    pip = compute_pip(thresholded.omega, h)
    edges = call_edges(pip, a)
    return FitResult(
        map_estimate=params, thresholded=thresholded, pip=pip, edges=edges,
        memberships=np.ones(d.n, dtype=int), bic=np.nan,
        objective_trace=np.zeros(1), converged=True, iterations=1,
    )


class TestBic:
    def test_hand_computed_single_group(self, rng):
        d = toy_dataset(rng, n=10, p=2)
        params = ModelParams.from_arrays(
            beta0=[0.0], beta=[[0.0, 0.0]], tau=[1.0], mu=[[0.0, 0.0]],
            omega=[np.eye(2)], pi=[1.0],
        )
        h = Hyperparams(lambda1=1, lambda2=1)
        res = _result_from(params, d, h)
        expected_ll = 0.0
        for i in range(d.n):
            expected_ll += oracles.dense_gaussian_logpdf(d.X[i], np.zeros(2), np.eye(2))
            if d.delta[i] == 1:
                expected_ll += -0.5 * math.log(2 * math.pi) - 0.5 * d.t[i] ** 2
            else:
                expected_ll += oracles.normal_log_sf(d.t[i])
        assert count_sparse_parameters(res) == 0
        assert bic(d, res) == pytest.approx(-2 * expected_ll, rel=1e-10)

    def test_one_extra_parameter_costs_log_n(self, rng):
        d = toy_dataset(rng, n=25, p=3)
        params = make_params(1, 3, rng)
        h = Hyperparams(lambda1=1, lambda2=1)
        res = _result_from(params, d, h)
        # add one nonzero mean entry without touching the likelihood pieces
        mu2 = res.thresholded.mu.copy()
        assert mu2[0, 0] != 0.0
        mu_zero = mu2.copy()
        mu_zero[0, 0] = 0.0
        from dataclasses import replace

        res_fewer = replace(res, thresholded=replace(res.thresholded, mu=mu_zero))
        ll_delta = bic(d, res) - bic(d, res_fewer)
        # identical likelihood would give exactly log n; here mu changed, so
        # compare the penalty part alone
        assert count_sparse_parameters(res) - count_sparse_parameters(res_fewer) == 1

    def test_equal_counts_order_by_likelihood(self, rng):
        d = toy_dataset(rng, n=20, p=2)
        h = Hyperparams(lambda1=1, lambda2=1)
        p1 = make_params(1, 2, rng)
        p2 = make_params(1, 2, rng)
        r1, r2 = _result_from(p1, d, h), _result_from(p2, d, h)
        if count_sparse_parameters(r1) == count_sparse_parameters(r2):
            from survnetmix.likelihood import observed_data_loglik

            ll1 = observed_data_loglik(d, r1.thresholded)
            ll2 = observed_data_loglik(d, r2.thresholded)
            assert (bic(d, r1) < bic(d, r2)) == (ll1 > ll2)


class TestSelectModel:
    def _dataset(self, rng):
        from test_em import two_cluster_dataset

        return two_cluster_dataset(rng, n_per=30, p=3)

    def test_singleton_grid_matches_fit(self, rng):
        d, _ = self._dataset(rng)
        h = Hyperparams.defaults_for(d.n, d.p, v0=0.01, u=0.0)
        cfg = EmConfig(n_starts=1, max_iter=60)
        best, table = select_model(d, [2], [0.01], [0.0], h, cfg)
        direct = fit(d, 2, h, cfg)
        assert len(table) == 1
        assert best.bic == pytest.approx(direct.bic, rel=1e-12)
        np.testing.assert_allclose(best.map_estimate.omega, direct.map_estimate.omega)

    def test_table_is_cartesian(self, rng):
        d, _ = self._dataset(rng)
        h = Hyperparams.defaults_for(d.n, d.p)
        cfg = EmConfig(n_starts=1, max_iter=25)
        _, table = select_model(d, [1, 2], [0.01, 0.05], [0.0], h, cfg)
        assert len(table) == 4
        combos = {(row["K"], row["v0"], row["u"]) for row in table}
        assert combos == {(1, 0.01, 0.0), (1, 0.05, 0.0), (2, 0.01, 0.0), (2, 0.05, 0.0)}

    def test_winner_has_min_bic(self, rng):
        d, _ = self._dataset(rng)
        h = Hyperparams.defaults_for(d.n, d.p)
        cfg = EmConfig(n_starts=1, max_iter=25)
        best, table = select_model(d, [1, 2], [0.01], [0.0], h, cfg)
        ok = [row["bic"] for row in table if not row["failed"]]
        assert best.bic == min(ok)

    def test_degenerate_data_flagged_but_table_returned(self, rng):
        d = toy_dataset(rng, n=8, p=2)
        h = Hyperparams.defaults_for(d.n, d.p)
        cfg = EmConfig(n_starts=1, max_iter=10)
        best, table = select_model(d, [1, 3], [0.01], [0.0], h, cfg)
        assert len(table) == 2
        failed = {row["K"]: row["failed"] for row in table}
        assert failed[3] is True  # 8 subjects cannot hold 3 subgroups of mass 5
        assert failed[1] is False
        with pytest.raises(AllFitsFailedError):
            select_model(d, [3], [0.01], [0.0], h, cfg)
