"""Thresholding, edge calling, BIC, and grid model selection."""

from __future__ import annotations

from dataclasses import replace
from typing import Sequence

import numpy as np
from joblib import Parallel, delayed
from scipy.special import expit

from .exceptions import AllFitsFailedError, AllStartsDegenerateError
from .likelihood import observed_data_loglik
from .types import Dataset, FitResult, Hyperparams, ModelParams


def sparsity_threshold(K: int, p: int, n: int, c: float) -> float:
    """Threshold level c * sqrt(K^3 log(p) / n)."""
    if c < 0:
        raise ValueError("threshold constant must be nonnegative")
    return float(c * np.sqrt(K**3 * np.log(p) / n))


def threshold_estimate(map_estimate: ModelParams, c: float, n: int) -> ModelParams:
    """Zero every sparse parameter with magnitude at most the threshold level.

    Applies to the regression coefficients, predictor means, and
    off-diagonal precision entries; diagonals, tau, pi, and intercepts are
    untouched.  ``c = 0`` is the identity.
    """
    t_n = sparsity_threshold(map_estimate.K, map_estimate.p, n, c)
    beta = np.where(np.abs(map_estimate.beta) > t_n, map_estimate.beta, 0.0)
    mu = np.where(np.abs(map_estimate.mu) > t_n, map_estimate.mu, 0.0)
    omega = np.where(np.abs(map_estimate.omega) > t_n, map_estimate.omega, 0.0)
    diag = np.arange(map_estimate.p)
    omega[:, diag, diag] = map_estimate.omega[:, diag, diag]
    return replace(map_estimate, beta=beta, mu=mu, omega=omega)


def compute_pip(omega: np.ndarray, h: Hyperparams) -> np.ndarray:
    """Posterior slab inclusion probability of every off-diagonal entry.

    The diagonal carries a zero sentinel: self-loops are never edges.
    """
    if not h.v1 > h.v0:
        raise ValueError("need v1 > v0")
    w = np.abs(np.asarray(omega, dtype=float))
    log_odds = (
        np.log(h.p1)
        - np.log1p(-h.p1)
        + np.log(h.v0)
        - np.log(h.v1)
        + w * (1.0 / h.v0 - 1.0 / h.v1)
    )
    pip = expit(log_odds)
    diag = np.arange(omega.shape[1])
    pip[:, diag, diag] = 0.0
    return pip


def call_edges(pip: np.ndarray, a: float = 0.5):
    """Upper-triangle pairs whose inclusion probability strictly exceeds ``a``."""
    if not (0.0 < a < 1.0):
        raise ValueError("edge threshold must lie in (0, 1)")
    K, p = pip.shape[0], pip.shape[1]
    iu = np.triu_indices(p, 1)
    edges = []
    for k in range(K):
        hits = pip[k, iu[0], iu[1]] > a
        edges.append(tuple(zip(iu[0][hits].tolist(), iu[1][hits].tolist())))
    return tuple(edges)


def count_sparse_parameters(result: FitResult) -> int:
    """Nonzero thresholded coefficients and means plus called edges."""
    th = result.thresholded
    return int(
        np.count_nonzero(th.beta)
        + np.count_nonzero(th.mu)
        + sum(len(e) for e in result.edges)
    )


def bic(d: Dataset, result: FitResult) -> float:
    """-2 x observed-data log-likelihood at the thresholded estimate plus
    log(n) times the sparse parameter count."""
    loglik = observed_data_loglik(d, result.thresholded)
    return float(-2.0 * loglik + np.log(d.n) * count_sparse_parameters(result))


def _fit_v0_chain(d, K, u, v0_grid, h_base, cfg):
    """Fits along one v0 chain at fixed (K, u), warm-starting each point
    from the previous MAP estimate."""
    from . import em  # deferred: em imports this module

    rows = []
    results = []
    prev = None
    for v0 in v0_grid:
        h = replace(h_base, v0=v0, u=u)
        row = {"K": K, "v0": v0, "u": u}
        try:
            init = prev.map_estimate if prev is not None else None
            res = em.fit(d, K, h, cfg, init_params=init)
            prev = res
            row.update(
                bic=res.bic,
                s_hat=count_sparse_parameters(res),
                converged=res.converged,
                failed=False,
                error="",
            )
        except (AllStartsDegenerateError, np.linalg.LinAlgError, ValueError) as err:
            res = None
            prev = None
            row.update(bic=np.nan, s_hat=-1, converged=False, failed=True, error=str(err))
        rows.append(row)
        results.append(res)
    return rows, results


def select_model(
    d: Dataset,
    K_grid: Sequence[int],
    v0_grid: Sequence[float],
    u_grid: Sequence[float],
    h_base: Hyperparams,
    cfg,
    n_jobs: int = 1,
):
    """Fit every (K, v0, u) grid point and pick the minimum-BIC model.

    Grid points along the v0 axis share a warm-start chain; the (K, u)
    chains are independent and may run in parallel.  Returns the winning
    FitResult and the full selection table (one dict per grid point, in
    (K, u, v0) iteration order).  Failed fits are kept in the table with
    ``failed=True``; ties are broken by smaller sparse-parameter count,
    then smaller K, then table order.
    """
    if not (len(K_grid) and len(v0_grid) and len(u_grid)):
        raise ValueError("all grids must be nonempty")
    chains = [(K, u) for K in K_grid for u in u_grid]
    outputs = Parallel(n_jobs=n_jobs)(
        delayed(_fit_v0_chain)(d, K, u, list(v0_grid), h_base, cfg) for K, u in chains
    )
    table = []
    candidates = []
    for rows, results in outputs:
        table.extend(rows)
        candidates.extend(results)
    order = sorted(
        (i for i, res in enumerate(candidates) if res is not None),
        key=lambda i: (table[i]["bic"], table[i]["s_hat"], table[i]["K"], i),
    )
    if not order:
        raise AllFitsFailedError("every grid point failed to fit")
    return candidates[order[0]], table
