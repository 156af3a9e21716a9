"""Log densities, survival terms, and the penalized log-posterior objective.

All functions are pure and operate on the rescaled parameterization of
:class:`~survnetmix.types.ModelParams`: the latent log survival time in
subgroup k is N((beta0_k + beta_k' x) / tau_k, tau_k^{-2}).  Censoring-time
density factors are omitted everywhere: under random censoring they are
identical across subgroups, carry no model parameters, and cancel from
responsibilities, so dropping them changes every objective by a constant.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import logsumexp
from scipy.stats import norm

from .exceptions import NonPositivePrecisionError, NotPositiveDefiniteError
from .types import Dataset, Hyperparams, ModelParams

LOG_2PI = float(np.log(2.0 * np.pi))

# Lowest value the log survival function may take, roughly log of the
# smallest subnormal double; keeps exp() of the result strictly positive.
LOG_SURVIVAL_FLOOR = -745.0


@dataclass(frozen=True)
class LogDensityTerms:
    """Per-subject, per-subgroup log-density pieces.

    ``log_fx`` holds the Gaussian predictor log densities, ``log_surv`` the
    outcome terms (log density where the event was observed, log survival
    where censored), and ``log_total`` their sum plus log mixture weights.
    All arrays are (n, K).
    """

    log_fx: np.ndarray
    log_surv: np.ndarray
    log_total: np.ndarray


def _chol_lower(omega: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(omega)
    except np.linalg.LinAlgError as err:
        raise NotPositiveDefiniteError(
            "precision matrix is not positive definite"
        ) from err


def gaussian_logpdf(x, mu, omega):
    """Log density of N(mu, omega^{-1}) parameterized by the precision matrix.

    Parameters
    ----------
    x : (p,) or (n, p) array
        Evaluation point(s).
    mu : (p,) array
        Mean vector.
    omega : (p, p) array
        Symmetric positive-definite precision matrix.

    Returns
    -------
    float or (n,) ndarray
    """
    x = np.asarray(x, dtype=float)
    mu = np.asarray(mu, dtype=float)
    omega = np.asarray(omega, dtype=float)
    p = omega.shape[0]
    L = _chol_lower(omega)
    logdet = 2.0 * np.log(np.diag(L)).sum()
    dev = np.atleast_2d(x) - mu
    half = L.T @ dev.T  # omega = L L', so quad = ||L' dev||^2
    quad = np.einsum("ij,ij->j", half, half)
    out = 0.5 * logdet - 0.5 * p * LOG_2PI - 0.5 * quad
    return float(out[0]) if x.ndim == 1 else out


def aft_log_terms(t, delta, x, beta0, beta, tau):
    """Outcome log-likelihood contribution of one subgroup.

    With m = (beta0 + beta' x) / tau, returns the log normal density of t
    around m (sd 1/tau) where delta is 1, and the log upper-tail probability
    log(1 - Phi(tau (t - m))) where delta is 0.  The survival branch is
    computed with the stable complementary log-CDF and floored at
    ``LOG_SURVIVAL_FLOOR`` so it stays finite for all finite inputs.

    Scalars or aligned arrays are accepted for ``t`` and ``delta`` (with
    ``x`` then (n, p)); the return matches the input shape.
    """
    if tau <= 0:
        raise NonPositivePrecisionError(f"tau must be positive, got {tau}")
    t = np.asarray(t, dtype=float)
    delta = np.asarray(delta)
    x = np.asarray(x, dtype=float)
    m = (beta0 + np.atleast_2d(x) @ np.asarray(beta, dtype=float)) / tau
    m = m if t.ndim else float(m[0])
    a = (t - m) * tau
    log_pdf = np.log(tau) - 0.5 * LOG_2PI - 0.5 * np.square(a)
    log_sf = np.maximum(norm.logsf(a), LOG_SURVIVAL_FLOOR)
    out = np.where(delta == 1, log_pdf, log_sf)
    return float(out) if t.ndim == 0 else out


def log_density_terms(d: Dataset, params: ModelParams) -> LogDensityTerms:
    """Evaluate all (n, K) log-density pieces for a dataset."""
    n, K = d.n, params.K
    log_fx = np.empty((n, K))
    log_surv = np.empty((n, K))
    for k in range(K):
        log_fx[:, k] = gaussian_logpdf(d.X, params.mu[k], params.omega[k])
        log_surv[:, k] = aft_log_terms(
            d.t, d.delta, d.X, params.beta0[k], params.beta[k], params.tau[k]
        )
    with np.errstate(divide="ignore"):
        log_pi = np.log(params.pi)
    log_total = log_fx + log_surv + log_pi
    return LogDensityTerms(log_fx=log_fx, log_surv=log_surv, log_total=log_total)


def observed_data_loglik(d: Dataset, params: ModelParams) -> float:
    """Mixture log-likelihood of (t, delta, X) with memberships summed out."""
    terms = log_density_terms(d, params)
    return float(logsumexp(terms.log_total, axis=1).sum())


def spike_slab_log_marginal(omega_offdiag, h: Hyperparams):
    """Log of the two-component Laplace mixture density, elementwise."""
    w = np.abs(np.asarray(omega_offdiag, dtype=float))
    log_slab = np.log(h.p1) - np.log(2.0 * h.v1) - w / h.v1
    log_spike = np.log1p(-h.p1) - np.log(2.0 * h.v0) - w / h.v0
    return np.logaddexp(log_slab, log_spike)

def similarity_quadratic(omega: np.ndarray, eps: float) -> float:
    """Sum over unordered pairs (j, l) of the sign-similarity quadratic form
    evaluated self-consistently at omega.

    For each pair, with s_k = w_k / sqrt(w_k^2 + eps^2), the form equals
    0.5 * sum_{k != k'} (s_k - s_{k'})^2 = K ||s||^2 - (sum_k s_k)^2.
    """
    K, p = omega.shape[0], omega.shape[1]
    iu = np.triu_indices(p, 1)
    w = omega[:, iu[0], iu[1]]  # (K, npairs)
    s = w / np.sqrt(np.square(w) + eps * eps)
    return float((K * np.square(s).sum(axis=0) - np.square(s.sum(axis=0))).sum())


def penalized_log_posterior(d: Dataset, params: ModelParams, h: Hyperparams) -> float:
    """Marginal penalized objective monitored for convergence and reporting.

    Sums the observed-data mixture log-likelihood with the log priors:
    Exponential on precision diagonals, the marginal spike-and-slab Laplace
    mixture on upper-triangle precision entries, Laplace on regression
    coefficients and predictor means, and the similarity quadratic evaluated
    self-consistently at the current precision entries.  Additive constants
    that do not involve any parameter are dropped.
    """
    loglik = observed_data_loglik(d, params)
    K, p = params.K, params.p
    diag = np.einsum("kjj->kj", params.omega)
    prior = -h.tau0 * diag.sum()
    iu = np.triu_indices(p, 1)
    prior += spike_slab_log_marginal(params.omega[:, iu[0], iu[1]], h).sum()
    prior -= h.lambda1 * np.abs(params.beta).sum()
    prior -= h.lambda2 * np.abs(params.mu).sum()
    if h.u > 0 and K > 1:
        prior -= 0.5 * h.u * similarity_quadratic(params.omega, h.eps)
    return loglik + prior
