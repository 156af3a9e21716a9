"""scikit-learn style front end: a single estimator class wrapping the
functional core, plus the standardization helpers it shares with the CLI."""

from __future__ import annotations

from dataclasses import replace

import numpy as np
from scipy.special import logsumexp
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .em import EmConfig, fit as fit_map
from .likelihood import log_density_terms
from .precision import AdmmConfig
from .types import Dataset, FitResult, Hyperparams, ModelParams, native_coefficients

_SCALE_FLOOR = 1e-12


def standardize_dataset(d: Dataset):
    """Center and scale the predictor columns.

    Returns (standardized dataset, shift, scale).  Constant columns keep a
    unit scale so the transform stays invertible.
    """
    shift = d.X.mean(axis=0)
    scale = d.X.std(axis=0)
    scale = np.where(scale > _SCALE_FLOOR, scale, 1.0)
    meta = dict(d.meta)
    meta["standardized"] = True
    d_std = Dataset(t=d.t, delta=d.delta, X=(d.X - shift) / scale, meta=meta)
    return d_std, shift, scale


def destandardize_params(params: ModelParams, shift, scale) -> ModelParams:
    """Map parameters fitted on standardized predictors back to the input
    scale.  Zero patterns of beta and the precision off-diagonals are
    preserved; means pick up the shift."""
    shift = np.asarray(shift, dtype=float)
    scale = np.asarray(scale, dtype=float)
    beta = params.beta / scale
    beta0 = params.beta0 - params.beta @ (shift / scale)
    mu = shift + scale * params.mu
    omega = params.omega / np.outer(scale, scale)
    return replace(params, beta0=beta0, beta=beta, mu=mu, omega=omega)


def destandardize_result(result: FitResult, shift, scale) -> FitResult:
    """Back-transform both parameter sets of a fit; inclusion probabilities,
    edges, memberships, BIC, and the trace refer to the standardized fit and
    are unchanged."""
    return replace(
        result,
        map_estimate=destandardize_params(result.map_estimate, shift, scale),
        thresholded=destandardize_params(result.thresholded, shift, scale),
    )


class SurvivalNetworkMixture(BaseEstimator):
    """Mixture of Gaussian graphical models supervised by a censored
    survival outcome.

    Jointly estimates subgroup memberships, per-subgroup predictor networks
    (sparse precision matrices), and per-subgroup survival regressions, by
    multi-start MAP-EM with spike-and-slab shrinkage on precision entries
    and an optional cross-subgroup sign-similarity penalty.

    Parameters
    ----------
    n_components : int, default=2
        Number of subgroups.
    tau0 : float, default=1e-2
        Exponential rate on precision diagonals.
    v0, v1 : float, defaults 0.01 and 1.0
        Spike and slab Laplace scales (v0 < v1).
    p1 : float, default=0.5
        Prior slab probability.
    lambda1, lambda2 : float or None
        Laplace rates on regression coefficients and predictor means; None
        selects sqrt(n log p) at fit time.
    u : float, default=0.0
        Similarity-penalty strength (0 disables coupling).
    eps : float, default=1e-3
        Similarity smoothing constant.
    standardize : bool, default=True
        Center/scale predictor columns internally; reported parameters are
        mapped back to the input scale.
    threshold_scale : float, default=1.0
        Constant c of the sparsity threshold c * sqrt(K^3 log(p) / n).
    edge_threshold : float, default=0.5
        Inclusion-probability level above which a pair is called an edge.
    edge_rule : {"pip-thresholded", "pip-map"}, default="pip-thresholded"
        Whether edge probabilities are evaluated at the thresholded or the
        raw parameter estimate.
    max_iter, tol, n_starts, init, random_state
        EM loop controls; ``init`` is "supervised", "kmeans", or "random".
    admm_rho, admm_max_iter, admm_tol_abs, admm_tol_rel
        Inner ADMM controls for the precision solver.

    Attributes
    ----------
    result_ : FitResult with all fitted quantities (input scale).
    weights_, means_, precisions_ : mixture weights, (K, p) means, and
        (K, p, p) thresholded precision matrices.
    coefs_, intercepts_ : natural-scale survival regression parameters.
    scales_ : per-subgroup residual standard deviations of log time.
    labels_ : training-data subgroup labels in 1..K.
    pips_, edges_, bic_, converged_, n_iter_ : structure-call outputs.
    """

    def __init__(
        self,
        n_components=2,
        *,
        tau0=1e-2,
        v0=0.01,
        v1=1.0,
        p1=0.5,
        lambda1=None,
        lambda2=None,
        u=0.0,
        eps=1e-3,
        standardize=True,
        threshold_scale=1.0,
        edge_threshold=0.5,
        edge_rule="pip-thresholded",
        max_iter=500,
        tol=1e-5,
        n_starts=5,
        init="supervised",
        random_state=0,
        admm_rho=1.0,
        admm_max_iter=1000,
        admm_tol_abs=1e-6,
        admm_tol_rel=1e-4,
    ):
        self.n_components = n_components
        self.tau0 = tau0
        self.v0 = v0
        self.v1 = v1
        self.p1 = p1
        self.lambda1 = lambda1
        self.lambda2 = lambda2
        self.u = u
        self.eps = eps
        self.standardize = standardize
        self.threshold_scale = threshold_scale
        self.edge_threshold = edge_threshold
        self.edge_rule = edge_rule
        self.max_iter = max_iter
        self.tol = tol
        self.n_starts = n_starts
        self.init = init
        self.random_state = random_state
        self.admm_rho = admm_rho
        self.admm_max_iter = admm_max_iter
        self.admm_tol_abs = admm_tol_abs
        self.admm_tol_rel = admm_tol_rel

    def _hyperparams(self, n: int, p: int) -> Hyperparams:
        overrides = dict(
            tau0=self.tau0, v0=self.v0, v1=self.v1, p1=self.p1, u=self.u, eps=self.eps
        )
        if self.lambda1 is not None:
            overrides["lambda1"] = self.lambda1
        if self.lambda2 is not None:
            overrides["lambda2"] = self.lambda2
        return Hyperparams.defaults_for(n, p, **overrides)

    def _em_config(self) -> EmConfig:
        return EmConfig(
            max_iter=self.max_iter,
            rel_tol=self.tol,
            n_starts=self.n_starts,
            init_method=self.init,
            seed=int(self.random_state or 0),
            admm=AdmmConfig(
                rho=self.admm_rho,
                max_iter=self.admm_max_iter,
                tol_abs=self.admm_tol_abs,
                tol_rel=self.admm_tol_rel,
            ),
            threshold_scale=self.threshold_scale,
            edge_threshold=self.edge_threshold,
            edge_rule=self.edge_rule,
        ).validate()

    @staticmethod
    def _split_outcome(y):
        y = check_array(y, ensure_2d=True)
        if y.shape[1] != 2:
            raise ValueError(
                "y must have two columns: log observed time and event indicator"
            )
        return y[:, 0], y[:, 1]

    def fit(self, X, y):
        """Fit the mixture.

        Parameters
        ----------
        X : array-like of shape (n, p)
            Predictor matrix.
        y : array-like of shape (n, 2)
            Columns are the log observed time and the event indicator
            (1 observed, 0 censored).
        """
        X = check_array(X, ensure_min_samples=2)
        t, delta = self._split_outcome(y)
        d = Dataset.from_arrays(t, delta, X)
        if self.standardize:
            d_fit, shift, scale = standardize_dataset(d)
        else:
            d_fit, shift, scale = d, None, None

        h = self._hyperparams(d.n, d.p)
        result = fit_map(d_fit, int(self.n_components), h, self._em_config())
        if self.standardize:
            result = destandardize_result(result, shift, scale)

        self.result_ = result
        self.shift_ = shift
        self.scale_ = scale
        self.weights_ = result.map_estimate.pi
        self.means_ = result.map_estimate.mu
        self.precisions_ = result.thresholded.omega
        coefs, intercepts = native_coefficients(result.map_estimate)
        self.coefs_ = coefs
        self.intercepts_ = intercepts
        self.scales_ = 1.0 / result.map_estimate.tau
        self.labels_ = result.memberships
        self.pips_ = result.pip
        self.edges_ = result.edges
        self.bic_ = result.bic
        self.converged_ = result.converged
        self.n_iter_ = result.iterations
        return self

    def _log_resp(self, X, y=None):
        check_is_fitted(self, "result_")
        X = check_array(X)
        params = self.result_.map_estimate
        if y is None:
            t = np.zeros(X.shape[0])
            delta = np.ones(X.shape[0])
        else:
            t, delta = self._split_outcome(y)
        d = Dataset.from_arrays(t, delta, X)
        terms = log_density_terms(d, params)
        log_total = terms.log_total
        if y is None:
            log_total = log_total - terms.log_surv  # predictor evidence only
        return log_total - logsumexp(log_total, axis=1, keepdims=True)

    def predict_proba(self, X, y=None):
        """Posterior subgroup probabilities; survival information is used
        only when ``y`` is supplied."""
        return np.exp(self._log_resp(X, y))

    def predict(self, X, y=None):
        """Hard subgroup labels in 1..K."""
        return np.argmax(self._log_resp(X, y), axis=1) + 1

    def score(self, X, y):
        """Mean observed-data log-likelihood per subject."""
        check_is_fitted(self, "result_")
        X = check_array(X)
        t, delta = self._split_outcome(y)
        d = Dataset.from_arrays(t, delta, X)
        terms = log_density_terms(d, self.result_.map_estimate)
        return float(logsumexp(terms.log_total, axis=1).mean())
