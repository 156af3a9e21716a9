"""MAP-EM engine: E-step, M-step dispatch, multi-start fitting loop.

The E-step computes subgroup responsibilities in log space, slab membership
probabilities for every off-diagonal precision entry, and truncated-normal
moment imputations of the latent log survival time for censored subjects.
The M-step updates mixture weights in closed form and dispatches to the
regression and precision solvers.  Censored outcomes are handled by nested
latent-variable imputation so the regression block stays a weighted
penalized least-squares problem.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import expit, logsumexp
from scipy.stats import norm
from sklearn.cluster import KMeans
from sklearn.covariance import ledoit_wolf

from .exceptions import (
    AllStartsDegenerateError,
    DegenerateSubgroupWarning,
    MonotonicityError,
    NotPositiveDefiniteError,
)
from .likelihood import (
    LOG_2PI,
    gaussian_logpdf,
    log_density_terms,
    penalized_log_posterior,
)
from .precision import AdmmConfig, solve_precisions, update_means, weighted_scatter
from .regression import update_regression
from .types import (
    Dataset,
    FitResult,
    Hyperparams,
    ModelParams,
    Responsibilities,
    validate_dataset,
)

_VAR_FLOOR = 1e-3
_SD_FLOOR = 1e-8
_INIT_RETRIES = 5
_PROBE_STARTS = 20
_PROBE_ITER = 20
_PROBE_RIDGE = 1.0


def subgroup_count_floor(n: int) -> float:
    """Minimum responsibility mass per subgroup before a run is flagged."""
    return max(5.0, 0.01 * n)


@dataclass(frozen=True)
class EmConfig:
    """Controls for the EM loop and the downstream structure calls.

    ``init_method`` is one of "supervised" (outcome-aware restarts of a
    cheap regression-mixture probe; the default), "kmeans" (predictor-space
    clustering), or "random" (perturbed global estimates).  ``edge_rule``
    selects where posterior inclusion probabilities are evaluated for edge
    calling: "pip-thresholded" uses the thresholded estimate, "pip-map" the
    raw mode.  ``strict_checks`` turns on the per-iteration
    positive-definiteness and monotonicity assertions (relative slack
    ``monotone_slack``).
    """

    max_iter: int = 500
    rel_tol: float = 1e-5
    n_starts: int = 5
    init_method: str = "supervised"
    seed: int = 0
    admm: AdmmConfig = field(default_factory=AdmmConfig)
    threshold_scale: float = 1.0
    edge_threshold: float = 0.5
    edge_rule: str = "pip-thresholded"
    strict_checks: bool = True
    monotone_slack: float = 1e-8

    def validate(self) -> "EmConfig":
        if self.max_iter < 1 or self.n_starts < 1 or self.rel_tol <= 0:
            raise ValueError("max_iter >= 1, n_starts >= 1, rel_tol > 0 required")
        if self.init_method not in ("supervised", "kmeans", "random"):
            raise ValueError(f"unknown init_method {self.init_method!r}")
        if self.edge_rule not in ("pip-thresholded", "pip-map"):
            raise ValueError(f"unknown edge_rule {self.edge_rule!r}")
        if not (0.0 < self.edge_threshold < 1.0):
            raise ValueError("edge_threshold must lie in (0, 1)")
        self.admm.validate()
        return self


def e_step(d: Dataset, params: ModelParams, h: Hyperparams) -> Responsibilities:
    """Posterior expectations of all latent quantities at ``params``.

    Responsibilities are the row-wise softmax of the per-subgroup log joint
    terms.  Slab probabilities follow the two-Laplace posterior odds.  For
    censored subjects the latent outcome moments are those of a normal
    truncated to lie above the observed time.
    """
    terms = log_density_terms(d, params)
    log_norm = logsumexp(terms.log_total, axis=1, keepdims=True)
    rho = np.exp(terms.log_total - log_norm)

    w = np.abs(params.omega)
    log_odds = (
        np.log(h.p1)
        - np.log1p(-h.p1)
        + np.log(h.v0)
        - np.log(h.v1)
        + w * (1.0 / h.v0 - 1.0 / h.v1)
    )
    q = expit(log_odds)
    diag = np.arange(params.p)
    q[:, diag, diag] = 0.0

    # truncated-normal moments of the latent outcome, per subject and subgroup
    M = (d.X @ params.beta.T + params.beta0) / params.tau
    a = (d.t[:, None] - M) * params.tau
    hazard = np.exp(norm.logpdf(a) - norm.logsf(a))
    mean = M + hazard / params.tau
    var = np.maximum(1.0 + a * hazard - hazard * hazard, 0.0) / np.square(params.tau)
    event = d.delta[:, None] == 1
    zhat = np.where(event, d.t[:, None], mean)
    z2hat = np.where(event, np.square(d.t)[:, None], np.square(mean) + var)

    col_mass = rho.sum(axis=0)
    floor = subgroup_count_floor(d.n)
    if col_mass.min() < floor:
        warnings.warn(
            f"responsibility mass {col_mass.min():.3g} below floor {floor:.3g}",
            DegenerateSubgroupWarning,
            stacklevel=2,
        )
    return Responsibilities(rho=rho, q=q, zhat=zhat, z2hat=z2hat)


def m_step(
    d: Dataset,
    r: Responsibilities,
    p_prev: ModelParams,
    h: Hyperparams,
    admm: AdmmConfig | None = None,
    admm_state: dict | None = None,
) -> ModelParams:
    """One full M-step from previous parameters ``p_prev``.

    Mixture weights are responsibility averages; the regression blocks and
    the mean/precision blocks are updated by their dedicated solvers, with
    the similarity reference and the mean update's precision frozen at the
    previous iterate so every block is a coordinate ascent step.
    """
    K = p_prev.K
    pi = r.rho.sum(axis=0) / d.n

    beta0 = np.empty(K)
    beta = np.empty_like(p_prev.beta)
    tau = np.empty(K)
    for k in range(K):
        beta0[k], beta[k], tau[k] = update_regression(
            d, r, k, p_prev.beta[k], p_prev.beta0[k], p_prev.tau[k], h.lambda1
        )

    mu = update_means(d.X, r.rho, p_prev.omega, p_prev.mu, h.lambda2)

    S = np.empty_like(p_prev.omega)
    counts = np.empty(K)
    for k in range(K):
        S[k], counts[k] = weighted_scatter(d, r.rho[:, k], mu[k])
    omega, _ = solve_precisions(S, counts, r.q, h, p_prev.omega, admm, admm_state)

    return ModelParams(beta0=beta0, beta=beta, tau=tau, mu=mu, omega=omega, pi=pi)


def m_step_surrogate(
    d: Dataset,
    r: Responsibilities,
    params: ModelParams,
    h: Hyperparams,
    omega_ref: np.ndarray,
) -> float:
    """Expected complete-data penalized log-posterior given the E-step.

    This is the quantity each M-step maximizes: responsibilities, slab
    probabilities, imputed moments, and the similarity Laplacian reference
    are all held fixed.  Terms constant in the parameters are dropped.
    """
    n, K, p = d.n, params.K, params.p
    with np.errstate(divide="ignore"):
        log_pi = np.log(params.pi)
    val = 0.0
    for k in range(K):
        rho_k = r.rho[:, k]
        log_fx = gaussian_logpdf(d.X, params.mu[k], params.omega[k])
        tau = params.tau[k]
        m = params.beta0[k] + d.X @ params.beta[k]  # rescaled mean tau * E[z]
        quad = tau * tau * r.z2hat[:, k] - 2.0 * tau * r.zhat[:, k] * m + np.square(m)
        log_fz = np.log(tau) - 0.5 * LOG_2PI - 0.5 * quad
        lp = log_pi[k] if params.pi[k] > 0 else 0.0
        val += float(rho_k @ (log_fx + log_fz)) + float(rho_k.sum()) * lp

    iu = np.triu_indices(p, 1)
    w = r.q[:, iu[0], iu[1]] / h.v1 + (1.0 - r.q[:, iu[0], iu[1]]) / h.v0
    val -= float((w * np.abs(params.omega[:, iu[0], iu[1]])).sum())
    val -= h.tau0 * float(np.einsum("kjj->", params.omega))
    val -= h.lambda1 * float(np.abs(params.beta).sum())
    val -= h.lambda2 * float(np.abs(params.mu).sum())
    if h.u > 0 and K > 1:
        inv_v = 1.0 / np.sqrt(np.square(omega_ref[:, iu[0], iu[1]]) + h.eps * h.eps)
        y = params.omega[:, iu[0], iu[1]] * inv_v
        quad = K * np.square(y).sum(axis=0) - np.square(y.sum(axis=0))
        val -= 0.5 * h.u * float(quad.sum())
    return val


def _intercept_only_aft(t, delta):
    """(mean, sd) of observed event times, with fallbacks for tiny samples."""
    obs = t[delta == 1]
    if obs.size < 2:
        obs = t
    sd = float(obs.std()) if obs.size > 1 else 1.0
    return float(obs.mean()), max(sd, _SD_FLOOR)


def _probe_regression_mixture(X, t, K, rng):
    """Cheap mixture-of-ridge-regressions probe on the observed times.

    Runs a few short EM passes from random responsibilities and keeps the
    best run by mixture log-likelihood.  This supplies outcome-aware
    memberships and, crucially, differentiated regression directions:
    without them the full model starts at a symmetric saddle whenever the
    subgroups share their predictor means.  Censoring is ignored here; the
    probe only seeds the full fit.

    Returns (soft labels (n, K), native coefficients (K, p+1) with the
    intercept first, residual sds (K,)).
    """
    n, p = X.shape
    t_loc, t_scale = float(t.mean()), max(float(t.std()), _SD_FLOOR)
    tc = (t - t_loc) / t_scale
    Xd = np.column_stack([np.ones(n), X])
    eye = np.eye(p + 1)
    best = None
    best_ll = -np.inf
    for _ in range(_PROBE_STARTS):
        rho = rng.dirichlet(np.ones(K), size=n)
        coef = np.zeros((K, p + 1))
        sig = np.full(K, 1.0)
        pi = np.full(K, 1.0 / K)
        for _ in range(_PROBE_ITER):
            for k in range(K):
                w = rho[:, k]
                Xw = Xd * w[:, None]
                coef[k] = np.linalg.solve(Xw.T @ Xd + _PROBE_RIDGE * eye, Xw.T @ tc)
                resid = tc - Xd @ coef[k]
                sig[k] = max(float(np.sqrt(w @ resid**2 / max(w.sum(), 1e-9))), 1e-3)
                pi[k] = max(float(w.mean()), 1e-6)
            logp = np.stack(
                [
                    np.log(pi[k]) - np.log(sig[k]) - 0.5 * ((tc - Xd @ coef[k]) / sig[k]) ** 2
                    for k in range(K)
                ],
                axis=1,
            )
            rho = np.exp(logp - logsumexp(logp, axis=1, keepdims=True))
        ll = float(logsumexp(logp, axis=1).sum())
        if ll > best_ll:
            best_ll = ll
            best = (rho.copy(), coef.copy(), sig.copy())
    rho, coef, sig = best
    coef = coef * t_scale
    coef[:, 0] += t_loc
    return rho, coef, sig * t_scale


def _shrunk_precision(X_rows):
    """Inverse of a Ledoit-Wolf shrunk covariance with a small ridge floor."""
    p = X_rows.shape[1]
    if X_rows.shape[0] < 2:
        return np.eye(p) / _VAR_FLOOR
    cov, _ = ledoit_wolf(X_rows)
    cov += _VAR_FLOOR * np.eye(p)
    return np.linalg.inv(0.5 * (cov + cov.T))


def _initialize_supervised(d: Dataset, K: int, rng: np.random.Generator) -> ModelParams:
    n, p = d.n, d.p
    rho, coef, sig = _probe_regression_mixture(d.X, d.t, K, rng)
    labels = np.argmax(rho, axis=1)
    beta0 = np.empty(K)
    beta = np.empty((K, p))
    tau = np.empty(K)
    mu = np.empty((K, p))
    omega = np.empty((K, p, p))
    pi = np.maximum(rho.mean(axis=0), 1e-3)
    pi /= pi.sum()
    t_scale = max(float(d.t.std()), _SD_FLOOR)
    for k in range(K):
        mask = labels == k
        rows = d.X[mask] if mask.sum() >= 5 else d.X
        mu[k] = rows.mean(axis=0)
        omega[k] = _shrunk_precision(rows)
        tau[k] = 1.0 / max(sig[k], 1e-3 * t_scale)
        beta0[k] = coef[k, 0] * tau[k]
        beta[k] = coef[k, 1:] * tau[k]
    return ModelParams(beta0=beta0, beta=beta, tau=tau, mu=mu, omega=omega, pi=pi)


def initialize(
    d: Dataset, K: int, cfg: EmConfig, rng: np.random.Generator
) -> ModelParams:
    """Starting parameters for one EM run.

    supervised mode (default) seeds from a cheap outcome-aware
    regression-mixture probe.  kmeans mode clusters the predictor rows;
    each cluster supplies its mean, a floored diagonal precision, and an
    intercept-only survival fit on its uncensored subjects.  random mode
    perturbs the global versions of the same estimates.
    """
    n, p = d.n, d.p
    if cfg.init_method == "supervised" and K > 1:
        return _initialize_supervised(d, K, rng)
    if cfg.init_method == "kmeans" and K > 1:
        labels = None
        for _ in range(_INIT_RETRIES):
            km_seed = int(rng.integers(0, 2**31 - 1))
            cand = KMeans(n_clusters=K, n_init=10, random_state=km_seed).fit_predict(d.X)
            if len(np.unique(cand)) == K:
                labels = cand
                break
        if labels is None:
            raise RuntimeError(f"kmeans produced an empty cluster {_INIT_RETRIES} times")
    elif K == 1:
        labels = np.zeros(n, dtype=int)
    else:
        labels = rng.integers(0, K, size=n)
        for k in range(K):  # random mode still needs every cluster inhabited
            if not np.any(labels == k):
                labels[rng.integers(0, n)] = k

    beta0 = np.empty(K)
    tau = np.empty(K)
    mu = np.empty((K, p))
    omega = np.zeros((K, p, p))
    pi = np.empty(K)
    global_mean = d.X.mean(axis=0)
    global_sd = d.X.std(axis=0)
    for k in range(K):
        mask = labels == k
        pi[k] = mask.mean()
        if cfg.init_method == "random" and K > 1:
            mu[k] = global_mean + rng.normal(0.0, 0.1, size=p) * np.maximum(
                global_sd, np.sqrt(_VAR_FLOOR)
            )
            var = np.maximum(d.X.var(axis=0), _VAR_FLOOR)
            m_t, sd_t = _intercept_only_aft(d.t, d.delta)
            m_t += rng.normal(0.0, 0.1) * sd_t
        else:
            mu[k] = d.X[mask].mean(axis=0)
            var = np.maximum(d.X[mask].var(axis=0), _VAR_FLOOR)
            m_t, sd_t = _intercept_only_aft(d.t[mask], d.delta[mask])
        np.fill_diagonal(omega[k], 1.0 / var)
        tau[k] = 1.0 / sd_t
        beta0[k] = m_t * tau[k]
    beta = np.zeros((K, p))
    return ModelParams(beta0=beta0, beta=beta, tau=tau, mu=mu, omega=omega, pi=pi)


@dataclass(frozen=True)
class _RunOutcome:
    params: ModelParams
    trace: np.ndarray
    converged: bool
    iterations: int
    degenerate: bool


def _check_spd(omega: np.ndarray) -> None:
    for k in range(omega.shape[0]):
        min_eig = float(np.linalg.eigvalsh(omega[k]).min())
        if min_eig <= 0.0:
            raise NotPositiveDefiniteError(
                f"omega[{k}] iterate has min eigenvalue {min_eig:.3e}"
            )


def _run_em(
    d: Dataset, init_params: ModelParams, h: Hyperparams, cfg: EmConfig
) -> _RunOutcome:
    params = init_params
    trace = [penalized_log_posterior(d, params, h)]
    floor = subgroup_count_floor(d.n)
    converged = False
    degenerate = False
    iterations = 0
    slack = cfg.monotone_slack
    admm_state: dict = {}
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateSubgroupWarning)
        for iterations in range(1, cfg.max_iter + 1):
            r = e_step(d, params, h)
            if r.rho.sum(axis=0).min() < floor:
                degenerate = True
                break
            new_params = m_step(d, r, params, h, cfg.admm, admm_state)
            if cfg.strict_checks:
                _check_spd(new_params.omega)
                s_before = m_step_surrogate(d, r, params, h, params.omega)
                s_after = m_step_surrogate(d, r, new_params, h, params.omega)
                if s_after < s_before - slack * (1.0 + abs(s_before)):
                    raise MonotonicityError(
                        f"M-step surrogate decreased: {s_before:.10g} -> {s_after:.10g}"
                    )
            obj = penalized_log_posterior(d, new_params, h)
            if cfg.strict_checks and h.u == 0:
                if obj < trace[-1] - slack * (1.0 + abs(trace[-1])):
                    raise MonotonicityError(
                        f"penalized objective decreased at u=0: "
                        f"{trace[-1]:.10g} -> {obj:.10g}"
                    )
            delta = abs(obj - trace[-1])
            trace.append(obj)
            params = new_params
            if delta < cfg.rel_tol * max(1.0, abs(trace[-2])):
                converged = True
                break
    return _RunOutcome(
        params=params,
        trace=np.asarray(trace),
        converged=converged,
        iterations=iterations,
        degenerate=degenerate,
    )


def fit(
    d: Dataset,
    K: int,
    h: Hyperparams,
    cfg: EmConfig | None = None,
    init_params: ModelParams | None = None,
) -> FitResult:
    """Fit the K-subgroup model by multi-start MAP-EM.

    Runs ``cfg.n_starts`` initializations (or a single run from
    ``init_params`` when given), keeps the best non-degenerate run by final
    penalized objective with ties going to the earliest start, and fills in
    the thresholded estimate, inclusion probabilities, edge calls, and BIC.

    Raises
    ------
    AllStartsDegenerateError
        If every start collapsed a subgroup below the mass floor.
    """
    from . import selection  # deferred: selection imports this module

    validate_dataset(d)
    h.validate()
    cfg = (cfg or EmConfig()).validate()
    if K < 1:
        raise ValueError("K must be at least 1")

    if init_params is not None:
        runs = [_run_em(d, init_params, h, cfg)]
    else:
        seeds = np.random.SeedSequence(cfg.seed).spawn(cfg.n_starts)
        runs = [
            _run_em(d, initialize(d, K, cfg, np.random.default_rng(s)), h, cfg)
            for s in seeds
        ]

    best = None
    for run in runs:
        if run.degenerate:
            continue
        if best is None or run.trace[-1] > best.trace[-1]:
            best = run
    if best is None:
        raise AllStartsDegenerateError(
            f"all {len(runs)} starts collapsed a subgroup (floor "
            f"{subgroup_count_floor(d.n):.3g})"
        )

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateSubgroupWarning)
        r_final = e_step(d, best.params, h)
    memberships = np.argmax(r_final.rho, axis=1) + 1

    thresholded = selection.threshold_estimate(best.params, cfg.threshold_scale, d.n)
    pip_source = best.params if cfg.edge_rule == "pip-map" else thresholded
    pip = selection.compute_pip(pip_source.omega, h)
    edges = selection.call_edges(pip, cfg.edge_threshold)

    result = FitResult(
        map_estimate=best.params,
        thresholded=thresholded,
        pip=pip,
        edges=edges,
        memberships=memberships,
        bic=np.nan,
        objective_trace=best.trace,
        converged=best.converged,
        iterations=best.iterations,
    )
    return replace(result, bic=selection.bic(d, result))
