"""Joint M-step solver for the subgroup precision matrices, plus the
coordinate-descent update of the predictor means.

The precision subproblem maximizes, over symmetric positive-definite
Omega_1..Omega_K,

    sum_k (n_k/2) [logdet(Omega_k) - tr(S_k Omega_k)]
    - tau0 * sum_k sum_j omega_{k,jj}
    - sum_k sum_{j<l} w_{k,jl} |omega_{k,jl}|
    - (u/2) * sum_{j<l} omega_{jl}' L^{(jl)} omega_{jl},

where w_{k,jl} = q_{k,jl}/v1 + (1 - q_{k,jl})/v0 mixes the slab and spike
Laplace rates by the E-step slab probabilities, and L^{(jl)} is the K x K
similarity Laplacian built from a frozen reference iterate (a
majorize-minimize device: freezing keeps the nonsmooth subproblem convex).

The solver is consensus ADMM.  The smooth update has an eigendecomposition
closed form whose eigenvalues are positive roots of a quadratic, so every
returned iterate is positive definite by construction.  The nonsmooth update
decouples over the diagonal (a linear shift) and over unordered index pairs,
each a K-dimensional quadratic-plus-weighted-L1 problem solved by cyclic
coordinate soft thresholding in fixed subgroup order.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .exceptions import ConvergenceWarning, DegenerateSubgroupError
from .types import Dataset, Hyperparams

_PAIR_SOLVE_TOL = 1e-10
_PAIR_SOLVE_MAX_SWEEPS = 500
_MEANS_TOL = 1e-8
_MEANS_MAX_SWEEPS = 1000


@dataclass(frozen=True)
class AdmmConfig:
    """Consensus-ADMM controls.

    The penalty parameter adapts by the standard x2 / /2 residual-balancing
    rule within [rho_min, rho_max] unless ``adapt`` is off.
    """

    rho: float = 1.0
    tol_abs: float = 1e-6
    tol_rel: float = 1e-4
    max_iter: int = 1000
    adapt: bool = True
    rho_min: float = 1e-3
    rho_max: float = 1e3

    def validate(self) -> "AdmmConfig":
        if min(self.rho, self.tol_abs, self.tol_rel) <= 0 or self.max_iter < 1:
            raise ValueError("all ADMM controls must be positive")
        return self


def soft_threshold(x, thresh):
    return np.sign(x) * np.maximum(np.abs(x) - thresh, 0.0)


def similarity_laplacian(ref: np.ndarray, eps: float) -> np.ndarray:
    """K x K similarity Laplacian at reference edge values ``ref`` (K,).

    Diagonal entries are (K-1)/(ref_k^2 + eps^2); off-diagonals are
    -1/sqrt((ref_k^2 + eps^2)(ref_k'^2 + eps^2)).  The matrix is positive
    semidefinite with (sqrt(ref_1^2 + eps^2), ...) in its null space.
    """
    ref = np.asarray(ref, dtype=float)
    K = ref.shape[0]
    inv_v = 1.0 / np.sqrt(np.square(ref) + eps * eps)
    L = -np.outer(inv_v, inv_v)
    np.fill_diagonal(L, (K - 1) * np.square(inv_v))
    return L


def weighted_scatter(d: Dataset, rho_k: np.ndarray, mu_k: np.ndarray, floor: float = 1e-10):
    """Responsibility-weighted scatter matrix around ``mu_k``.

    Returns (S_k, n_k) with S_k = sum_i rho_i (x_i - mu)(x_i - mu)' / n_k and
    n_k = sum_i rho_i.  Raises if the effective count falls below ``floor``.
    """
    rho_k = np.asarray(rho_k, dtype=float)
    n_k = float(rho_k.sum())
    if n_k <= floor:
        raise DegenerateSubgroupError(f"effective count {n_k:.3g} below floor {floor:.3g}")
    dev = d.X - np.asarray(mu_k, dtype=float)
    S = (dev * rho_k[:, None]).T @ dev / n_k
    return 0.5 * (S + S.T), n_k


def precision_objective(omega, S, counts, weights, tau0, u, omega_ref, eps) -> float:
    """Value of the (concave) precision subproblem objective at ``omega``.

    ``weights`` carries the elementwise L1 rates (only the off-diagonal
    upper triangle is read); the similarity Laplacians are frozen at
    ``omega_ref``.  Raises LinAlgError when any omega_k is not PD.
    """
    omega = np.asarray(omega, dtype=float)
    K, p = omega.shape[0], omega.shape[1]
    val = 0.0
    for k in range(K):
        sign, logdet = np.linalg.slogdet(omega[k])
        if sign <= 0:
            raise np.linalg.LinAlgError("omega iterate left the PD cone")
        val += 0.5 * counts[k] * (logdet - float(np.sum(S[k] * omega[k])))
        val -= tau0 * float(np.trace(omega[k]))
    iu = np.triu_indices(p, 1)
    val -= float((weights[:, iu[0], iu[1]] * np.abs(omega[:, iu[0], iu[1]])).sum())
    if u > 0 and K > 1:
        w = omega[:, iu[0], iu[1]]
        inv_v = 1.0 / np.sqrt(np.square(omega_ref[:, iu[0], iu[1]]) + eps * eps)
        y = w * inv_v
        quad = K * np.square(y).sum(axis=0) - np.square(y.sum(axis=0))
        val -= 0.5 * u * float(quad.sum())
    return val


def _solve_pair_problems(z, c, inv_v, weights, rho, u, K):
    """Minimize, independently per pair, rho ||z - c||^2 + sum_k w_k |z_k|
    + (u/2) z' L z by cyclic coordinate soft thresholding.

    All arguments are (K, npairs) arrays except the scalars; ``z`` is the
    warm start and is overwritten.  The factor on the proximal term is rho
    (not rho/2) because each unordered pair appears twice in the Frobenius
    coupling of the symmetric consensus variable.
    """
    a_diag = 2.0 * rho + u * (K - 1) * np.square(inv_v)
    T = (z * inv_v).sum(axis=0)
    for _ in range(_PAIR_SOLVE_MAX_SWEEPS):
        delta_max = 0.0
        for k in range(K):
            b = 2.0 * rho * c[k] + u * inv_v[k] * (T - z[k] * inv_v[k])
            z_new = soft_threshold(b, weights[k]) / a_diag[k]
            step = z_new - z[k]
            if u > 0:
                T += step * inv_v[k]
            delta_max = max(delta_max, float(np.abs(step).max(initial=0.0)))
            z[k] = z_new
        if delta_max < _PAIR_SOLVE_TOL:
            break
    return z


def solve_precisions(
    S: np.ndarray,
    counts: np.ndarray,
    q: np.ndarray,
    h: Hyperparams,
    omega_prev: np.ndarray,
    cfg: AdmmConfig | None = None,
    state: dict | None = None,
):
    """Solve the joint penalized precision subproblem.

    Parameters
    ----------
    S : (K, p, p) weighted scatter matrices (symmetric PSD).
    counts : (K,) effective subgroup sizes (positive).
    q : (K, p, p) slab probabilities from the E-step.
    h : Hyperparams supplying tau0, v0, v1, u, eps.
    omega_prev : (K, p, p) previous iterate; warm start and similarity
        reference.
    cfg : AdmmConfig, optional.
    state : dict, optional
        Carries the splitting variable, scaled dual, and penalty parameter
        between successive calls (updated in place).  Warm-starting the
        dual cuts the iteration count sharply when the subproblem drifts
        slowly, as it does across EM iterations.

    Returns
    -------
    omega : (K, p, p) positive-definite solution stack (the smooth-block
        iterate, PD by construction).
    info : dict with iterations, primal/dual residuals, final rho, and a
        convergence flag.  A ``ConvergenceWarning`` is issued when the
        iteration limit is hit.
    """
    cfg = (cfg or AdmmConfig()).validate()
    S = np.asarray(S, dtype=float)
    counts = np.asarray(counts, dtype=float)
    K, p = S.shape[0], S.shape[1]
    if np.any(counts <= 0):
        raise DegenerateSubgroupError("all effective counts must be positive")

    iu = np.triu_indices(p, 1)
    weights = q / h.v1 + (1.0 - q) / h.v0  # only off-diagonals are used
    w_pairs = weights[:, iu[0], iu[1]]
    inv_v = 1.0 / np.sqrt(np.square(omega_prev[:, iu[0], iu[1]]) + h.eps * h.eps)

    omega = omega_prev.copy()
    state = state if state is not None else {}
    Z = state.get("Z", omega_prev).copy()
    U = state.get("U", np.zeros_like(omega)).copy()
    rho = state.get("rho", cfg.rho)
    dim = np.sqrt(K * p * p)

    # ascent reference: a warm-started run must not end below the previous
    # iterate's subproblem objective, or the EM surrogate would decrease
    obj_ref = precision_objective(
        omega_prev, S, counts, weights, h.tau0, h.u, omega_prev, h.eps
    )
    obj_slack = 1e-9 * (1.0 + abs(obj_ref))

    converged = False
    cold_restarted = False
    r_norm = s_norm = np.inf
    it = 0
    while it < cfg.max_iter:
        it += 1
        # smooth block: eigendecomposition closed form, eigenvalues are the
        # positive roots of rho*e^2 - d*e - n_k/2 = 0
        for k in range(K):
            M = rho * (Z[k] - U[k]) - 0.5 * counts[k] * S[k]
            M = 0.5 * (M + M.T)
            d_eig, Q = np.linalg.eigh(M)
            e = (d_eig + np.sqrt(np.square(d_eig) + 2.0 * rho * counts[k])) / (2.0 * rho)
            omega[k] = (Q * e) @ Q.T
            omega[k] = 0.5 * (omega[k] + omega[k].T)

        Z_old = Z.copy()
        C = omega + U
        C = 0.5 * (C + np.transpose(C, (0, 2, 1)))
        z_pairs = Z[:, iu[0], iu[1]].copy()
        c_pairs = C[:, iu[0], iu[1]]
        z_pairs = _solve_pair_problems(z_pairs, c_pairs, inv_v, w_pairs, rho, h.u, K)
        Z = np.zeros_like(Z)
        Z[:, iu[0], iu[1]] = z_pairs
        Z += np.transpose(Z, (0, 2, 1))
        diag_idx = np.arange(p)
        Z[:, diag_idx, diag_idx] = C[:, diag_idx, diag_idx] - h.tau0 / rho

        U += omega - Z

        r_norm = float(np.linalg.norm(omega - Z))
        s_norm = float(rho * np.linalg.norm(Z - Z_old))
        eps_pri = dim * cfg.tol_abs + cfg.tol_rel * max(
            np.linalg.norm(omega), np.linalg.norm(Z)
        )
        eps_dual = dim * cfg.tol_abs + cfg.tol_rel * rho * float(np.linalg.norm(U))
        if r_norm <= eps_pri and s_norm <= eps_dual:
            if (
                precision_objective(
                    omega, S, counts, weights, h.tau0, h.u, omega_prev, h.eps
                )
                >= obj_ref - obj_slack
            ):
                converged = True
                break
            if not cold_restarted:  # stale dual state; redo from scratch
                cold_restarted = True
                Z = omega_prev.copy()
                U = np.zeros_like(omega)
                rho = cfg.rho
                continue

        if cfg.adapt:
            if r_norm > 10.0 * s_norm and rho * 2.0 <= cfg.rho_max:
                rho *= 2.0
                U /= 2.0
            elif s_norm > 10.0 * r_norm and rho / 2.0 >= cfg.rho_min:
                rho /= 2.0
                U *= 2.0

    if not converged:
        warnings.warn(
            f"precision ADMM hit max_iter={cfg.max_iter} "
            f"(primal {r_norm:.2e}, dual {s_norm:.2e})",
            ConvergenceWarning,
            stacklevel=2,
        )
    state["Z"], state["U"], state["rho"] = Z, U, rho
    info = {
        "iterations": it,
        "primal_residual": r_norm,
        "dual_residual": s_norm,
        "rho": rho,
        "converged": converged,
    }
    return omega, info


def update_means(
    X: np.ndarray,
    rho: np.ndarray,
    omega: np.ndarray,
    mu_prev: np.ndarray,
    lambda2: float,
    tol: float = _MEANS_TOL,
):
    """Cyclic coordinate descent for the L1-penalized predictor means.

    Per subgroup k, maximizes
    -0.5 sum_i rho_{i,k} (x_i - mu)' Omega_k (x_i - mu) - lambda2 ||mu||_1.
    Each coordinate has the closed form soft(b_j, lambda2) / (n_k w_jj)
    where b_j is the partial-residual inner product against Omega_k.
    """
    X = np.asarray(X, dtype=float)
    K, p = omega.shape[0], omega.shape[1]
    mu = np.array(mu_prev, dtype=float, copy=True)
    for k in range(K):
        r_k = rho[:, k]
        n_k = float(r_k.sum())
        if n_k <= 0:
            raise DegenerateSubgroupError("zero responsibility mass in mean update")
        om = omega[k]
        om_s = om @ (r_k @ X)
        om_mu = om @ mu[k]
        diag = np.diag(om)
        for _ in range(_MEANS_MAX_SWEEPS):
            delta_max = 0.0
            for j in range(p):
                b = om_s[j] - n_k * (om_mu[j] - diag[j] * mu[k, j])
                mag = abs(b) - lambda2
                new = 0.0 if mag <= 0.0 else (mag if b > 0 else -mag) / (n_k * diag[j])
                step = new - mu[k, j]
                if step != 0.0:
                    om_mu += om[:, j] * step
                    mu[k, j] = new
                    if abs(step) > delta_max:
                        delta_max = abs(step)
            if delta_max < tol:
                break
    return mu
