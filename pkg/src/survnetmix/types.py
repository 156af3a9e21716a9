"""Core data containers shared by the fitting, selection, and simulation code.

All containers are frozen dataclasses holding numpy arrays.  They are treated
as immutable value objects: updates go through :func:`dataclasses.replace`,
never in-place mutation, so instances can be shared freely across workers.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Mapping

import numpy as np

from .exceptions import (
    DimensionMismatchError,
    InvalidIndicatorError,
    NonFiniteValueError,
    NonPositivePrecisionError,
    NotPositiveDefiniteError,
)

_SPD_EIG_TOL = 0.0  # eigenvalues must be strictly positive


@dataclass(frozen=True)
class Dataset:
    """Right-censored survival sample with a dense predictor matrix.

    Attributes
    ----------
    t : (n,) ndarray
        Log observed times, i.e. log of min(event time, censoring time).
    delta : (n,) ndarray
        Event indicators: 1 where the event was observed, 0 where censored.
    X : (n, p) ndarray
        Predictor matrix.
    meta : mapping
        Free-form provenance notes (e.g. whether columns were standardized).
    """

    t: np.ndarray
    delta: np.ndarray
    X: np.ndarray
    meta: Mapping[str, Any] = field(default_factory=dict, compare=False)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @classmethod
    def from_arrays(cls, t, delta, X, meta=None) -> "Dataset":
        """Coerce raw arrays to float64 and validate the result."""
        d = cls(
            t=np.asarray(t, dtype=float).ravel(),
            delta=np.asarray(delta, dtype=float).ravel(),
            X=np.asarray(X, dtype=float),
            meta=dict(meta or {}),
        )
        return validate_dataset(d)


def validate_dataset(d: Dataset) -> Dataset:
    """Check shapes, finiteness, and indicator coding; return ``d`` unchanged."""
    if d.X.ndim != 2:
        raise DimensionMismatchError(f"X must be 2-d, got shape {d.X.shape}")
    if d.t.ndim != 1 or d.delta.ndim != 1:
        raise DimensionMismatchError("t and delta must be 1-d vectors")
    n = d.X.shape[0]
    if n < 1 or d.X.shape[1] < 1:
        raise DimensionMismatchError(f"need n >= 1 and p >= 1, got X shape {d.X.shape}")
    if len(d.t) != n or len(d.delta) != n:
        raise DimensionMismatchError(
            f"length mismatch: len(t)={len(d.t)}, len(delta)={len(d.delta)}, rows(X)={n}"
        )
    if not np.isfinite(d.X).all():
        raise NonFiniteValueError("X contains non-finite entries")
    if not np.isfinite(d.t).all():
        raise NonFiniteValueError("t contains non-finite entries")
    if not np.isin(d.delta, (0, 1)).all():
        raise InvalidIndicatorError("delta entries must all be 0 or 1")
    return d


@dataclass(frozen=True)
class Hyperparams:
    """Prior and tuning constants.

    ``tau0`` is the Exponential rate on precision diagonals; ``v0 < v1`` are
    the spike and slab Laplace scales with slab probability ``p1``;
    ``lambda1`` and ``lambda2`` are Laplace rates on the regression
    coefficients and predictor means; ``u`` scales the cross-group similarity
    penalty smoothed by ``eps``.
    """

    tau0: float = 1e-2
    v0: float = 0.01
    v1: float = 1.0
    p1: float = 0.5
    lambda1: float = 1.0
    lambda2: float = 1.0
    u: float = 0.0
    eps: float = 1e-3

    def validate(self) -> "Hyperparams":
        if not (self.v1 > self.v0 > 0):
            raise ValueError(f"need v1 > v0 > 0, got v0={self.v0}, v1={self.v1}")
        if not (0 < self.p1 < 1):
            raise ValueError(f"p1 must lie in (0, 1), got {self.p1}")
        for name in ("tau0", "lambda1", "lambda2"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be strictly positive")
        if self.u < 0:
            raise ValueError("u must be nonnegative")
        if self.eps <= 0:
            raise ValueError("eps must be strictly positive")
        return self

    @classmethod
    def defaults_for(cls, n: int, p: int, **overrides) -> "Hyperparams":
        """Sample-size driven defaults for the Laplace penalties.

        The means penalty uses the universal-threshold scale sqrt(n log p).
        The coefficient penalty uses the rate sqrt(log p / n): the
        coefficients carry a factor of the noise precision, so a threshold-
        scale rate would crush strong survival signal; their sparsity is
        enforced by the post-fit threshold instead.
        """
        log_p = np.log(p) if p > 1 else 1.0
        base = dict(
            lambda1=float(np.sqrt(log_p / n)),
            lambda2=float(np.sqrt(n * log_p)),
        )
        base.update(overrides)
        return cls(**base).validate()


@dataclass(frozen=True)
class ModelParams:
    """Per-subgroup parameters of the mixture, on the rescaled coefficient
    scale where the regression coefficients carry a factor of the noise
    precision ``tau``.

    Attributes
    ----------
    beta0 : (K,) intercepts (rescaled).
    beta : (K, p) regression coefficients (rescaled).
    tau : (K,) noise precisions (1 / residual sd), strictly positive.
    mu : (K, p) predictor means.
    omega : (K, p, p) symmetric positive-definite precision matrices.
    pi : (K,) mixture weights summing to one.
    """

    beta0: np.ndarray
    beta: np.ndarray
    tau: np.ndarray
    mu: np.ndarray
    omega: np.ndarray
    pi: np.ndarray

    @property
    def K(self) -> int:
        return self.omega.shape[0]

    @property
    def p(self) -> int:
        return self.omega.shape[1]

    @classmethod
    def from_arrays(cls, beta0, beta, tau, mu, omega, pi) -> "ModelParams":
        return cls(
            beta0=np.asarray(beta0, dtype=float).ravel(),
            beta=np.asarray(beta, dtype=float),
            tau=np.asarray(tau, dtype=float).ravel(),
            mu=np.asarray(mu, dtype=float),
            omega=np.asarray(omega, dtype=float),
            pi=np.asarray(pi, dtype=float).ravel(),
        )

    def validate(self) -> "ModelParams":
        K, p = self.K, self.p
        shapes = {
            "beta0": (self.beta0.shape, (K,)),
            "beta": (self.beta.shape, (K, p)),
            "tau": (self.tau.shape, (K,)),
            "mu": (self.mu.shape, (K, p)),
            "omega": (self.omega.shape, (K, p, p)),
            "pi": (self.pi.shape, (K,)),
        }
        for name, (got, want) in shapes.items():
            if got != want:
                raise DimensionMismatchError(f"{name} has shape {got}, expected {want}")
        if np.any(self.tau <= 0):
            raise NonPositivePrecisionError("all tau entries must be strictly positive")
        if np.any(self.pi < 0) or abs(self.pi.sum() - 1.0) > 1e-8:
            raise ValueError("pi must be nonnegative and sum to one")
        for k in range(K):
            if not np.allclose(self.omega[k], self.omega[k].T, atol=1e-10):
                raise NotPositiveDefiniteError(f"omega[{k}] is not symmetric")
            if np.linalg.eigvalsh(self.omega[k]).min() <= _SPD_EIG_TOL:
                raise NotPositiveDefiniteError(f"omega[{k}] is not positive definite")
        return self


def native_coefficients(params: ModelParams) -> tuple[np.ndarray, np.ndarray]:
    """Undo the precision rescaling of the regression coefficients.

    Returns the (K, p) coefficient matrix and (K,) intercept vector on the
    natural outcome scale, i.e. beta / tau and beta0 / tau per subgroup.
    """
    if np.any(params.tau <= 0):
        raise NonPositivePrecisionError("tau must be strictly positive")
    return params.beta / params.tau[:, None], params.beta0 / params.tau


@dataclass(frozen=True)
class Responsibilities:
    """E-step output.

    Attributes
    ----------
    rho : (n, K) posterior subgroup membership probabilities, rows sum to one.
    q : (K, p, p) slab membership probabilities of the off-diagonal precision
        entries (symmetric, zero diagonal).
    zhat : (n, K) conditional means of the latent log survival time; equals
        the observed time where the event was observed.
    z2hat : (n, K) conditional second moments of the latent log survival time.
    """

    rho: np.ndarray
    q: np.ndarray
    zhat: np.ndarray
    z2hat: np.ndarray


@dataclass(frozen=True)
class FitResult:
    """Everything produced by one model fit.

    ``map_estimate`` is the penalized-posterior mode; ``thresholded`` zeroes
    its small sparse entries; ``pip`` holds per-edge posterior inclusion
    probabilities with a zero sentinel on the diagonal; ``edges[k]`` lists
    0-based (j, l) pairs with j < l whose PIP exceeds the calling threshold;
    ``memberships`` holds hard subgroup labels in 1..K.
    """

    map_estimate: ModelParams
    thresholded: ModelParams
    pip: np.ndarray
    edges: tuple[tuple[tuple[int, int], ...], ...]
    memberships: np.ndarray
    bic: float
    objective_trace: np.ndarray
    converged: bool
    iterations: int
