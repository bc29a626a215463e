"""Gaussian fit of action deltas and its KL divergence to an isotropic zero-mean target."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

from .errors import ConfigError, InsufficientSampleError, NumericalDegeneracyError, ShapeError

COV_REG = 1e-6


@dataclass(frozen=True)
class BatchPolicy:
    """Gaussian over action deltas; ``cov`` already includes the ridge term."""

    mean: np.ndarray
    cov: np.ndarray

    @property
    def dim(self) -> int:
        return self.mean.shape[0]


@dataclass(frozen=True)
class KlTarget:
    """Zero-mean Gaussian with covariance ``sigma * I`` (sigma is a variance)."""

    sigma: float
    dim: int

    def __post_init__(self):
        if not self.sigma > 0:
            raise ConfigError(f"target sigma must be positive, got {self.sigma}")
        if self.dim < 1:
            raise ConfigError(f"target dimension must be >= 1, got {self.dim}")


def fit_batch_policy(deltas: np.ndarray, reg: float = COV_REG) -> BatchPolicy:
    """Mean and unbiased covariance of the rows of ``deltas``, plus ``reg * I``."""
    d = np.asarray(deltas, dtype=np.float64)
    if d.ndim != 2:
        raise ShapeError(f"deltas must be a (batch, action_dim) matrix, got shape {d.shape}")
    b, l = d.shape
    if b < 2:
        raise InsufficientSampleError(f"need at least 2 rows to fit a covariance, got {b}")
    mean = d.mean(axis=0)
    centered = d - mean
    cov = centered.T @ centered / (b - 1)
    cov = 0.5 * (cov + cov.T)
    cov[np.diag_indices(l)] += reg
    return BatchPolicy(mean=mean, cov=cov)


def _chol(cov: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise NumericalDegeneracyError("batch covariance is not positive definite") from exc


def logdet_pd(cov: np.ndarray) -> float:
    """log-determinant of a positive-definite matrix via its Cholesky factor."""
    return float(2.0 * np.log(np.diag(_chol(cov))).sum())


def kl_to_isotropic(policy: BatchPolicy, target: KlTarget) -> float:
    """Closed-form KL( N(mean, cov) || N(0, sigma I) )."""
    if policy.dim != target.dim:
        raise ShapeError(f"policy dimension {policy.dim} != target dimension {target.dim}")
    l, s = target.dim, target.sigma
    mu = policy.mean
    quad = (np.trace(policy.cov) + mu @ mu) / s
    return float(0.5 * (quad - l + l * np.log(s) - logdet_pd(policy.cov)))


def kl_score(deltas: np.ndarray, target: KlTarget, reg: float = COV_REG) -> float:
    return kl_to_isotropic(fit_batch_policy(deltas, reg), target)


def kl_monte_carlo_oracle(
    policy: BatchPolicy,
    target: KlTarget,
    n: int = 10**6,
    seed: int | np.random.Generator | None = None,
) -> tuple[float, float]:
    """Sampling estimate of the same KL, returned as ``(estimate, standard_error)``.

    Draws from the policy with numpy and evaluates both log-densities with
    scipy, so it shares no arithmetic with :func:`kl_to_isotropic`.
    """
    if n < 10**4:
        raise ConfigError(f"need n >= 1e4 samples, got {n}")
    if policy.dim != target.dim:
        raise ShapeError(f"policy dimension {policy.dim} != target dimension {target.dim}")
    _chol(policy.cov)
    rng = np.random.default_rng(seed)
    x = rng.multivariate_normal(policy.mean, policy.cov, size=n, method="cholesky")
    log_p = stats.multivariate_normal(policy.mean, policy.cov).logpdf(x)
    log_q = stats.multivariate_normal(np.zeros(target.dim), target.sigma * np.eye(target.dim)).logpdf(x)
    diff = np.atleast_1d(log_p - log_q)
    return float(diff.mean()), float(diff.std(ddof=1) / np.sqrt(n))
