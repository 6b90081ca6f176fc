"""Gaussian-copula dependence modeling.

Subband coefficients are pushed through their fitted marginal CDFs and
the standard normal quantile; the correlation matrix of the resulting
Gaussian scores captures the dependence within one group of subbands.
"""

from __future__ import annotations

import numpy as np
from scipy import linalg, special

from .errors import DegenerateSampleError, DomainError, NumericError, ShapeError
from .marginals import MarginalModel, marginal_cdf, marginal_log_pdf

# CDF values are kept away from {0, 1} so the quantile map stays finite.
CDF_CLIP = 1e-7

# Correlation matrices are shrunk toward the identity to guarantee
# invertibility even for large groups with near-duplicate members.
SIGMA_SHRINKAGE = 1e-3


def gaussian_quantile(u):
    """Inverse standard normal CDF; defined on the open interval (0, 1)."""
    arr = np.asarray(u, dtype=np.float64)
    if np.any(arr <= 0.0) or np.any(arr >= 1.0):
        raise DomainError("quantile argument must lie strictly inside (0, 1)")
    out = special.ndtri(arr)
    return float(out) if np.isscalar(u) else out


def clip_probabilities(u):
    return np.clip(u, CDF_CLIP, 1.0 - CDF_CLIP)


def gaussianize(subbands, models: list[MarginalModel]) -> np.ndarray:
    """Map coefficient vectors to Gaussian scores, one column per subband.

    Column j is ndtri(clip(F_j(x_j))) with the family-appropriate CDF of
    the j-th fitted model.
    """
    if len(subbands) != len(models):
        raise ShapeError(
            f"{len(subbands)} coefficient vectors but {len(models)} models")
    if not subbands:
        raise ShapeError("need at least one subband")
    vectors = [np.asarray(v, dtype=np.float64).ravel() for v in subbands]
    n = vectors[0].size
    for v in vectors:
        if v.size != n:
            raise ShapeError("coefficient vectors differ in length")
    out = np.empty((n, len(vectors)))
    for j, (v, model) in enumerate(zip(vectors, models)):
        u = clip_probabilities(marginal_cdf(v, model))
        out[:, j] = special.ndtri(u)
    return out


def fit_sigma(y: np.ndarray, stride: int = 1) -> np.ndarray:
    """Correlation matrix of Gaussian score columns, shrunk toward identity.

    ``stride`` deterministically subsamples rows (1 keeps every pixel).
    """
    y = np.asarray(y, dtype=np.float64)
    if y.ndim != 2 or y.shape[1] < 2:
        raise ShapeError("need a matrix with at least 2 columns")
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    y = y[::stride]
    if y.shape[0] < 256:
        raise ShapeError(f"need at least 256 rows after striding, got {y.shape[0]}")
    if np.any(np.var(y, axis=0) == 0.0):
        raise DegenerateSampleError("zero-variance column in score matrix")
    sigma = np.corrcoef(y, rowvar=False)
    sigma = 0.5 * (sigma + sigma.T)
    d = sigma.shape[0]
    sigma = (1.0 - SIGMA_SHRINKAGE) * sigma + SIGMA_SHRINKAGE * np.eye(d)
    return sigma


def copula_log_density(y_row, sigma: np.ndarray) -> float:
    """Log Gaussian-copula density at one vector of Gaussian scores:
    -log|Sigma|/2 - y'(Sigma^-1 - I)y/2."""
    y = np.asarray(y_row, dtype=np.float64).ravel()
    sigma = np.asarray(sigma, dtype=np.float64)
    if sigma.shape != (y.size, y.size):
        raise ShapeError(f"score vector of length {y.size} vs sigma {sigma.shape}")
    try:
        cho = linalg.cho_factor(sigma, lower=True)
    except linalg.LinAlgError as exc:
        raise NumericError(f"correlation matrix is not positive definite: {exc}") from exc
    logdet = 2.0 * float(np.sum(np.log(np.diag(cho[0]))))
    quad = float(y @ linalg.cho_solve(cho, y)) - float(y @ y)
    return -0.5 * logdet - 0.5 * quad


def joint_log_density(x_row, models: list[MarginalModel], sigma: np.ndarray) -> float:
    """Log density of the copula-plus-marginals joint model at one point."""
    x = np.asarray(x_row, dtype=np.float64).ravel()
    if len(models) != x.size:
        raise ShapeError(f"{x.size} coordinates but {len(models)} models")
    u = clip_probabilities(
        np.array([marginal_cdf(xi, m) for xi, m in zip(x, models)]))
    y = special.ndtri(u)
    marg = sum(float(marginal_log_pdf(xi, m)) for xi, m in zip(x, models))
    return copula_log_density(y, sigma) + marg
