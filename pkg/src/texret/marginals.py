"""Marginal models for subband coefficients.

Two heavy-tailed families are supported: the generalized Gaussian
(scale alpha, shape beta, location mu) and the t location-scale
(location mu, scale sigma, degrees of freedom nu).  Densities and
distribution functions are closed-form; fitting is maximum likelihood
(Newton-Raphson on the shape for GG, EM with a one-dimensional root
search for the degrees of freedom for TLS).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import optimize, special

from .errors import DegenerateSampleError

GG_BETA_RANGE = (0.05, 5.0)
TLS_NU_RANGE = (0.5, 100.0)

FAMILY_GG = "gg"
FAMILY_TLS = "tls"


@dataclass(frozen=True)
class GgParams:
    alpha: float
    beta: float
    mu: float = 0.0


@dataclass(frozen=True)
class TlsParams:
    mu: float
    sigma: float
    nu: float


@dataclass(frozen=True)
class MarginalModel:
    """One fitted marginal: the family tag plus its parameter record."""

    family: str
    params: GgParams | TlsParams

    def __post_init__(self):
        expected = {FAMILY_GG: GgParams, FAMILY_TLS: TlsParams}.get(self.family)
        if expected is None:
            raise ValueError(f"unknown marginal family {self.family!r}")
        if not isinstance(self.params, expected):
            raise ValueError(f"family {self.family!r} needs {expected.__name__}")


@dataclass(frozen=True)
class FitInfo:
    """Diagnostics attached to one fit: convergence and clamping flags."""

    converged: bool = True
    clamped: bool = False
    iterations: int = 0


# ---------------------------------------------------------------------------
# Generalized Gaussian
# ---------------------------------------------------------------------------

def gg_log_pdf(x, p: GgParams):
    x = np.asarray(x, dtype=np.float64)
    z = np.abs(x - p.mu) / p.alpha
    return (np.log(p.beta) - np.log(2.0 * p.alpha) - special.gammaln(1.0 / p.beta)
            - z ** p.beta)


def gg_pdf(x, p: GgParams):
    return np.exp(gg_log_pdf(x, p))


def gg_cdf(x, p: GgParams):
    """Distribution function via the regularized lower incomplete gamma."""
    x = np.asarray(x, dtype=np.float64)
    z = np.abs(x - p.mu) / p.alpha
    tail = special.gammainc(1.0 / p.beta, z ** p.beta)
    return 0.5 + 0.5 * np.sign(x - p.mu) * tail


def _check_samples(samples, minimum: int) -> np.ndarray:
    x = np.asarray(samples, dtype=np.float64).ravel()
    if x.size < minimum:
        raise ValueError(f"need at least {minimum} samples, got {x.size}")
    if not np.all(np.isfinite(x)):
        raise ValueError("samples contain non-finite values")
    if np.var(x) == 0.0:
        raise DegenerateSampleError("samples have zero variance")
    return x


def kurtosis(samples) -> float:
    """Plain (non-excess) sample kurtosis m4 / m2^2."""
    x = np.asarray(samples, dtype=np.float64).ravel()
    if x.size < 4:
        raise ValueError(f"need at least 4 samples, got {x.size}")
    c = x - x.mean()
    m2 = np.mean(c ** 2)
    if m2 == 0.0:
        raise DegenerateSampleError("samples have zero variance")
    return float(np.mean(c ** 4) / m2 ** 2)


def _gg_kurtosis(beta: float) -> float:
    # m4/m2^2 of a generalized Gaussian with shape beta
    return float(np.exp(special.gammaln(1.0 / beta) + special.gammaln(5.0 / beta)
                        - 2.0 * special.gammaln(3.0 / beta)))


def _gg_beta_from_kurtosis(k: float) -> float:
    lo, hi = GG_BETA_RANGE
    if k >= _gg_kurtosis(lo):
        return lo
    if k <= _gg_kurtosis(hi):
        return hi
    return float(optimize.brentq(lambda b: _gg_kurtosis(b) - k, lo, hi, xtol=1e-10))


def fit_gg_full(samples) -> tuple[GgParams, FitInfo]:
    """ML fit of a generalized Gaussian; also returns fit diagnostics.

    The location is pinned to the sample mean (models are stored
    centered), then the shape solves the profiled likelihood equation by
    Newton-Raphson from a kurtosis-matched start; the scale follows in
    closed form.
    """
    x = _check_samples(samples, 256)
    mu = float(x.mean())
    z = x - mu
    scale = float(np.sqrt(np.mean(z ** 2)))
    z = z / scale
    az = np.abs(z)
    nonzero = az > 0.0
    log_az = np.zeros_like(az)
    log_az[nonzero] = np.log(az[nonzero])
    n = az.size

    def newton_fn(beta: float) -> tuple[float, float]:
        w = np.zeros_like(az)
        w[nonzero] = az[nonzero] ** beta
        S = float(np.sum(w))
        T = float(np.sum(w * log_az))
        U = float(np.sum(w * log_az ** 2))
        lam = np.log(beta * S / n)
        g = (1.0 + special.psi(1.0 / beta) / beta - T / S + lam / beta)
        gp = (-special.polygamma(1, 1.0 / beta) / beta ** 3
              - special.psi(1.0 / beta) / beta ** 2
              - (U * S - T * T) / S ** 2
              + 1.0 / beta ** 2 + T / (S * beta) - lam / beta ** 2)
        return g, gp

    beta0 = _gg_beta_from_kurtosis(kurtosis(x))
    beta = beta0
    lo, hi = GG_BETA_RANGE
    converged = False
    iterations = 0
    for iterations in range(1, 101):
        g, gp = newton_fn(beta)
        if gp == 0.0 or not np.isfinite(gp):
            break
        step = g / gp
        new_beta = min(max(beta - step, lo), hi)
        if abs(new_beta - beta) < 1e-10:
            beta = new_beta
            converged = True
            break
        beta = new_beta
    if not converged:
        beta = beta0  # moment fallback
    clamped = beta in (lo, hi)

    w = np.abs(z) ** beta
    alpha_z = (beta * float(np.mean(w))) ** (1.0 / beta)
    alpha = alpha_z * scale
    return GgParams(alpha=alpha, beta=float(beta), mu=mu), FitInfo(
        converged=converged, clamped=clamped, iterations=iterations)


def fit_gg(samples) -> GgParams:
    return fit_gg_full(samples)[0]


# ---------------------------------------------------------------------------
# t location-scale
# ---------------------------------------------------------------------------

def tls_log_pdf(x, p: TlsParams):
    x = np.asarray(x, dtype=np.float64)
    z = (x - p.mu) / p.sigma
    return (special.gammaln((p.nu + 1.0) / 2.0) - special.gammaln(p.nu / 2.0)
            - 0.5 * np.log(p.nu * np.pi) - np.log(p.sigma)
            - 0.5 * (p.nu + 1.0) * np.log1p(z ** 2 / p.nu))


def tls_pdf(x, p: TlsParams):
    return np.exp(tls_log_pdf(x, p))


def tls_cdf(x, p: TlsParams):
    """Student-t distribution function of (x - mu) / sigma via the
    regularized incomplete beta function."""
    x = np.asarray(x, dtype=np.float64)
    z = (x - p.mu) / p.sigma
    w = p.nu / (p.nu + z ** 2)
    tail = 0.5 * special.betainc(p.nu / 2.0, 0.5, w)
    return np.where(z <= 0.0, tail, 1.0 - tail)


def _tls_nu_from_kurtosis(k: float) -> float:
    # t kurtosis is 3 (nu - 2) / (nu - 4) for nu > 4
    lo, hi = TLS_NU_RANGE
    if k <= 3.0:
        return 30.0
    nu = (4.0 * k - 6.0) / (k - 3.0)
    return min(max(nu, lo), hi)


def _tls_nu_update(wbar: float, lo: float, hi: float) -> tuple[float, bool]:
    """Solve the EM degrees-of-freedom equation on [lo, hi].

    ``wbar`` is the mean of (log w_i - w_i) over the E-step weights.
    """

    def phi(nu: float) -> float:
        half = nu / 2.0
        return (-special.psi(half) + np.log(half) + 1.0 + wbar
                + special.psi(half + 0.5) - np.log(half + 0.5))

    if phi(lo) <= 0.0:
        return lo, True
    if phi(hi) >= 0.0:
        return hi, True
    return float(optimize.brentq(phi, lo, hi, xtol=1e-10)), False


def fit_tls_full(samples, max_iter: int = 200, tol: float = 1e-8) -> tuple[TlsParams, FitInfo]:
    """ML fit of a t location-scale model by EM.

    Location and scale get the standard weighted updates; each iteration
    refreshes the degrees of freedom by a bracketed root search.
    Initialization is robust: median location, interquartile-range
    scale, kurtosis-matched degrees of freedom.
    """
    x = _check_samples(samples, 256)
    n = x.size
    lo, hi = TLS_NU_RANGE

    mu = float(np.median(x))
    q75, q25 = np.percentile(x, [75.0, 25.0])
    sigma = float((q75 - q25) / 1.349)
    if sigma <= 0.0:
        sigma = float(np.std(x))
    nu = _tls_nu_from_kurtosis(kurtosis(x))

    def loglik(mu_, sigma_, nu_):
        return float(np.sum(tls_log_pdf(x, TlsParams(mu_, sigma_, nu_))))

    prev_ll = loglik(mu, sigma, nu)
    converged = False
    clamped = False
    iterations = 0
    for iterations in range(1, max_iter + 1):
        z2 = ((x - mu) / sigma) ** 2
        w = (nu + 1.0) / (nu + z2)
        sw = float(np.sum(w))
        mu = float(np.sum(w * x) / sw)
        sigma = float(np.sqrt(np.sum(w * (x - mu) ** 2) / n))
        wbar = float(np.mean(np.log(w) - w))
        nu, clamped = _tls_nu_update(wbar, lo, hi)
        ll = loglik(mu, sigma, nu)
        if abs(ll - prev_ll) < tol:
            converged = True
            break
        prev_ll = ll

    return TlsParams(mu=mu, sigma=sigma, nu=nu), FitInfo(
        converged=converged, clamped=clamped, iterations=iterations)


def fit_tls(samples) -> TlsParams:
    return fit_tls_full(samples)[0]


# ---------------------------------------------------------------------------
# Family dispatch helpers
# ---------------------------------------------------------------------------

def marginal_log_pdf(x, model: MarginalModel):
    if model.family == FAMILY_GG:
        return gg_log_pdf(x, model.params)
    return tls_log_pdf(x, model.params)


def marginal_pdf(x, model: MarginalModel):
    return np.exp(marginal_log_pdf(x, model))


def marginal_cdf(x, model: MarginalModel):
    if model.family == FAMILY_GG:
        return gg_cdf(x, model.params)
    return tls_cdf(x, model.params)


def fit_marginal_full(samples, family: str) -> tuple[MarginalModel, FitInfo]:
    if family == FAMILY_GG:
        params, info = fit_gg_full(samples)
    elif family == FAMILY_TLS:
        params, info = fit_tls_full(samples)
    else:
        raise ValueError(f"unknown marginal family {family!r}")
    return MarginalModel(family=family, params=params), info
