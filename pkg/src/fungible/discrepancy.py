"""Scalar math core: ML discrepancy with derivatives, RMSEA conversions,
and chi-square quantiles.

All functions are pure and reentrant.  Positive definiteness is always
established by attempting a Cholesky factorization; there is no eigenvalue
thresholding.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import NotPositiveDefinite
from .model import ModelSpec, _implied

__all__ = [
    "f_ml",
    "gradient",
    "hessian",
    "rmsea_from_f",
    "f_from_rmsea",
    "chisq_quantile",
    "FitIndices",
    "fit_indices",
]


def _chol(mat, which):
    try:
        return np.linalg.cholesky(mat)
    except np.linalg.LinAlgError:
        raise NotPositiveDefinite(which) from None


def _logdet_from_chol(chol_factor):
    return 2.0 * float(np.sum(np.log(np.diag(chol_factor))))


def f_ml(model: ModelSpec, theta, s) -> float:
    """ML discrepancy between a covariance s and the model-implied Sigma(theta):

        F = ln|Sigma| - ln|s| + tr(s Sigma^-1) - p

    Nonnegative, zero iff Sigma(theta) = s.  Raises
    :class:`NotPositiveDefinite` naming whichever of ``s`` or ``Sigma(theta)``
    fails its Cholesky factorization.
    """
    s = np.asarray(s, dtype=float)
    ld_s = _logdet_from_chol(_chol(s, "s"))
    sigma = _implied(model, theta)[4]
    ld_sigma = _logdet_from_chol(_chol(sigma, "sigma_theta"))
    trace = float(np.trace(np.linalg.solve(sigma, s)))
    return max(0.0, ld_sigma - ld_s + trace - model.n_observed)


def _grad_from_implied(model, s, g_mat, c_mat, sigma):
    p = model.n_observed
    sigma_inv = np.linalg.inv(sigma)
    w = sigma_inv @ (sigma - s) @ sigma_inv
    w = 0.5 * (w + w.T)
    g_obs = g_mat[:p, :]                       # F G
    q_mat = (c_mat[:, :p] @ w @ g_obs).T       # transpose of G S G' F' W F G
    d_mat = g_obs.T @ w @ g_obs                # G' F' W F G
    grad = np.zeros(model.q)
    for k, i, j in model._a_entries:
        grad[k] += 2.0 * q_mat[i, j]
    for k, i, j in model._s_entries:
        grad[k] += d_mat[i, i] if i == j else 2.0 * d_mat[i, j]
    return grad


def gradient(model: ModelSpec, theta, s) -> np.ndarray:
    """Analytic gradient of :func:`f_ml` in theta (chain rule through the
    RAM structure)."""
    s = np.asarray(s, dtype=float)
    _chol(s, "s")
    _, _, g_mat, c_mat, sigma = _implied(model, theta)
    _chol(sigma, "sigma_theta")
    return _grad_from_implied(model, s, g_mat, c_mat, sigma)


def _value_and_gradient(model, theta, s):
    s = np.asarray(s, dtype=float)
    ld_s = _logdet_from_chol(_chol(s, "s"))
    _, _, g_mat, c_mat, sigma = _implied(model, theta)
    ld_sigma = _logdet_from_chol(_chol(sigma, "sigma_theta"))
    trace = float(np.trace(np.linalg.solve(sigma, s)))
    value = max(0.0, ld_sigma - ld_s + trace - model.n_observed)
    return value, _grad_from_implied(model, s, g_mat, c_mat, sigma)


def hessian(model: ModelSpec, theta, s) -> np.ndarray:
    """Hessian of :func:`f_ml` by central finite differences of the analytic
    gradient, step 1e-5 * max(1, |theta_i|) per coordinate, symmetrized."""
    theta = np.asarray(theta, dtype=float)
    q = model.q
    h_mat = np.empty((q, q))
    for i in range(q):
        h = 1e-5 * max(1.0, abs(theta[i]))
        step = np.zeros(q)
        step[i] = h
        g_plus = gradient(model, theta + step, s)
        g_minus = gradient(model, theta - step, s)
        h_mat[:, i] = (g_plus - g_minus) / (2.0 * h)
    return 0.5 * (h_mat + h_mat.T)


# ---------------------------------------------------------------------------
# RMSEA conversions


def rmsea_from_f(f: float, df: int, n: int | None = None, *, population: bool = False) -> float:
    """RMSEA from a discrepancy value.

    Population mode: sqrt(f/df).  Sample mode: sqrt(max(f/df - 1/(n-1), 0)),
    the (n-1)-convention noncentrality rescaling (truncated at zero).
    """
    if df < 1:
        raise ValueError("df must be at least 1")
    if f < 0:
        raise ValueError("f must be nonnegative")
    if population:
        return math.sqrt(f / df)
    if n is None or n < 2:
        raise ValueError("sample mode needs n >= 2")
    return math.sqrt(max(f / df - 1.0 / (n - 1), 0.0))


def f_from_rmsea(epsilon: float, df: int, n: int | None = None, *, population: bool = False) -> float:
    """Exact inverse of :func:`rmsea_from_f` on the non-truncated branch."""
    if df < 1:
        raise ValueError("df must be at least 1")
    if epsilon < 0:
        raise ValueError("epsilon must be nonnegative")
    if population:
        return df * epsilon * epsilon
    if n is None or n < 2:
        raise ValueError("sample mode needs n >= 2")
    return df * (epsilon * epsilon + 1.0 / (n - 1))


@dataclass(frozen=True)
class FitIndices:
    """Discrepancy value with its RMSEA rescalings."""

    f_value: float
    df: int
    n: int | None
    rmsea_sample: float | None
    rmsea_population: float | None

    def __post_init__(self):
        if self.f_value < 0:
            raise ValueError("f_value must be nonnegative")
        for eps in (self.rmsea_sample, self.rmsea_population):
            if eps is not None and self.df < 1:
                raise ValueError("df must be at least 1 when an RMSEA is populated")
            if eps is not None and eps < 0:
                raise ValueError("rmsea values must be nonnegative")


def fit_indices(f_value: float, df: int, n: int | None = None, *, population: bool = False) -> FitIndices:
    if population:
        return FitIndices(f_value, df, n, None, rmsea_from_f(f_value, df, population=True))
    return FitIndices(f_value, df, n, rmsea_from_f(f_value, df, n), None)


# ---------------------------------------------------------------------------
# Chi-square quantiles via the regularized incomplete gamma function


def _gammp(a, x):
    """Regularized lower incomplete gamma P(a, x); series for x < a + 1,
    Lentz continued fraction for the complement otherwise."""
    if x < 0 or a <= 0:
        raise ValueError("invalid incomplete gamma arguments")
    if x == 0.0:
        return 0.0
    if x < a + 1.0:
        ap = a
        term = total = 1.0 / a
        for _ in range(1000):
            ap += 1.0
            term *= x / ap
            total += term
            if abs(term) < abs(total) * 1e-16:
                break
        return total * math.exp(-x + a * math.log(x) - math.lgamma(a))
    # continued fraction for Q(a, x)
    tiny = 1e-300
    b = x + 1.0 - a
    c = 1.0 / tiny
    d = 1.0 / b
    h = d
    for i in range(1, 1000):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < tiny:
            d = tiny
        c = b + an / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-16:
            break
    q = math.exp(-x + a * math.log(x) - math.lgamma(a)) * h
    return 1.0 - q


def _norm_quantile(p):
    # Abramowitz & Stegun 26.2.23 rational approximation; |error| < 4.5e-4,
    # only used to seed the Newton refinement below.
    pp = p if p < 0.5 else 1.0 - p
    pp = max(pp, 1e-300)
    t = math.sqrt(-2.0 * math.log(pp))
    z = t - (2.515517 + 0.802853 * t + 0.010328 * t * t) / (
        1.0 + 1.432788 * t + 0.189269 * t * t + 0.001308 * t ** 3
    )
    return -z if p < 0.5 else z


def chisq_quantile(df: int, prob: float) -> float:
    """Quantile of the chi-square distribution.

    Returns x with P(df/2, x/2) = prob to within 1e-10, where P is the
    regularized lower incomplete gamma function.  A Wilson-Hilferty starting
    value is refined by Newton steps safeguarded inside a maintained
    bisection bracket.
    """
    df = int(df)
    if df < 1:
        raise ValueError("df must be at least 1")
    if not 0.0 < prob < 1.0:
        raise ValueError("prob must be in (0, 1)")
    a = 0.5 * df

    def cdf(x):
        return _gammp(a, 0.5 * x)

    def pdf(x):
        if x <= 0:
            return 0.0
        log_pdf = (a - 1.0) * math.log(0.5 * x) - 0.5 * x - math.lgamma(a)
        return 0.5 * math.exp(log_pdf)

    z = _norm_quantile(prob)
    t = 1.0 - 2.0 / (9.0 * df) + z * math.sqrt(2.0 / (9.0 * df))
    x = df * t ** 3 if t > 0 else 1e-8 * df

    lo, hi = 0.0, max(x, 1.0)
    while cdf(hi) < prob:
        lo = hi
        hi *= 2.0
        if hi > 1e12:
            break
    x = min(max(x, lo + 1e-300), hi)

    for _ in range(300):
        err = cdf(x) - prob
        if abs(err) <= 1e-13:
            return x
        if err < 0:
            lo = x
        else:
            hi = x
        slope = pdf(x)
        if slope > 0:
            x_new = x - err / slope
        else:
            x_new = 0.5 * (lo + hi)
        if not lo < x_new < hi:
            x_new = 0.5 * (lo + hi)
        if x_new == x:
            break
        x = x_new
    return x
