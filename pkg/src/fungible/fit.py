"""Maximum likelihood fitting of covariance-structure models.

A hand-rolled quasi-Newton loop (BFGS secant updates on the inverse Hessian,
backtracking Armijo line search) minimizes the ML discrepancy.  Steps that
lose positive definiteness of the implied covariance are rejected by the
line search (treated as an infinite objective) rather than penalized, so the
objective stays the exact ML discrepancy.

There are no parameter bounds: improper solutions (negative unique
variances) are reported via ``FitResult.improper``, not prevented.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .discrepancy import _value_and_gradient, f_ml, hessian, rmsea_from_f
from .errors import NoConvergence, NotPositiveDefinite, SingularStructure
from .model import ModelSpec, _frozen_array, as_theta


@dataclass(frozen=True)
class FitOptions:
    max_iter: int = 500
    grad_tol: float = 1e-6
    f_tol: float = 1e-12
    start: np.ndarray | None = None


@dataclass(frozen=True)
class FitResult:
    """Converged (or stalled) fit of a model to a covariance matrix.

    ``n`` is the sample size used for inference downstream; ``None`` marks a
    population analysis.  ``converged`` holds exactly when the gradient
    max-norm is below the tolerance; a stall on relative f-change with a
    larger gradient is reported as ``converged=False``.
    """

    model: ModelSpec
    s: np.ndarray
    n: int | None
    theta_hat: np.ndarray
    f_hat: float
    grad_norm: float
    hessian_at_opt: np.ndarray
    iterations: int
    converged: bool
    improper: bool
    f_trace: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "s", _frozen_array(self.s, float))
        object.__setattr__(self, "theta_hat", _frozen_array(self.theta_hat, float))
        object.__setattr__(
            self, "hessian_at_opt", _frozen_array(self.hessian_at_opt, float)
        )
        object.__setattr__(self, "f_trace", tuple(self.f_trace))

    @property
    def df(self) -> int:
        return self.model.df

    def objective(self, theta) -> float:
        """ML discrepancy at theta against this fit's analyzed covariance."""
        return f_ml(self.model, theta, self.s)

    @cached_property
    def indices(self):
        from .discrepancy import fit_indices

        return fit_indices(self.f_hat, self.df, self.n, population=self.n is None)


def _validate_cov(s, p):
    s = np.asarray(s, dtype=float)
    if s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise ValueError("covariance matrix must be square")
    if s.shape[0] != p:
        raise ValueError(f"covariance is {s.shape[0]} x {s.shape[0]}, model has p={p}")
    asym = np.abs(s - s.T).max()
    if asym > 1e-10 * max(1.0, np.abs(s).max()):
        raise ValueError(f"covariance matrix is not symmetric (max asymmetry {asym:.2e})")
    s = 0.5 * (s + s.T)
    try:
        np.linalg.cholesky(s)
    except np.linalg.LinAlgError:
        raise NotPositiveDefinite("s") from None
    return s


def fit_ml(model: ModelSpec, s, n: int | None = None, opts: FitOptions | None = None) -> FitResult:
    """Minimize the ML discrepancy of ``model`` against covariance ``s``.

    Convergence is declared at gradient max-norm < ``opts.grad_tol``; the
    loop also stops when the relative change in f drops below ``opts.f_tol``.
    Raises :class:`NoConvergence` after ``opts.max_iter`` iterations and
    :class:`NotPositiveDefinite` for an invalid ``s``.
    """
    opts = opts or FitOptions()
    p = model.n_observed
    s = _validate_cov(s, p)
    if n is not None:
        n = int(n)
        if n < 2:
            raise ValueError("n must be at least 2")
    if opts.start is not None:
        theta = as_theta(model, np.array(opts.start, dtype=float))
    elif model.start is not None:
        theta = model.start.copy()
    else:
        theta = model.default_start(s)

    f, g = _value_and_gradient(model, theta, s)
    f_trace = [f]
    q = model.q
    eye = np.eye(q)
    h_inv = eye.copy()
    g_max = float(np.abs(g).max())
    iterations = 0
    converged = g_max < opts.grad_tol
    reset_used = False

    while not converged:
        if iterations >= opts.max_iter:
            raise NoConvergence(iterations, g_max)
        iterations += 1

        direction = -h_inv @ g
        if float(direction @ g) >= 0.0:
            h_inv = eye.copy()
            direction = -g
        slope = float(g @ direction)

        step = 1.0
        accepted = False
        for _ in range(60):
            candidate = theta + step * direction
            try:
                f_new = f_ml(model, candidate, s)
            except (NotPositiveDefinite, SingularStructure):
                f_new = np.inf
            if f_new <= f + 1e-4 * step * slope:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            if not reset_used:
                # retry once along steepest descent before giving up
                reset_used = True
                h_inv = eye.copy()
                continue
            break

        f_new, g_new = _value_and_gradient(model, candidate, s)
        s_vec = candidate - theta
        y_vec = g_new - g
        sy = float(s_vec @ y_vec)
        if iterations == 1 and sy > 0:
            h_inv = (sy / float(y_vec @ y_vec)) * eye
        if sy > 1e-10 * np.linalg.norm(s_vec) * np.linalg.norm(y_vec):
            rho = 1.0 / sy
            v = eye - rho * np.outer(s_vec, y_vec)
            h_inv = v @ h_inv @ v.T + rho * np.outer(s_vec, s_vec)

        stalled = abs(f - f_new) <= opts.f_tol * max(1.0, abs(f))
        theta, f, g = candidate, f_new, g_new
        f_trace.append(f)
        g_max = float(np.abs(g).max())
        if g_max < opts.grad_tol:
            converged = True
            break
        if stalled:
            break

    h_opt = hessian(model, theta, s)
    improper = bool(np.any(theta[model.variance_param_mask] < 0))
    return FitResult(
        model=model,
        s=s,
        n=n,
        theta_hat=theta,
        f_hat=f,
        grad_norm=g_max,
        hessian_at_opt=h_opt,
        iterations=iterations,
        converged=converged,
        improper=improper,
        f_trace=tuple(f_trace),
    )


def population_rmsea(model: ModelSpec, sigma_pop, df: int | None = None) -> float:
    """Population misfit of a model against a population covariance:
    sqrt(F0/df) where F0 is the minimized ML discrepancy."""
    if df is None:
        df = model.df
    result = fit_ml(model, sigma_pop, n=None)
    return rmsea_from_f(result.f_hat, df, population=True)
