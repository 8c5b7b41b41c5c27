"""Fungible-parameter contours and confidence-set ellipses around a fit.

All operations work in a focal subspace of the free parameters (default two
focal parameters; non-focal parameters stay pinned at theta-hat).  A contour
is the level set {theta : F(theta) = T}; :func:`f_target` maps the three
target definitions (raw-discrepancy offset, RMSEA-scale offset, chi-square
confidence level) to the level T.  Widths are full axis lengths (twice the
half-length), measured either from the focal Hessian block (quadratic
approximation) or by sweeping rays and solving each crossing exactly.

These functions only use ``theta_hat``, ``f_hat``, ``n``, ``hessian_at_opt``
and ``objective(theta)`` from the fit argument, so any object exposing those
(e.g. a test surrogate) works in place of a :class:`~fungible.fit.FitResult`.
Direction solves are independent; results are indexed by direction angle and
merged deterministically.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._solve import bracketed_root, golden_max
from .discrepancy import chisq_quantile, f_from_rmsea, rmsea_from_f
from .errors import ContourEscapesDomain, NotPositiveDefinite, SingularStructure

DELTA_F = "delta_f"
EPS_TILDE = "eps_tilde"
CONFIDENCE = "confidence"
_MODES = (DELTA_F, EPS_TILDE, CONFIDENCE)


@dataclass(frozen=True)
class ContourTarget:
    """How the contour level is defined.

    ``delta_f`` mode offsets the minimized discrepancy; three scalings:

    - ``likelihood`` (default): T = F + 2 delta_f / (N - 1), a fixed drop on
      the log-likelihood scale, so widths shrink like 1/sqrt(N - 1);
    - ``raw``: T = F + delta_f, sample-size independent;
    - ``relative``: T = (1 + delta_f) F, fit at most a fraction delta_f worse
      than the minimum, so widths grow with the misfit carried by F itself.

    ``eps_tilde`` mode offsets the sample RMSEA by ``epsilon_tilde``.
    ``confidence`` mode uses the joint chi-square quantile for the focal
    parameters.
    """

    mode: str = DELTA_F
    delta_f: float = 0.05
    epsilon_tilde: float = 0.005
    confidence: float = 0.95
    scaling: str = "likelihood"

    def __post_init__(self):
        if self.mode not in _MODES:
            raise ValueError(f"unknown contour mode {self.mode!r}")
        if self.delta_f < 0 or self.epsilon_tilde < 0:
            raise ValueError("contour offsets must be nonnegative")
        if not 0.0 < self.confidence < 1.0:
            raise ValueError("confidence must be in (0, 1)")
        if self.scaling not in ("likelihood", "raw", "relative"):
            raise ValueError(f"unknown delta_f scaling {self.scaling!r}")


@dataclass(frozen=True)
class AxisWidths:
    """Major and minor full widths of a contour in the focal plane."""

    major: float
    minor: float
    major_direction: np.ndarray
    minor_direction: np.ndarray
    focal: tuple[int, ...]
    skipped: int = 0
    partial: bool = False

    def __post_init__(self):
        object.__setattr__(self, "focal", tuple(int(i) for i in self.focal))
        object.__setattr__(self, "major_direction", np.asarray(self.major_direction, float))
        object.__setattr__(self, "minor_direction", np.asarray(self.minor_direction, float))
        if not (self.major >= self.minor >= 0.0):
            raise ValueError("axis widths must satisfy major >= minor >= 0")


@dataclass(frozen=True)
class ContourPoint:
    """One solved contour crossing: theta = theta_hat + r * u(angle)."""

    angle: float
    r: float
    theta: np.ndarray
    f_value: float


def f_target(target: ContourTarget, fit, df: int | None = None, *, n_focal: int = 2) -> float:
    """Discrepancy level T defining the contour {theta : F(theta) = T}."""
    f_hat = fit.f_hat
    if target.mode == DELTA_F:
        if target.scaling == "raw":
            return f_hat + target.delta_f
        if target.scaling == "relative":
            return f_hat * (1.0 + target.delta_f)
        if fit.n is None:
            raise ValueError("likelihood-scaled delta_f needs a sample size")
        return f_hat + 2.0 * target.delta_f / (fit.n - 1)
    if target.mode == EPS_TILDE:
        if fit.n is None:
            raise ValueError("eps_tilde mode needs a sample size")
        if df is None:
            df = fit.df
        eps_hat = rmsea_from_f(f_hat, df, fit.n)
        return f_from_rmsea(eps_hat + target.epsilon_tilde, df, fit.n)
    if fit.n is None:
        raise ValueError("confidence mode needs a sample size")
    return f_hat + chisq_quantile(n_focal, target.confidence) / (fit.n - 1)


def _focal_unit(fit, direction, focal):
    focal = tuple(int(i) for i in focal)
    direction = np.asarray(direction, dtype=float)
    if direction.shape != (len(focal),):
        raise ValueError("direction must live in the focal subspace")
    norm = float(np.linalg.norm(direction))
    if norm == 0.0 or not np.isfinite(norm):
        raise ValueError("direction must be a nonzero finite vector")
    u_full = np.zeros_like(np.asarray(fit.theta_hat, dtype=float))
    u_full[list(focal)] = direction / norm
    return focal, u_full


def _quadratic_radius(fit, u_full, focal, c):
    hess = getattr(fit, "hessian_at_opt", None)
    if hess is None:
        return 1.0
    d = np.asarray(u_full)[list(focal)]
    curv = float(d @ np.asarray(hess)[np.ix_(focal, focal)] @ d)
    if curv > 0:
        return math.sqrt(2.0 * c / curv)
    return 1.0


def _solve_ray(fit, u_full, focal, t_target, f_tol):
    """Radius r > 0 with F(theta_hat + r u) = t_target along one ray."""
    theta_hat = np.asarray(fit.theta_hat, dtype=float)
    c = t_target - fit.f_hat

    def f_at(r):
        return fit.objective(theta_hat + r * u_full)

    lo, g_lo = 0.0, -c
    hi = _quadratic_radius(fit, u_full, focal, c)
    g_hi = None
    for _ in range(90):
        try:
            g_hi = f_at(hi) - t_target
        except (NotPositiveDefinite, SingularStructure):
            hi, g_hi = _domain_edge(f_at, lo, hi)
            g_hi -= t_target
            if g_hi < 0:
                raise ContourEscapesDomain(
                    "implied covariance loses positive definiteness before the "
                    "contour level is reached"
                ) from None
            break
        if g_hi >= 0:
            break
        lo, g_lo = hi, g_hi
        hi *= 2.0
    else:
        raise ContourEscapesDomain(
            "discrepancy never reaches the contour level along this ray"
        )

    def gap(r):
        return f_at(r) - t_target

    return bracketed_root(gap, lo, hi, g_lo, g_hi, f_tol=f_tol)


def _domain_edge(f_at, good, bad, iters=80):
    """Bisect to the largest radius where the objective still evaluates."""
    f_good = f_at(good)
    for _ in range(iters):
        mid = 0.5 * (good + bad)
        try:
            f_mid = f_at(mid)
        except (NotPositiveDefinite, SingularStructure):
            bad = mid
        else:
            good, f_good = mid, f_mid
    return good, f_good


def radial_contour_point(fit, direction, t_target: float, focal, *, f_tol: float = 1e-9) -> np.ndarray:
    """Contour crossing theta_hat + r * u along a focal-plane direction.

    Solves F(theta) = ``t_target`` to |F - T| <= ``f_tol`` by exponential
    bracketing followed by safeguarded bisection/secant; non-focal parameters
    stay at theta_hat.  Raises :class:`ContourEscapesDomain` when F never
    reaches the level before positive definiteness fails along the ray.
    """
    if t_target <= fit.f_hat:
        raise ValueError("t_target must exceed the fitted discrepancy")
    focal, u_full = _focal_unit(fit, direction, focal)
    r = _solve_ray(fit, u_full, focal, t_target, f_tol)
    return np.asarray(fit.theta_hat, dtype=float) + r * u_full


def sweep_contour(fit, t_target: float, focal, n_directions: int = 360, *, f_tol: float = 1e-9):
    """Solve the contour along ``n_directions`` equally spaced focal-plane
    rays; returns the list of :class:`ContourPoint` for the directions that
    reached the level (escaped directions are simply absent)."""
    angles, radii = _sweep_radii(fit, t_target, focal, n_directions, f_tol)
    theta_hat = np.asarray(fit.theta_hat, dtype=float)
    points = []
    for angle, r in zip(angles, radii):
        if not np.isfinite(r):
            continue
        _, u_full = _focal_unit(fit, (math.cos(angle), math.sin(angle)), focal)
        theta = theta_hat + r * u_full
        points.append(ContourPoint(angle=float(angle), r=float(r), theta=theta, f_value=t_target))
    return points


def _sweep_radii(fit, t_target, focal, n_directions, f_tol):
    focal = tuple(int(i) for i in focal)
    if len(focal) != 2:
        raise ValueError("direction sweeps need exactly two focal parameters")
    n = int(n_directions)
    if n < 4:
        raise ValueError("n_directions must be at least 4")
    if n % 2:
        n += 1
    angles = 2.0 * math.pi * np.arange(n) / n
    radii = np.full(n, np.nan)
    for k, angle in enumerate(angles):
        direction = (math.cos(angle), math.sin(angle))
        _, u_full = _focal_unit(fit, direction, focal)
        try:
            radii[k] = _solve_ray(fit, u_full, focal, t_target, f_tol)
        except ContourEscapesDomain:
            continue
    return angles, radii


def axis_widths_quadratic(fit, t_target: float, focal) -> AxisWidths:
    """Axis widths from the focal Hessian block.

    Eigen-decomposes the focal block H_f; with c = T - F-hat the axis for
    eigenvalue lambda has full width 2 sqrt(2 c / lambda), so the major axis
    belongs to the smallest eigenvalue.  Raises :class:`NotPositiveDefinite`
    when the focal block has a nonpositive eigenvalue (a flat or unidentified
    focal direction).
    """
    focal = tuple(int(i) for i in focal)
    c = t_target - fit.f_hat
    if c < 0:
        raise ValueError("t_target must not be below the fitted discrepancy")
    h_f = np.asarray(fit.hessian_at_opt, dtype=float)[np.ix_(focal, focal)]
    lam, vec = np.linalg.eigh(h_f)
    if lam[0] <= 0:
        raise NotPositiveDefinite(
            "focal_hessian", "focal Hessian block has a nonpositive eigenvalue"
        )
    widths = 2.0 * np.sqrt(2.0 * c / lam)  # lam ascending -> widths descending
    return AxisWidths(
        major=float(widths[0]),
        minor=float(widths[-1]),
        major_direction=_fix_sign(vec[:, 0]),
        minor_direction=_fix_sign(vec[:, -1]),
        focal=focal,
    )


def _fix_sign(v):
    v = np.asarray(v, dtype=float).copy()
    for x in v:
        if x != 0.0:
            if x < 0:
                v = -v
            break
    return v


def axis_widths_exact(fit, t_target: float, focal, n_directions: int = 360, *, f_tol: float = 1e-9, angle_tol: float = 1e-6) -> AxisWidths:
    """Axis widths from an exact direction sweep.

    Solves the contour along ``n_directions`` rays, measures the through-center
    width w(phi) = r(phi) + r(phi + pi), and refines the extremal angles by
    golden section to ``angle_tol`` radians.  Escaped directions are skipped
    and counted; the result is flagged ``partial`` when more than 5% skip.
    """
    focal = tuple(int(i) for i in focal)
    c = t_target - fit.f_hat
    if c < 0:
        raise ValueError("t_target must not be below the fitted discrepancy")
    if c == 0.0:
        return AxisWidths(
            major=0.0,
            minor=0.0,
            major_direction=np.array([1.0, 0.0]),
            minor_direction=np.array([0.0, 1.0]),
            focal=focal,
        )
    angles, radii = _sweep_radii(fit, t_target, focal, n_directions, f_tol)
    n = len(angles)
    half = n // 2
    widths = radii[:half] + radii[half:]
    valid = np.isfinite(widths)
    skipped = int(np.sum(~np.isfinite(radii)))
    if not np.any(valid):
        raise ContourEscapesDomain("no direction reached the contour level")

    def width_at(phi):
        try:
            _, u1 = _focal_unit(fit, (math.cos(phi), math.sin(phi)), focal)
            _, u2 = _focal_unit(fit, (-math.cos(phi), -math.sin(phi)), focal)
            return _solve_ray(fit, u1, focal, t_target, f_tol) + _solve_ray(
                fit, u2, focal, t_target, f_tol
            )
        except ContourEscapesDomain:
            return None

    delta = 2.0 * math.pi / n
    w_masked = np.where(valid, widths, -np.inf)
    k_max = int(np.argmax(w_masked))
    phi_max, w_major = golden_max(
        lambda phi: -math.inf if (w := width_at(phi)) is None else w,
        angles[k_max] - delta,
        angles[k_max] + delta,
        x_tol=angle_tol,
    )
    w_major = max(w_major, float(w_masked[k_max]))

    w_masked = np.where(valid, widths, np.inf)
    k_min = int(np.argmin(w_masked))
    phi_min, w_minor_neg = golden_max(
        lambda phi: -math.inf if (w := width_at(phi)) is None else -w,
        angles[k_min] - delta,
        angles[k_min] + delta,
        x_tol=angle_tol,
    )
    w_minor = min(-w_minor_neg, float(np.where(valid, widths, np.inf)[k_min]))

    return AxisWidths(
        major=float(w_major),
        minor=float(w_minor),
        major_direction=np.array([math.cos(phi_max), math.sin(phi_max)]),
        minor_direction=np.array([math.cos(phi_min), math.sin(phi_min)]),
        focal=focal,
        skipped=skipped,
        partial=skipped > 0.05 * n,
    )


def fpe_sample(fit, target: ContourTarget, focal, n_directions: int = 360) -> list[np.ndarray]:
    """The fungible parameter estimates themselves: contour points from the
    direction sweep, one full-length parameter vector per solved direction.

    A degenerate target (level at or below the fitted discrepancy, e.g.
    ``delta_f=0``) returns ``n_directions`` copies of theta_hat.
    """
    focal = tuple(int(i) for i in focal)
    t = f_target(target, fit, n_focal=len(focal))
    theta_hat = np.asarray(fit.theta_hat, dtype=float)
    if t <= fit.f_hat:
        return [theta_hat.copy() for _ in range(int(n_directions))]
    return [pt.theta for pt in sweep_contour(fit, t, focal, n_directions)]
