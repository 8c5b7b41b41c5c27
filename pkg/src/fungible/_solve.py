"""Scalar search helpers: safeguarded root finding and golden-section maxima."""

from __future__ import annotations

import math

_INVPHI = (math.sqrt(5.0) - 1.0) / 2.0


def bracketed_root(g, lo, hi, g_lo, g_hi, *, f_tol, max_iter=200):
    """Solve g(x) = 0 on [lo, hi] given g(lo) <= 0 <= g(hi).

    Secant proposals accelerate a maintained bisection bracket; any proposal
    that leaves the bracket (or repeats) falls back to the midpoint.  Returns
    the first x with |g(x)| <= f_tol.
    """
    if g_lo > 0.0 or g_hi < 0.0:
        raise ValueError("bracket does not straddle the root")
    if abs(g_lo) <= f_tol:
        return lo
    if abs(g_hi) <= f_tol:
        return hi

    a, ga = lo, g_lo
    b, gb = hi, g_hi
    x0, gx0 = a, ga
    x1, gx1 = b, gb
    best_x, best_g = (a, ga) if abs(ga) < abs(gb) else (b, gb)
    for _ in range(max_iter):
        denom = gx1 - gx0
        if denom != 0.0 and math.isfinite(denom):
            x = x1 - gx1 * (x1 - x0) / denom
        else:
            x = 0.5 * (a + b)
        if not (a < x < b) or not math.isfinite(x):
            x = 0.5 * (a + b)
        gx = g(x)
        if abs(gx) <= f_tol:
            return x
        if abs(gx) < abs(best_g):
            best_x, best_g = x, gx
        if gx < 0.0:
            a, ga = x, gx
        else:
            b, gb = x, gx
        x0, gx0 = x1, gx1
        x1, gx1 = x, gx
        if b - a <= 1e-16 * max(1.0, abs(a), abs(b)):
            break
    if abs(best_g) <= f_tol:
        return best_x
    raise RuntimeError(
        f"root residual {abs(best_g):.3e} above tolerance {f_tol:.1e} "
        f"after {max_iter} iterations"
    )


def golden_max(f, a, b, *, x_tol, max_iter=200):
    """Golden-section maximization of f on [a, b].

    Assumes f is unimodal on the bracket (the use here is a local refinement
    around a grid argmax).  Returns ``(x_best, f_best)`` over every point
    evaluated, so the result can never be worse than the bracket interior.
    f may return -inf to mark an unevaluable point.
    """
    c = b - _INVPHI * (b - a)
    d = a + _INVPHI * (b - a)
    fc, fd = f(c), f(d)
    best = (c, fc) if fc >= fd else (d, fd)
    for _ in range(max_iter):
        if b - a <= x_tol:
            break
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - _INVPHI * (b - a)
            fc = f(c)
            if fc > best[1]:
                best = (c, fc)
        else:
            a, c, fc = c, d, fd
            d = a + _INVPHI * (b - a)
            fd = f(d)
            if fd > best[1]:
                best = (d, fd)
    return best
