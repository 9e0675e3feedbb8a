"""Regularized incomplete gamma and chi-square distribution helpers.

Series expansion below ``x < a + 1``, Lentz continued fraction above, as in
the usual Numerical Recipes treatment.
"""
import math
from statistics import NormalDist

_EPS = 1e-16
_TINY = 1e-300
_MAX_TERMS = 10_000


def _gamma_series(a, x):
    # P(a, x) by its power series; converges fast for x < a + 1
    term = 1.0 / a
    total = term
    ap = a
    for _ in range(_MAX_TERMS):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * _EPS:
            break
    return total * math.exp(-x + a * math.log(x) - math.lgamma(a))


def _gamma_cfrac(a, x):
    # Q(a, x) by modified Lentz; converges fast for x >= a + 1
    b = x + 1.0 - a
    c = 1.0 / _TINY
    d = 1.0 / b
    h = d
    for i in range(1, _MAX_TERMS):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < _TINY:
            d = _TINY
        c = b + an / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            break
    return h * math.exp(-x + a * math.log(x) - math.lgamma(a))


def gammainc(a, x):
    """Regularized lower incomplete gamma function P(a, x)."""
    if a <= 0:
        raise ValueError("shape parameter must be positive")
    if x < 0:
        raise ValueError("x must be non-negative")
    if x == 0:
        return 0.0
    if math.isinf(x):
        return 1.0
    if x < a + 1.0:
        return _gamma_series(a, x)
    return 1.0 - _gamma_cfrac(a, x)


def gammaincc(a, x):
    """Regularized upper incomplete gamma function Q(a, x) = 1 - P(a, x)."""
    if a <= 0:
        raise ValueError("shape parameter must be positive")
    if x < 0:
        raise ValueError("x must be non-negative")
    if x == 0:
        return 1.0
    if math.isinf(x):
        return 0.0
    if x < a + 1.0:
        return 1.0 - _gamma_series(a, x)
    return _gamma_cfrac(a, x)


def chi2_cdf(x, dof):
    """Chi-square cumulative distribution function."""
    if x <= 0:
        return 0.0
    return gammainc(0.5 * dof, 0.5 * x)


def chi2_sf(x, dof):
    """Chi-square survival function, ``1 - chi2_cdf(x, dof)``."""
    if x <= 0:
        return 1.0
    return gammaincc(0.5 * dof, 0.5 * x)


def chi2_pdf(x, dof):
    if x <= 0:
        return 0.0
    k = 0.5 * dof
    return math.exp((k - 1.0) * math.log(x) - 0.5 * x - k * math.log(2.0) - math.lgamma(k))


def chi2_quantile(dof, prob):
    """Inverse of the chi-square CDF.

    Parameters
    ----------
    dof : int
        Degrees of freedom, positive.
    prob : float
        Lower-tail probability in the open interval (0, 1).

    Returns
    -------
    float
        ``x`` with ``chi2_cdf(x, dof) == prob`` to about 1e-12 relative.

    Notes
    -----
    The Wilson-Hilferty cube-root normal approximation gives the starting
    point; Newton steps on the regularized incomplete gamma refine it, with
    bisection taking over whenever a step leaves the current bracket. Upper
    quantiles are solved on the survival function.
    """
    if not (0.0 < prob < 1.0):
        raise ValueError(f"prob must lie in (0, 1), got {prob!r}")
    if dof <= 0:
        raise ValueError(f"dof must be positive, got {dof!r}")

    z = NormalDist().inv_cdf(prob)
    h = 2.0 / (9.0 * dof)
    x = dof * (1.0 - h + z * math.sqrt(h)) ** 3
    if not x > 0:
        x = dof * prob ** (2.0 / dof)

    # work in the upper tail when it is the smaller one, to keep digits of 1 - prob
    upper = prob > 0.5
    q = 1.0 - prob
    lo, hi = 0.0, math.inf
    for _ in range(200):
        f = (q - chi2_sf(x, dof)) if upper else (chi2_cdf(x, dof) - prob)
        if f < 0:
            lo = x
        else:
            hi = x
        if f == 0:
            return x
        pdf = chi2_pdf(x, dof)
        step = f / pdf if pdf > 0 else math.inf
        x_new = x - step
        if not (lo < x_new < hi) or not math.isfinite(x_new):
            x_new = 0.5 * (lo + hi) if math.isfinite(hi) else 2.0 * x
        if abs(x_new - x) <= 1e-14 * max(1.0, x):
            return x_new
        x = x_new
    return x
