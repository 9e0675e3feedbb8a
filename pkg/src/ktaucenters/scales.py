"""Robust univariate scales: rho/psi families, M-scale and tau-scale.

Every rho function here is evaluated as ``rho(t / c)`` where ``c`` is the
tuning constant of the first or second rho (``which=1`` or ``which=2``).
The bounded families reach their maximum of one at ``|t| = c``.
"""
from dataclasses import dataclass
from functools import lru_cache
import math

import numpy as np

from ._special import chi2_sf

FAMILIES = ("bisquare", "smooth_hard_rejection", "quadratic")

# Smooth hard-rejection polynomial on 2/3 <= |u| <= 1
_SHR_Q = 1.38
_SHR_COEF = (0.55, -2.69, 10.76, -11.66, 4.04)  # powers 0, 2, 4, 6, 8
_SHR_KNOT = 2.0 / 3.0


class DegenerateScaleError(ValueError):
    """Raised when a scale is exactly zero and a ratio by it is needed."""


@dataclass(frozen=True)
class RhoConfig:
    """Rho family plus the tuning constants of the two rho functions.

    Attributes
    ----------
    family : str
        One of ``"bisquare"``, ``"smooth_hard_rejection"`` or ``"quadratic"``.
    c1, c2 : float
        Tuning constants of the first (M-scale) and second (efficiency) rho.
    b : float
        Right-hand side of the M-scale equation.
    """

    family: str = "smooth_hard_rejection"
    c1: float = 1.0
    c2: float = 3.0
    b: float = 0.5

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown rho family {self.family!r}")
        if not (self.c1 > 0 and self.c2 > 0):
            raise ValueError("tuning constants must be positive")
        upper = math.inf if self.family == "quadratic" else 1.0
        if not (0 < self.b < upper or (self.family == "quadratic" and self.b == 1)):
            raise ValueError(f"b={self.b} outside (0, sup rho) for {self.family}")

    @property
    def bounded(self):
        return self.family != "quadratic"

    def c(self, which):
        if which == 1:
            return self.c1
        if which == 2:
            return self.c2
        raise ValueError("which must be 1 or 2")


@dataclass
class TauWeights:
    A: float
    B: float
    s: float
    per_point_weight: np.ndarray


def lloyd_rho():
    """Quadratic rho with ``b = 1``: the tau-scale reduces to the L2 scale."""
    return RhoConfig("quadratic", 1.0, 1.0, 1.0)


# ---------------------------------------------------------------------------
# unit-scale families (argument already divided by c)

def _rho_unit(family, u):
    u = np.abs(u)
    if family == "quadratic":
        return u * u
    if family == "bisquare":
        v = np.minimum(u, 1.0)
        return 1.0 - (1.0 - v * v) ** 3
    u2 = u * u
    a0, a2, a4, a6, a8 = _SHR_COEF
    poly = a0 + u2 * (a2 + u2 * (a4 + u2 * (a6 + u2 * a8)))
    out = np.where(u < _SHR_KNOT, _SHR_Q * u2, np.minimum(poly, 1.0))
    return np.where(u > 1.0, 1.0, out)


def _psi_over_u_unit(family, u):
    # psi(u) / u with the removable singularity at u = 0 filled in
    u = np.abs(u)
    if family == "quadratic":
        return np.full_like(u, 2.0)
    if family == "bisquare":
        v = 1.0 - u * u
        return np.where(u <= 1.0, 6.0 * v * v, 0.0)
    u2 = u * u
    _, a2, a4, a6, a8 = _SHR_COEF
    poly = 2 * a2 + u2 * (4 * a4 + u2 * (6 * a6 + u2 * 8 * a8))
    out = np.where(u < _SHR_KNOT, 2.0 * _SHR_Q, poly)
    return np.where(u > 1.0, 0.0, out)


def _as_finite(t):
    arr = np.asarray(t, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError("non-finite argument")
    return arr


def _ret(arr):
    return float(arr) if arr.ndim == 0 else arr


def rho(cfg, which, t):
    """Evaluate ``rho(t / c)`` for the selected rho; accepts scalars or arrays."""
    t = _as_finite(t)
    return _ret(_rho_unit(cfg.family, t / cfg.c(which)))


def psi(cfg, which, t):
    """Derivative of :func:`rho` with respect to ``t`` (includes the 1/c factor)."""
    t = _as_finite(t)
    c = cfg.c(which)
    u = t / c
    return _ret(_psi_over_u_unit(cfg.family, u) * u / c)


def psi_over_t(cfg, which, t):
    """``psi(t) / t``, equal to ``psi'(0)`` at ``t = 0``."""
    t = _as_finite(t)
    c = cfg.c(which)
    return _ret(_psi_over_u_unit(cfg.family, t / c) / (c * c))


# ---------------------------------------------------------------------------
# scales

def m_scale(cfg, u, b=None, which=1):
    """M-scale of ``u``: the ``s`` solving ``mean(rho(u_i / s)) = b``.

    Parameters
    ----------
    cfg : RhoConfig
    u : array_like
        Non-empty sample of finite reals.
    b : float, optional
        Target of the equation, ``cfg.b`` by default.
    which : {1, 2}
        Which rho of ``cfg`` to use.

    Returns
    -------
    float
        The scale. Zero when all entries are zero, or more generally when
        the fraction of zeros is at least ``1 - b`` so no positive root exists.

    Notes
    -----
    Bisection on the decreasing map ``s -> mean(rho(u/s))``; the bracket
    runs from ``1e-12`` times the median non-zero ``|u_i|`` up to ten times
    ``max |u_i|`` and is widened when it fails to straddle the root.
    """
    a = np.abs(_as_finite(u)).ravel()
    if a.size == 0:
        raise ValueError("m_scale of an empty sample")
    b = cfg.b if b is None else b
    c = cfg.c(which)
    amax = a.max()
    if amax == 0:
        return 0.0
    if cfg.family == "quadratic":
        return math.sqrt(np.mean(a * a) / b) / c

    nonzero = a[a > 0]
    if nonzero.size / a.size <= b:
        return 0.0

    family = cfg.family

    def g(s):
        return np.mean(_rho_unit(family, a / (s * c))) - b

    lo = 1e-12 * float(np.median(nonzero))
    for _ in range(100):
        if g(lo) > 0:
            break
        lo *= 1e-3
    hi = 10.0 * amax
    for _ in range(200):
        if g(hi) < 0:
            break
        hi *= 2.0

    mid = 0.5 * (lo + hi)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        val = g(mid)
        if val > 0:
            lo = mid
        elif val < 0:
            hi = mid
        else:
            return float(mid)
        if hi - lo <= 1e-12 * hi:
            break
    return float(0.5 * (lo + hi))


def tau_scale(cfg, u, b=None):
    """Tau-scale ``s * sqrt(mean(rho_2(u_i / s)))`` with ``s`` the M-scale of ``u``."""
    a = np.abs(_as_finite(u)).ravel()
    s = m_scale(cfg, a, b=b, which=1)
    if s == 0:
        return 0.0
    return s * math.sqrt(float(np.mean(_rho_unit(cfg.family, a / (s * cfg.c2)))))


def weights_at_scale(cfg, d, s):
    """Tau weights for distances ``d`` at a given positive scale ``s``."""
    d = np.asarray(d, dtype=float)
    t = d / s
    rho2 = _rho_unit(cfg.family, t / cfg.c2)
    q1 = _psi_over_u_unit(cfg.family, t / cfg.c1) / cfg.c1**2
    q2 = _psi_over_u_unit(cfg.family, t / cfg.c2) / cfg.c2**2
    # psi_i(t) * t == q_i * t**2
    t2 = t * t
    A = float(np.sum(2.0 * rho2 - q2 * t2))
    B = float(np.sum(q1 * t2))
    w = np.maximum(A * q1 + B * q2, 0.0)
    return TauWeights(A, B, float(s), w)


def tau_weights(cfg, d, b=None):
    """Per-point weights of the tau center update.

    The weight of a point at standardized distance ``t = d / s`` is
    ``A psi_1(t)/t + B psi_2(t)/t`` where ``A = sum(2 rho_2 - psi_2 t)``
    and ``B = sum(psi_1 t)``. ``s`` is the M-scale of ``d``.
    """
    d = _as_finite(d).ravel()
    if np.any(d < 0):
        raise ValueError("distances must be non-negative")
    s = m_scale(cfg, d, b=b, which=1)
    if s == 0:
        raise DegenerateScaleError("distance scale is zero")
    return weights_at_scale(cfg, d, s)


# ---------------------------------------------------------------------------
# tuning-constant calibration

def _chi_pdf(r, p):
    logc = (1.0 - 0.5 * p) * math.log(2.0) - math.lgamma(0.5 * p)
    return np.exp(logc + (p - 1) * np.log(r) - 0.5 * r * r)


_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(64)


def _gl(f, a, b):
    x = 0.5 * (b - a) * _GL_NODES + 0.5 * (b + a)
    return 0.5 * (b - a) * float(np.dot(_GL_WEIGHTS, f(x)))


def expected_rho_gaussian(family, c, p):
    """``E[rho(||Z|| / c)]`` for ``Z ~ N_p(0, I)`` by Gauss-Legendre quadrature."""
    if family == "quadratic":
        return p / c**2

    def f(r):
        return _rho_unit(family, r / c) * _chi_pdf(r, p)

    knots = [0.0, _SHR_KNOT * c, c] if family == "smooth_hard_rejection" else [0.0, c]
    total = sum(_gl(f, a, b) for a, b in zip(knots[:-1], knots[1:]))
    return total + chi2_sf(c * c, p)


@lru_cache(maxsize=None)
def calibrate_c(family, p, b=0.5):
    """Constant ``c`` with ``E[rho(||Z|| / c)] = b`` under the standard p-variate normal."""
    if family == "quadratic":
        return math.sqrt(p / b)
    lo, hi = 1e-3, 10.0 * math.sqrt(p) + 10.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if expected_rho_gaussian(family, mid, p) > b:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-13 * hi:
            break
    return 0.5 * (lo + hi)


def default_rho(p, family="smooth_hard_rejection", b=0.5, efficiency_ratio=3.0):
    """Rho configuration calibrated for ``p``-dimensional Gaussian distances."""
    c1 = calibrate_c(family, int(p), b)
    return RhoConfig(family, c1, efficiency_ratio * c1, b)
