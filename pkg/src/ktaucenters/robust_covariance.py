"""Robust ellipsoids, Mahalanobis distances and outlier flagging.

Each cluster is summarized by an ellipsoid ``{x : d2(x, mu, sigma) <= cutoff}``
with ``cutoff`` the ``1 - beta`` chi-square quantile. A point is flagged as
an outlier when it falls outside every cluster's ellipsoid.
"""
from dataclasses import dataclass
import warnings

import numpy as np
from scipy.linalg import cholesky, solve_triangular

from ._special import chi2_quantile
from .core import ClusteringResult, _as_data, drop_empty_clusters
from .scales import default_rho, m_scale, psi_over_t, tau_scale

__all__ = [
    "OutlierPolicy",
    "RobustEllipsoid",
    "chi2_quantile",
    "classical_ellipsoid",
    "flag_outliers",
    "improved_ktau",
    "mahalanobis_sq",
    "robust_location_scatter",
    "robust_flags",
    "classical_flags",
]


@dataclass(frozen=True)
class OutlierPolicy:
    beta: float = 0.01

    def __post_init__(self):
        if not (0 < self.beta < 1):
            raise ValueError("beta must lie in (0, 1)")


@dataclass
class RobustEllipsoid:
    mu: np.ndarray
    sigma: np.ndarray
    cutoff: float

    @classmethod
    def from_estimates(cls, mu, sigma, policy=None):
        policy = policy or OutlierPolicy()
        mu = np.asarray(mu, dtype=float)
        return cls(mu, np.asarray(sigma, dtype=float), chi2_quantile(mu.size, 1 - policy.beta))

    def contains(self, x):
        return mahalanobis_sq(x, self) <= self.cutoff


def mahalanobis_sq(x, e):
    """Squared Mahalanobis distance of ``x`` (a vector or rows of a matrix) to ``e``.

    Uses a Cholesky solve; raises ``ValueError`` if ``e.sigma`` is not
    positive definite.
    """
    x = np.asarray(x, dtype=float)
    mu = np.asarray(e.mu, dtype=float)
    if x.shape[-1] != mu.size:
        raise ValueError("dimension mismatch")
    try:
        L = cholesky(np.asarray(e.sigma, dtype=float), lower=True)
    except np.linalg.LinAlgError as exc:
        raise ValueError("scatter matrix is not positive definite") from exc
    diff = (x - mu).reshape(-1, mu.size).T
    z = solve_triangular(L, diff, lower=True, check_finite=False)
    d2 = np.sum(z * z, axis=0)
    return float(d2[0]) if x.ndim == 1 else d2


# ---------------------------------------------------------------------------
# estimators

def _spherical_scale(X, mu):
    r = np.linalg.norm(X - mu, axis=1)
    s = m_scale(default_rho(1), r) if r.size else 0.0
    if s == 0 and np.any(r > 0):
        s = float(np.mean(r[r > 0]))
    if s == 0:
        s = 1e-6 * (1.0 + float(np.linalg.norm(mu)))
    return s


def _regularize(X, mu, sigma):
    """Ridge, then spherical fallback, for tiny or ill-conditioned clusters."""
    n, p = X.shape
    sigma = 0.5 * (sigma + sigma.T)
    evals = np.linalg.eigvalsh(sigma) if np.all(np.isfinite(sigma)) else np.array([np.nan])
    ok = np.all(np.isfinite(evals)) and evals[0] > 0 and evals[-1] / evals[0] <= 1e12
    if ok and n > p + 1:
        return sigma
    tr = float(np.trace(sigma)) if np.all(np.isfinite(sigma)) else 0.0
    if tr > 0:
        ridged = sigma + 1e-8 * tr / p * np.eye(p)
        ev = np.linalg.eigvalsh(ridged)
        if ev[0] > 0 and ev[-1] / ev[0] <= 1e12:
            return ridged
    s = _spherical_scale(X, mu)
    return s * s * np.eye(p)


def _is_degenerate(sigma):
    ev = np.linalg.eigvalsh(sigma)
    return not (ev[0] > 0 and ev[-1] / ev[0] <= 1e12)


def robust_location_scatter(points, rho=None, max_iter=200, tol=1e-10, policy=None):
    """S-type robust location and scatter by iterative reweighting.

    Parameters
    ----------
    points : array_like, shape (n, p)
        At least two observations.
    rho : RhoConfig, optional
        Defaults to the smooth hard-rejection rho calibrated for ``p``.
    max_iter, tol : int, float
        Stop once both the location and the scatter change by less than
        ``tol`` relative.
    policy : OutlierPolicy, optional
        Sets the ellipsoid cutoff.

    Returns
    -------
    RobustEllipsoid

    Notes
    -----
    Starts from the coordinate-wise median and the diagonal of squared
    normalized MADs. Each step computes Mahalanobis distances ``d``, their
    M-scale ``s`` and weights ``psi(d/s) / (d/s)``, takes weighted means and
    covariances, and rescales the scatter so that the median squared
    distance equals the chi-square median.
    """
    X = _as_data(points)
    n, p = X.shape
    if n < 2:
        raise ValueError("at least two points are needed")
    rho = rho if rho is not None else default_rho(p)
    chi_med = chi2_quantile(p, 0.5)

    mu = np.median(X, axis=0)
    if np.all(X == mu):
        return RobustEllipsoid.from_estimates(mu, _regularize(X, mu, np.zeros((p, p))), policy)
    mad = np.median(np.abs(X - mu), axis=0) / 0.6744897501960817
    std = X.std(axis=0)
    spread = np.where(mad > 0, mad, std)
    spread = np.where(spread > 0, spread, _spherical_scale(X, mu) / np.sqrt(p))
    sigma = _regularize(X, mu, np.diag(spread**2))

    for _ in range(max_iter):
        d = np.sqrt(mahalanobis_sq(X, RobustEllipsoid(mu, sigma, 1.0)))
        s = m_scale(rho, d)
        if s == 0:
            break
        w = psi_over_t(rho, 1, d / s)
        if w.sum() <= 0:
            break
        mu_new = w @ X / w.sum()
        diff = X - mu_new
        sig_new = (w[:, None] * diff).T @ diff / w.sum()
        sig_new = _regularize(X, mu_new, sig_new)
        d2 = mahalanobis_sq(X, RobustEllipsoid(mu_new, sig_new, 1.0))
        med = float(np.median(d2))
        if med > 0:
            sig_new = sig_new * (med / chi_med)
        dmu = np.linalg.norm(mu_new - mu) / (1.0 + np.linalg.norm(mu))
        dsig = np.linalg.norm(sig_new - sigma) / np.linalg.norm(sigma)
        mu, sigma = mu_new, sig_new
        if dmu < tol and dsig < tol:
            break
    return RobustEllipsoid.from_estimates(mu, _regularize(X, mu, sigma), policy)


def classical_ellipsoid(points, policy=None):
    """Ellipsoid from the sample mean and covariance (baseline pipelines)."""
    X = _as_data(points)
    mu = X.mean(axis=0)
    if X.shape[0] < 2:
        sigma = np.zeros((X.shape[1], X.shape[1]))
    else:
        sigma = np.cov(X, rowvar=False).reshape(X.shape[1], X.shape[1])
    return RobustEllipsoid.from_estimates(mu, _regularize(X, mu, sigma), policy)


def _fallback_ellipsoid(points, p, scale, policy):
    X = np.asarray(points, dtype=float).reshape(-1, p)
    mu = X.mean(axis=0) if X.size else np.zeros(p)
    return RobustEllipsoid.from_estimates(mu, scale * np.eye(p), policy)


def _cluster_ellipsoids(X, assignment, K, fit, policy, previous=None):
    p = X.shape[1]
    out = [None] * K
    for k in range(K):
        pts = X[assignment == k]
        if pts.shape[0] >= 2:
            out[k] = fit(pts)
    fitted = [e for e in out if e is not None]
    scale = float(np.mean([np.trace(e.sigma) / p for e in fitted])) if fitted else 1.0
    for k in range(K):
        if out[k] is None:
            pts = X[assignment == k]
            if pts.shape[0] == 0 and previous is not None:
                out[k] = previous[k]
            else:
                out[k] = _fallback_ellipsoid(pts, p, scale, policy)
    return out


# ---------------------------------------------------------------------------
# flagging

def flag_outliers(data, assignment, ellipsoids):
    """Flag the points lying outside the union of all ellipsoids.

    ``assignment`` is accepted for interface symmetry; a point inside the
    ellipsoid of some other cluster is not an outlier.
    """
    X = _as_data(data)
    inside = np.zeros(X.shape[0], dtype=bool)
    for e in ellipsoids:
        inside |= mahalanobis_sq(X, e) <= e.cutoff
    return ~inside


def robust_flags(data, result, rho=None, policy=None):
    """Outlier flags of a K-Tau result from robust per-cluster ellipsoids."""
    X = _as_data(data)
    policy = policy or OutlierPolicy()
    ells = _cluster_ellipsoids(
        X, result.assignment, result.K,
        lambda pts: robust_location_scatter(pts, rho, policy=policy), policy)
    return flag_outliers(X, result.assignment, ells), ells


def classical_flags(data, result, policy=None):
    """Outlier flags from classical mean/covariance ellipsoids.

    Points already trimmed by the fit do not enter the ellipsoid estimates.
    """
    X = _as_data(data)
    policy = policy or OutlierPolicy()
    lab = np.asarray(result.assignment).copy()
    lab[np.asarray(result.outlier_flag, dtype=bool)] = -1
    ells = _cluster_ellipsoids(X, lab, result.K,
                               lambda pts: classical_ellipsoid(pts, policy), policy)
    return flag_outliers(X, result.assignment, ells), ells


def improved_ktau(data, base, rho=None, policy=None):
    """Reassign points by robust Mahalanobis distance to per-cluster ellipsoids.

    A robust ellipsoid is fitted to each cluster of ``base``, every point
    moves to the cluster of smallest Mahalanobis distance, the ellipsoids
    are refitted on the new clusters and points outside all of them are
    flagged. Empty clusters of ``base`` are dropped with a warning.
    """
    X = _as_data(data)
    p = X.shape[1]
    policy = policy or OutlierPolicy()
    rho = rho if rho is not None else default_rho(p)
    base = drop_empty_clusters(base)
    K = base.K

    def fit(pts):
        return robust_location_scatter(pts, rho, policy=policy)

    first = _cluster_ellipsoids(X, base.assignment, K, fit, policy)
    d2 = np.column_stack([mahalanobis_sq(X, e) for e in first])
    lab = np.argmin(d2, axis=1)
    if np.any(np.bincount(lab, minlength=K) < 2):
        warnings.warn("a reassigned cluster has fewer than two points", RuntimeWarning)
    ells = _cluster_ellipsoids(X, lab, K, fit, policy, previous=first)
    flags = flag_outliers(X, lab, ells)

    centers = np.array([e.mu for e in ells])
    dist = np.linalg.norm(X - centers[lab], axis=1)
    return ClusteringResult(
        centers=centers,
        assignment=lab,
        distances=dist,
        tau=tau_scale(rho, dist),
        outlier_flag=flags,
        iterations=base.iterations,
        converged=base.converged,
        method="iktau",
        ellipsoids=ells,
    )
