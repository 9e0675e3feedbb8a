"""K-Tau centers and the K-means / trimmed K-means baselines.

K-Tau picks the cluster centers minimizing a tau-scale of the distances of
each observation to its nearest center. The minimization is carried out by
a weighted fixed-point iteration (assign, M-scale, tau weights, weighted
means), restarted from several initial center sets.
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
import math
import warnings

import numpy as np

from . import scales
from .scales import (
    RhoConfig,
    default_rho,
    m_scale,
    tau_scale,
    weights_at_scale,
)


@dataclass
class KTauConfig:
    """Settings of :func:`ktau_fit`.

    ``iteration_b`` is the target of the M-scale solved inside the center
    update; it is 0.5 regardless of ``rho.b`` unless ``unify_b`` is set, in
    which case ``rho.b`` is used everywhere.
    """

    K: int
    rho: RhoConfig | None = None
    n_starts: int = 20
    max_iter: int = 100
    tol: float = 1e-6
    seed: int = 0
    use_robin_first_start: bool = True
    iteration_b: float = 0.5
    unify_b: bool = False
    n_jobs: int = 1

    def __post_init__(self):
        if self.K < 1:
            raise ValueError("K must be a positive integer")
        if self.n_starts < 1 or self.max_iter < 1:
            raise ValueError("n_starts and max_iter must be positive")
        if not self.tol > 0:
            raise ValueError("tol must be positive")


@dataclass
class ClusteringResult:
    centers: np.ndarray
    assignment: np.ndarray
    distances: np.ndarray
    tau: float
    outlier_flag: np.ndarray
    iterations: int
    converged: bool
    method: str = "ktau"
    history: list | None = field(default=None, repr=False)
    ellipsoids: list | None = field(default=None, repr=False)

    @property
    def K(self):
        return len(self.centers)

    def labels_with_outliers(self):
        """Assignment with flagged points moved to an extra class ``K``."""
        lab = np.asarray(self.assignment).copy()
        lab[np.asarray(self.outlier_flag, dtype=bool)] = self.K
        return lab

    def to_dict(self):
        return {
            "method": self.method,
            "centers": np.asarray(self.centers).tolist(),
            "assignment": [int(a) for a in self.assignment],
            "distances": [float(d) for d in self.distances],
            "tau": float(self.tau),
            "outlier_flag": [bool(f) for f in self.outlier_flag],
            "iterations": int(self.iterations),
            "converged": bool(self.converged),
        }


def _as_data(data):
    X = np.asarray(data, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("data must be a non-empty n x p matrix")
    if not np.all(np.isfinite(X)):
        raise ValueError("data contains non-finite values")
    return X


def distances(data, centers):
    """Euclidean distance to the nearest center and its index, per row.

    Ties go to the lowest center index.
    """
    X = _as_data(data)
    C = np.atleast_2d(np.asarray(centers, dtype=float))
    if C.shape[1] != X.shape[1]:
        raise ValueError(f"dimension mismatch: data p={X.shape[1]}, centers p={C.shape[1]}")
    d2 = np.empty((X.shape[0], C.shape[0]))
    for k, c in enumerate(C):
        diff = X - c
        d2[:, k] = np.sum(diff * diff, axis=1)
    lab = np.argmin(d2, axis=1)
    return np.sqrt(d2[np.arange(X.shape[0]), lab]), lab


def ktau_objective(data, centers, rho):
    """Tau-scale of the nearest-center distances."""
    d, _ = distances(data, centers)
    return tau_scale(rho, d)


def _relative_change(new, old):
    num = np.linalg.norm(new - old, axis=1)
    den = np.linalg.norm(old, axis=1)
    den = np.where(den < 1e-12, 1.0, den)
    return num / den


def _reseed_empty(X, centers, counts, d, band, rng):
    # farthest point inside the inlier band; seeded-random observation otherwise
    used = set()
    for k in np.flatnonzero(counts == 0):
        cand = np.flatnonzero(d <= band)
        cand = np.array([i for i in cand if i not in used], dtype=int)
        if cand.size:
            i = int(cand[np.argmax(d[cand])])
        else:
            i = int(rng.integers(X.shape[0]))
        used.add(i)
        centers[k] = X[i]
    return centers


def ktau_iterate(data, init, cfg, rng=None, record_history=False):
    """Run the K-Tau center update from one set of initial centers.

    Parameters
    ----------
    data : array_like, shape (n, p)
    init : array_like, shape (K, p)
        Distinct starting centers.
    cfg : KTauConfig
    rng : numpy.random.Generator, optional
        Used only to reseed empty clusters when no inlier qualifies.
    record_history : bool
        Keep every visited center set in ``result.history``.

    Returns
    -------
    ClusteringResult
        The final center set when the iteration converged, otherwise the
        visited center set of smallest tau objective.
    """
    X = _as_data(data)
    n, p = X.shape
    centers = np.array(init, dtype=float, copy=True)
    K = centers.shape[0]
    if centers.shape[1] != p:
        raise ValueError("initial centers have the wrong dimension")
    rho = cfg.rho if cfg.rho is not None else default_rho(p)
    b_it = rho.b if cfg.unify_b else cfg.iteration_b
    same_b = b_it == rho.b
    if rng is None:
        rng = np.random.default_rng(cfg.seed)

    history = [centers.copy()] if record_history else None
    best = None  # (objective, centers)
    converged = False
    it = 0
    for it in range(1, cfg.max_iter + 1):
        d, lab = distances(X, centers)
        s = m_scale(rho, d, b=b_it)
        if s == 0:
            # more than a (1 - b) share of points sits on the centers
            converged = True
            break
        if same_b:
            obj = s * math.sqrt(float(np.mean(scales.rho(rho, 2, d / s))))
            if best is None or obj < best[0]:
                best = (obj, centers.copy())
        w = weights_at_scale(rho, d, s).per_point_weight

        new = centers.copy()
        counts = np.bincount(lab, minlength=K)
        for k in range(K):
            mask = lab == k
            if not counts[k]:
                continue
            wk = w[mask]
            wsum = wk.sum()
            if wsum > 0:
                new[k] = wk @ X[mask] / wsum
        if np.any(counts == 0):
            band = rho.c1 * s if rho.bounded else np.inf
            new = _reseed_empty(X, new, counts, d, band, rng)

        change = _relative_change(new, centers)
        centers = new
        if record_history:
            history.append(centers.copy())
        if np.all(change <= cfg.tol):
            converged = True
            break

    d, lab = distances(X, centers)
    tau = tau_scale(rho, d)
    # an unconverged run may end on a worse iterate than one it visited; a converged
    # run keeps its fixed point even when the jump of rho at the inner knot makes an
    # earlier iterate marginally cheaper
    if not converged and best is not None and best[0] < tau * (1 - 1e-12):
        centers = best[1]
        d, lab = distances(X, centers)
        tau = tau_scale(rho, d)
    return ClusteringResult(
        centers=centers,
        assignment=lab,
        distances=d,
        tau=tau,
        outlier_flag=np.zeros(n, dtype=bool),
        iterations=it,
        converged=converged,
        method="ktau",
        history=history,
    )


# ---------------------------------------------------------------------------
# initialization

def _kth_neighbor_distance(X, k, chunk=512):
    n = X.shape[0]
    sq = np.einsum("ij,ij->i", X, X)
    out = np.empty(n)
    for start in range(0, n, chunk):
        stop = min(start + chunk, n)
        block = sq[start:stop, None] + sq[None, :] - 2.0 * X[start:stop] @ X.T
        np.maximum(block, 0.0, out=block)
        block[np.arange(stop - start), np.arange(start, stop)] = np.inf
        out[start:stop] = np.sqrt(np.partition(block, k - 1, axis=1)[:, k - 1])
    return out


def robin_init(data, K, seed=None):
    """Density-aware farthest-point seeding.

    The density score of a point is its distance to the 10th nearest
    neighbour (the ``ceil(n/20)``-th when ``n < 50``). Points scoring below
    the median are eligible; the first seed is the eligible point with the
    smallest score and each further seed is the eligible point farthest
    from the seeds already chosen. ``seed`` is accepted for interface
    symmetry with the random starts; the procedure is deterministic.
    """
    X = _as_data(data)
    n = X.shape[0]
    if K > n:
        raise ValueError(f"K={K} exceeds the number of observations n={n}")
    if K == n:
        return X.copy()
    knn = 10 if n >= 50 else max(1, math.ceil(n / 20))
    knn = min(knn, n - 1)
    score = _kth_neighbor_distance(X, knn)
    eligible = np.flatnonzero(score < np.median(score))
    if eligible.size == 0:
        eligible = np.arange(n)

    chosen = [int(eligible[np.argmin(score[eligible])])]
    mind = np.linalg.norm(X - X[chosen[0]], axis=1)
    while len(chosen) < K:
        pool = eligible if np.max(mind[eligible]) > 0 else np.arange(n)
        i = int(pool[np.argmax(mind[pool])])
        if mind[i] == 0:
            raise ValueError("fewer than K distinct observations")
        chosen.append(i)
        mind = np.minimum(mind, np.linalg.norm(X - X[i], axis=1))
    return X[chosen].copy()


def random_init(data, K, rng):
    """K distinct observations drawn without replacement."""
    X = _as_data(data)
    if K > X.shape[0]:
        raise ValueError(f"K={K} exceeds the number of observations n={X.shape[0]}")
    idx = rng.choice(X.shape[0], size=K, replace=False)
    return X[idx].copy()


def start_generators(seed, n_starts):
    """One independent generator per start, derived from ``seed``."""
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n_starts)]


def _select(results):
    # deterministic reduction by (objective, start index)
    return min(range(len(results)), key=lambda h: (results[h].tau, h))


def ktau_fit(data, cfg):
    """K-Tau centers with multiple starts.

    The first start uses :func:`robin_init` when enabled, the remaining ones
    random observations; the result with the smallest tau objective wins.
    """
    X = _as_data(data)
    n, p = X.shape
    if cfg.K > n:
        raise ValueError(f"K={cfg.K} exceeds the number of observations n={n}")
    if cfg.rho is None:
        cfg = KTauConfig(**{**cfg.__dict__, "rho": default_rho(p)})
    gens = start_generators(cfg.seed, cfg.n_starts)

    def run(h):
        rng = gens[h]
        if h == 0 and cfg.use_robin_first_start:
            init = robin_init(X, cfg.K)
        else:
            init = random_init(X, cfg.K, rng)
        return ktau_iterate(X, init, cfg, rng=rng)

    if cfg.n_jobs > 1 and cfg.n_starts > 1:
        with ThreadPoolExecutor(max_workers=cfg.n_jobs) as pool:
            results = list(pool.map(run, range(cfg.n_starts)))
    else:
        results = [run(h) for h in range(cfg.n_starts)]
    return results[_select(results)]


# ---------------------------------------------------------------------------
# baselines

def _trim_count(alpha, n):
    return math.ceil(alpha * n - 1e-9)


def tkmeans_iterate(data, init, alpha, max_iter=100, tol=1e-6, rng=None,
                    record_history=False):
    """Trimmed Lloyd iteration from given centers; ``alpha = 0`` is plain Lloyd."""
    X = _as_data(data)
    n = X.shape[0]
    centers = np.array(init, dtype=float, copy=True)
    K = centers.shape[0]
    n_trim = _trim_count(alpha, n)
    if not (0 <= alpha < 1) or n_trim >= n - K:
        raise ValueError(f"infeasible trimming level alpha={alpha} for n={n}, K={K}")
    if rng is None:
        rng = np.random.default_rng(0)

    def trim(d):
        keep = np.ones(n, dtype=bool)
        if n_trim:
            keep[np.argsort(d, kind="stable")[n - n_trim:]] = False
        return keep

    history = [centers.copy()] if record_history else None
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        d, lab = distances(X, centers)
        keep = trim(d)
        new = centers.copy()
        counts = np.bincount(lab[keep], minlength=K)
        for k in range(K):
            if counts[k]:
                new[k] = X[keep & (lab == k)].mean(axis=0)
        if np.any(counts == 0):
            band = np.max(d[keep])
            new = _reseed_empty(X, new, counts, np.where(keep, d, np.inf), band, rng)
        change = _relative_change(new, centers)
        centers = new
        if record_history:
            history.append(centers.copy())
        if np.all(change <= tol):
            converged = True
            break

    d, lab = distances(X, centers)
    keep = trim(d)
    return ClusteringResult(
        centers=centers,
        assignment=lab,
        distances=d,
        tau=math.sqrt(float(np.mean(d[keep] ** 2))),
        outlier_flag=~keep,
        iterations=it,
        converged=converged,
        method="tkmeans" if n_trim else "kmeans",
        history=history,
    )


def kmeans_iterate(data, init, max_iter=100, tol=1e-6, rng=None, record_history=False):
    """Lloyd's algorithm from given centers."""
    return tkmeans_iterate(data, init, 0.0, max_iter, tol, rng, record_history)


def subset_mean_init(data, K, rng):
    """Each center is the mean of ``p + 1`` random observations (tclust default)."""
    X = _as_data(data)
    n, p = X.shape
    m = min(p + 1, n)
    return np.array([X[rng.choice(n, size=m, replace=False)].mean(axis=0) for _ in range(K)])


_INITS = {"observations": random_init, "subset_means": subset_mean_init}


def tkmeans_fit(data, K, alpha, n_starts=10, max_iter=100, tol=1e-6, seed=0,
                init="observations"):
    """Trimmed K-means with random starts.

    The ``ceil(alpha n)`` points farthest from their nearest center are
    discarded before every mean update; they come back with
    ``outlier_flag`` set and keep their nearest-center assignment. The
    start with the smallest mean squared untrimmed distance is returned.
    ``init`` selects K distinct observations (``"observations"``) or means
    of random ``p + 1`` subsets (``"subset_means"``) as starting centers.
    """
    X = _as_data(data)
    n = X.shape[0]
    if K > n:
        raise ValueError(f"K={K} exceeds the number of observations n={n}")
    if not (0 <= alpha < 1) or _trim_count(alpha, n) >= n - K:
        raise ValueError(f"infeasible trimming level alpha={alpha} for n={n}, K={K}")
    make_init = _INITS[init]
    results = []
    for rng in start_generators(seed, n_starts):
        centers = make_init(X, K, rng)
        results.append(tkmeans_iterate(X, centers, alpha, max_iter, tol, rng))
    return results[_select(results)]


def kmeans_fit(data, K, n_starts=10, max_iter=100, tol=1e-6, seed=0):
    """Lloyd K-means with random-observation starts; ``tau`` holds the L2 scale."""
    return tkmeans_fit(data, K, 0.0, n_starts, max_iter, tol, seed, init="observations")


def drop_empty_clusters(result):
    """Remove centers without members, relabelling the rest consecutively."""
    counts = np.bincount(result.assignment, minlength=result.K)
    if np.all(counts > 0):
        return result
    keep = np.flatnonzero(counts > 0)
    warnings.warn(f"dropping {result.K - keep.size} empty cluster(s)", RuntimeWarning)
    remap = -np.ones(result.K, dtype=int)
    remap[keep] = np.arange(keep.size)
    return ClusteringResult(
        centers=result.centers[keep],
        assignment=remap[result.assignment],
        distances=result.distances,
        tau=result.tau,
        outlier_flag=result.outlier_flag,
        iterations=result.iterations,
        converged=result.converged,
        method=result.method,
    )
