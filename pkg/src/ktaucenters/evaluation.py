"""Synthetic benchmarks and the classification error rate.

Random numbers come from numpy's PCG64 generator seeded through
``SeedSequence(seed, spawn_key=(rep_index,))``, so each replication of a
scenario is reproducible on its own.
"""
from dataclasses import dataclass, field
import math

import numpy as np

from ._special import chi2_quantile
from .core import KTauConfig, kmeans_fit, ktau_fit, tkmeans_fit
from .robust_covariance import (
    OutlierPolicy,
    classical_flags,
    improved_ktau,
    mahalanobis_sq,
    robust_flags,
    RobustEllipsoid,
)

CSV_FIELDS = ("K", "p", "method", "alpha", "mean_cer", "reps", "seed")
METHODS = ("kmeans", "tkmeans", "iktau", "ktau")


@dataclass
class SimScenario:
    K: int
    p: int
    contamination: float = 0.05
    theta_choices: tuple = (25, 50)
    replications: int = 20
    seed: int = 0

    def __post_init__(self):
        if self.K < 1 or self.p < 1:
            raise ValueError("K and p must be positive")
        if not (0 <= self.contamination < 0.5):
            raise ValueError("contamination must lie in [0, 0.5)")
        if self.replications < 1:
            raise ValueError("replications must be at least 1")


@dataclass
class LabeledDataset:
    data: np.ndarray
    true_label: np.ndarray
    true_centers: np.ndarray
    true_scatters: list = field(default_factory=list)

    @property
    def K(self):
        return len(self.true_centers)

    @property
    def outlier_mask(self):
        return self.true_label == self.K


@dataclass(frozen=True)
class MethodSpec:
    """One clustering pipeline of the simulation.

    ``alpha`` is the trimming level and is required for ``tkmeans``. Unset
    ``n_starts``/``max_iter`` fall back to the defaults of the reference R
    implementations: one start and 10 iterations for K-means, 50
    subset-mean starts and 20 iterations for trimmed K-means, 20 starts
    and 100 iterations for K-Tau.
    """

    name: str
    alpha: float | None = None
    n_starts: int | None = None
    max_iter: int | None = None
    beta: float = 0.01
    tol: float = 1e-6
    n_jobs: int = 1

    def __post_init__(self):
        if self.name not in METHODS:
            raise ValueError(f"unknown method {self.name!r}")
        if self.name == "tkmeans" and self.alpha is None:
            raise ValueError("tkmeans needs a trimming level alpha")

    @property
    def label(self):
        return f"{self.name}({self.alpha:g})" if self.name == "tkmeans" else self.name


def _rng(seed, rep_index):
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(rep_index,))))


def scenario_means(K, p):
    """Cluster means spaced 20 apart along the diagonal, ``k = 1..K``."""
    shift = K / 2 if K % 2 == 0 else (K - 1) / 2
    return np.array([20.0 * (-shift + k) * np.ones(p) for k in range(1, K + 1)])


def random_rotation_scatter(p, rng):
    """``P D P^t`` with ``P`` the eigenvectors of ``U U^t``, ``U ~ U(-1, 1)``."""
    U = rng.uniform(-1.0, 1.0, size=(p, p))
    _, P = np.linalg.eigh(U @ U.T)
    D = rng.uniform(1.0, 10.0, size=p)
    sigma = (P * D) @ P.T
    return 0.5 * (sigma + sigma.T), P


def _sample_normal(mu, sigma, size, rng):
    L = np.linalg.cholesky(sigma)
    return mu + rng.standard_normal((size, mu.size)) @ L.T


def box_outliers(n_out, lo, hi, means, scatters, rng, prob=0.99, max_failures=100_000):
    """Uniform points on the box ``[lo, hi]`` outside every ``prob`` ellipsoid."""
    p = len(lo)
    cut = chi2_quantile(p, prob)
    ells = [RobustEllipsoid(m, s, cut) for m, s in zip(means, scatters)]
    kept = []
    failures = 0
    while len(kept) < n_out:
        batch = rng.uniform(lo, hi, size=(max(64, 2 * (n_out - len(kept))), p))
        ok = np.ones(batch.shape[0], dtype=bool)
        for e in ells:
            ok &= mahalanobis_sq(batch, e) > cut
        # accept in draw order so the result does not depend on the batch size
        for row, good in zip(batch, ok):
            if good:
                failures = 0
                kept.append(row)
                if len(kept) == n_out:
                    break
            else:
                failures += 1
                if failures >= max_failures:
                    raise RuntimeError("box cannot accommodate the outlier exclusions")
    return np.array(kept).reshape(n_out, p)


def generate_scenario(sc, rep_index=0):
    """Gaussian clusters along the diagonal plus box-uniform contamination.

    Cluster ``k`` has ``theta * min(p, 4)`` points with ``theta`` drawn from
    ``sc.theta_choices`` for every cluster and replication. Outliers number
    ``ceil(contamination * n_clean)`` and are uniform on the clean-data
    bounding box doubled about its center, excluding the 99% ellipsoids.
    """
    rng = _rng(sc.seed, rep_index)
    K, p = sc.K, sc.p
    means = scenario_means(K, p)
    scatters, blocks, labels = [], [], []
    for k in range(K):
        theta = int(rng.choice(sc.theta_choices))
        n_k = theta * min(p, 4)
        sigma, _ = random_rotation_scatter(p, rng)
        scatters.append(sigma)
        blocks.append(_sample_normal(means[k], sigma, n_k, rng))
        labels.append(np.full(n_k, k))
    clean = np.vstack(blocks)
    n_out = math.ceil(sc.contamination * clean.shape[0] - 1e-9)
    lo, hi = clean.min(axis=0), clean.max(axis=0)
    center, half = 0.5 * (lo + hi), hi - lo
    out = box_outliers(n_out, center - half, center + half, means, scatters, rng)
    return LabeledDataset(
        data=np.vstack([clean, out]),
        true_label=np.concatenate(labels + [np.full(n_out, K)]),
        true_centers=means,
        true_scatters=scatters,
    )


M5_MEANS = np.array([[0.0, 8.0], [8.0, 0.0], [-8.0, 8.0]])
M5_SCATTERS = [
    np.array([[1.0, 0.0], [0.0, 1.0]]),
    np.array([[45.0, 0.0], [0.0, 30.0]]),
    np.array([[15.0, -10.0], [-10.0, 15.0]]),
]
M5_SIZES = (360, 720, 720)
M5_OUTLIERS = 200


def generate_m5(seed=0):
    """Three bivariate normal clusters (20/40/40% of 1800) plus 200 box outliers.

    The outliers are uniform on the bounding box of the clean points,
    excluding the 99% ellipsoids of the three generating normals.
    """
    rng = _rng(seed, 0)
    blocks = [_sample_normal(m, s, n, rng) for m, s, n in zip(M5_MEANS, M5_SCATTERS, M5_SIZES)]
    clean = np.vstack(blocks)
    out = box_outliers(M5_OUTLIERS, clean.min(axis=0), clean.max(axis=0),
                       M5_MEANS, M5_SCATTERS, rng)
    labels = np.concatenate([np.full(n, k) for k, n in enumerate(M5_SIZES)]
                            + [np.full(M5_OUTLIERS, 3)])
    return LabeledDataset(np.vstack([clean, out]), labels, M5_MEANS.copy(),
                          [s.copy() for s in M5_SCATTERS])


def _pairs(m):
    m = np.asarray(m, dtype=np.int64)
    return int(np.sum(m * (m - 1) // 2))


def cer(labels_a, labels_b):
    """Classification error rate: one minus the Rand index of two partitions."""
    a = np.asarray(labels_a)
    b = np.asarray(labels_b)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("label vectors must have equal length")
    n = a.size
    if n < 2:
        raise ValueError("need at least two observations")
    _, ia = np.unique(a, return_inverse=True)
    _, ib = np.unique(b, return_inverse=True)
    table = np.zeros((ia.max() + 1, ib.max() + 1), dtype=np.int64)
    np.add.at(table, (ia, ib), 1)
    together_both = _pairs(table)
    together_a = _pairs(table.sum(axis=1))
    together_b = _pairs(table.sum(axis=0))
    total = n * (n - 1) // 2
    agree = total + 2 * together_both - together_a - together_b
    return 1 - 2 * agree / (n * (n - 1))


def fit_method(data, spec, K, seed=0):
    """Fit one pipeline and return a result whose flags follow that pipeline."""
    policy = OutlierPolicy(spec.beta)
    if spec.name == "kmeans":
        res = kmeans_fit(data, K, n_starts=spec.n_starts or 1,
                         max_iter=spec.max_iter or 10, tol=spec.tol, seed=seed)
        res.outlier_flag, res.ellipsoids = classical_flags(data, res, policy)
        return res
    if spec.name == "tkmeans":
        res = tkmeans_fit(data, K, spec.alpha, n_starts=spec.n_starts or 50,
                          max_iter=spec.max_iter or 20, tol=spec.tol, seed=seed,
                          init="subset_means")
        res.outlier_flag, res.ellipsoids = classical_flags(data, res, policy)
        return res
    base = ktau_fit(data, KTauConfig(K=K, n_starts=spec.n_starts or 20,
                                     max_iter=spec.max_iter or 100, tol=spec.tol,
                                     seed=seed, n_jobs=spec.n_jobs))
    if spec.name == "ktau":
        base.outlier_flag, base.ellipsoids = robust_flags(data, base, policy=policy)
        return base
    return improved_ktau(data, base, policy=policy)


def run_simulation(sc, methods):
    """Mean CER per method over the replications of one scenario.

    Flagged observations are collected in an extra class before scoring
    against the true labels (outliers carry label ``K``).

    Returns
    -------
    list of dict
        One row per method with the keys of ``CSV_FIELDS``.
    """
    methods = [m if isinstance(m, MethodSpec) else MethodSpec(m) for m in methods]
    scores = {m: [] for m in methods}
    for rep in range(sc.replications):
        ds = generate_scenario(sc, rep)
        for m in methods:
            res = fit_method(ds.data, m, sc.K, seed=sc.seed * 100_003 + rep)
            scores[m].append(cer(ds.true_label, res.labels_with_outliers()))
    return [
        {
            "K": sc.K,
            "p": sc.p,
            "method": m.name,
            "alpha": "" if m.alpha is None else m.alpha,
            "mean_cer": float(np.mean(scores[m])),
            "reps": sc.replications,
            "seed": sc.seed,
        }
        for m in methods
    ]
