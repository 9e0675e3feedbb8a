import itertools

import numpy as np
import pytest

from conftest import matched_error
from ktaucenters import scales
from ktaucenters.core import (
    ClusteringResult,
    KTauConfig,
    distances,
    drop_empty_clusters,
    kmeans_fit,
    kmeans_iterate,
    ktau_fit,
    ktau_iterate,
    ktau_objective,
    random_init,
    robin_init,
    start_generators,
    subset_mean_init,
    tkmeans_fit,
    tkmeans_iterate,
)
from ktaucenters.evaluation import generate_m5
from ktaucenters.scales import RhoConfig, default_rho, lloyd_rho, tau_scale


def two_blobs(seed, n=400, sep=10.0, p=2, outliers=0.0):
    r = np.random.default_rng(seed)
    m = np.zeros((2, p))
    m[0, 0], m[1, 0] = -sep / 2, sep / 2
    X = np.vstack([r.standard_normal((n // 2, p)) + m[0], r.standard_normal((n // 2, p)) + m[1]])
    n_out = int(round(outliers * n))
    if n_out:
        ang = r.uniform(0, 2 * np.pi, n_out)
        out = np.zeros((n_out, p))
        out[:, 0], out[:, 1] = 50 * np.cos(ang), 50 * np.sin(ang)
        X = np.vstack([X, out])
    return X, m


class TestDistances:
    def test_example(self):
        d, lab = distances(np.array([[0.0, 0.0]]), np.array([[1.0, 0.0], [0.0, 2.0]]))
        assert d[0] == 1.0 and lab[0] == 0

    def test_on_center(self):
        d, _ = distances(np.array([[1.0, 2.0]]), np.array([[1.0, 2.0]]))
        assert d[0] == 0.0

    def test_tie_lowest_index(self):
        _, lab = distances(np.array([[0.0, 0.0]]), np.array([[1.0, 0.0], [-1.0, 0.0]]))
        assert lab[0] == 0

    def test_oracle(self, rng):
        X = rng.normal(size=(10, 3))
        C = rng.normal(size=(3, 3))
        d, lab = distances(X, C)
        for i, x in enumerate(X):
            norms = [np.sqrt(sum((a - b) ** 2 for a, b in zip(x, c))) for c in C]
            assert lab[i] == int(np.argmin(norms))
            assert d[i] == pytest.approx(min(norms), rel=1e-14)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            distances(np.zeros((3, 2)), np.zeros((2, 3)))


class TestObjective:
    def test_zero_at_centers(self):
        X = np.array([[0.0, 0], [0, 0], [5, 5], [5, 5]])
        assert ktau_objective(X, np.array([[0.0, 0], [5, 5]]), default_rho(2)) == 0.0

    def test_quadratic_is_rms(self, rng):
        X = rng.normal(size=(40, 2))
        C = rng.normal(size=(2, 2))
        d, _ = distances(X, C)
        assert ktau_objective(X, C, lloyd_rho()) == pytest.approx(np.sqrt(np.mean(d**2)), rel=1e-14)

    def test_composition(self, rng):
        X = rng.normal(size=(40, 3))
        C = X[:2]
        rho = default_rho(3)
        d = np.linalg.norm(X[:, None] - C[None], axis=2).min(axis=1)
        assert ktau_objective(X, C, rho) == pytest.approx(tau_scale(rho, d), rel=1e-14)


class TestIterate:
    def test_lloyd_equivalence(self, rng):
        X = rng.normal(size=(300, 3)) + np.repeat(rng.normal(scale=4, size=(3, 3)), 100, axis=0)
        init = X[rng.choice(300, 3, replace=False)]
        cfg = KTauConfig(K=3, rho=lloyd_rho(), unify_b=True, max_iter=50)
        a = ktau_iterate(X, init, cfg, record_history=True)
        b = kmeans_iterate(X, init, max_iter=50, record_history=True)
        assert len(a.history) == len(b.history)
        for ca, cb in zip(a.history, b.history):
            assert np.max(np.abs(ca - cb)) <= 1e-12

    def test_fixed_point(self):
        X = np.array([[-1.0, 0]] * 10 + [[1.0, 0]] * 10)
        init = np.array([[-1.0, 0], [1.0, 0]])
        res = ktau_iterate(X, init, KTauConfig(K=2))
        assert res.iterations == 1 and res.converged
        np.testing.assert_array_equal(res.centers, init)
        assert res.tau == 0.0

    def test_coincident_points(self):
        X = np.ones((10, 2))
        res = ktau_iterate(X, np.array([[1.0, 1.0]]), KTauConfig(K=1))
        assert res.tau == 0.0 and res.converged

    def test_robust_to_far_outliers(self):
        X, m = two_blobs(3, outliers=0.1)
        clean_means = np.array([X[:200].mean(0), X[200:400].mean(0)])
        res = ktau_iterate(X, m + 1.0, KTauConfig(K=2))
        assert matched_error(res.centers, clean_means) < 0.5

    def test_empty_cluster_reseeded(self):
        X, _ = two_blobs(4)
        init = np.array([[-5.0, 0], [5, 0], [1e4, 1e4]])
        res = ktau_iterate(X, init, KTauConfig(K=3))
        assert np.all(np.isfinite(res.centers))
        assert np.all(np.bincount(res.assignment, minlength=3) > 0)

    def test_result_invariants(self, rng):
        X = rng.normal(size=(120, 2))
        res = ktau_iterate(X, X[:3], KTauConfig(K=3))
        d, lab = distances(X, res.centers)
        np.testing.assert_array_equal(lab, res.assignment)
        np.testing.assert_array_equal(d, res.distances)
        assert res.tau == pytest.approx(tau_scale(default_rho(2), d))

    def test_stationarity(self):
        X, m = two_blobs(11, outliers=0.05)
        rho = default_rho(2)
        res = ktau_iterate(X, m + 0.5, KTauConfig(K=2, rho=rho, tol=1e-10, max_iter=500))
        assert res.converged
        d, lab = res.distances, res.assignment
        s = scales.m_scale(rho, d, b=0.5)
        w = scales.weights_at_scale(rho, d, s).per_point_weight
        for k in range(2):
            mk = lab == k
            wm = w[mk] @ X[mk] / w[mk].sum()
            assert np.linalg.norm(res.centers[k] - wm) <= 1e-6 * (1 + np.linalg.norm(res.centers[k]))

    def test_wrong_dimension(self):
        with pytest.raises(ValueError):
            ktau_iterate(np.zeros((5, 2)), np.zeros((1, 3)), KTauConfig(K=1))


class TestRobin:
    def test_k_equals_n(self, rng):
        X = rng.normal(size=(6, 2))
        C = robin_init(X, 6)
        assert sorted(map(tuple, C)) == sorted(map(tuple, X))

    def test_one_seed_per_blob(self, rng):
        means = np.array([[0.0, 0], [20, 0], [0, 20]])
        X = np.vstack([rng.normal(scale=0.5, size=(60, 2)) + mu for mu in means])
        C = robin_init(X, 3)
        owner = np.argmin(np.linalg.norm(C[:, None] - means[None], axis=2), axis=1)
        assert sorted(owner) == [0, 1, 2]

    def test_avoids_isolated_outliers(self, rng):
        means = np.array([[0.0, 0], [20, 0], [0, 20]])
        X = np.vstack([rng.normal(scale=0.5, size=(60, 2)) + mu for mu in means])
        out = np.array([[100.0, 100], [-100, 100], [100, -100], [-100, -100], [200, 0]])
        X = np.vstack([X, out])
        C = robin_init(X, 3)
        # k-NN oracle: the isolated points have the five largest 10-NN distances
        D = np.linalg.norm(X[:, None] - X[None], axis=2)
        knn = np.sort(D, axis=1)[:, 10]
        isolated = X[np.argsort(knn)[-5:]]
        for c in C:
            assert not any(np.allclose(c, o) for o in isolated)

    def test_distinct_and_deterministic(self, rng):
        X = rng.normal(size=(30, 2))
        C = robin_init(X, 5)
        assert len({tuple(c) for c in C}) == 5
        np.testing.assert_array_equal(C, robin_init(X, 5))

    def test_too_few_points(self):
        with pytest.raises(ValueError):
            robin_init(np.zeros((2, 2)), 3)


class TestFit:
    def test_single_start_equals_iterate(self, rng):
        X = rng.normal(size=(80, 2))
        cfg = KTauConfig(K=2, n_starts=1, use_robin_first_start=False, seed=9, rho=default_rho(2))
        fit = ktau_fit(X, cfg)
        g = start_generators(9, 1)[0]
        ref = ktau_iterate(X, random_init(X, 2, g), cfg, rng=g)
        np.testing.assert_array_equal(fit.centers, ref.centers)

    def test_min_selection(self, rng):
        X = rng.normal(size=(90, 2))
        cfg = KTauConfig(K=3, n_starts=6, seed=4, rho=default_rho(2))
        fit = ktau_fit(X, cfg)
        gens = start_generators(4, 6)
        taus = []
        for h, g in enumerate(gens):
            init = robin_init(X, 3) if h == 0 else random_init(X, 3, g)
            taus.append(ktau_iterate(X, init, cfg, rng=g).tau)
            assert fit.tau <= ktau_objective(X, init, cfg.rho) + 1e-12
        assert fit.tau == min(taus)

    def test_deterministic(self, rng):
        X = rng.normal(size=(60, 2))
        a = ktau_fit(X, KTauConfig(K=2, seed=3, n_starts=4))
        b = ktau_fit(X, KTauConfig(K=2, seed=3, n_starts=4))
        np.testing.assert_array_equal(a.centers, b.centers)

    def test_parallel_matches_serial(self, rng):
        X = rng.normal(size=(60, 2))
        a = ktau_fit(X, KTauConfig(K=2, seed=3, n_starts=4))
        b = ktau_fit(X, KTauConfig(K=2, seed=3, n_starts=4, n_jobs=3))
        np.testing.assert_array_equal(a.centers, b.centers)

    def test_k_too_large(self):
        with pytest.raises(ValueError):
            ktau_fit(np.zeros((2, 2)), KTauConfig(K=3))

    def test_invalid_config(self):
        for kw in ({"K": 0}, {"K": 1, "tol": 0}, {"K": 1, "n_starts": 0}):
            with pytest.raises(ValueError):
                KTauConfig(**kw)

    def test_scale_equivariance(self):
        X, _ = two_blobs(21, outliers=0.05)
        cfg = KTauConfig(K=2, seed=1, n_starts=3)
        base = ktau_fit(X, cfg).centers
        for lam in (3.7, 0.01):
            np.testing.assert_allclose(ktau_fit(lam * X, cfg).centers, lam * base, rtol=1e-9, atol=0)

    def test_translation_equivariance(self):
        # the relative stopping rule is not translation invariant, so compare converged fixed points
        X, _ = two_blobs(21, outliers=0.05)
        cfg = KTauConfig(K=2, seed=1, n_starts=3, tol=1e-13, max_iter=1000)
        base = ktau_fit(X, cfg).centers
        v = np.array([13.0, -7.0])
        np.testing.assert_allclose(ktau_fit(X + v, cfg).centers, base + v, rtol=0, atol=1e-9)

    def test_m5_recovers_centers_after_reassignment(self):
        from ktaucenters.robust_covariance import improved_ktau

        ds = generate_m5(0)
        base = ktau_fit(ds.data, KTauConfig(K=3, seed=0))
        assert matched_error(improved_ktau(ds.data, base).centers, ds.true_centers) < 1.5

    @pytest.mark.xfail(strict=True, reason="the tau centers of the elongated M5 clusters sit 1.7-3 "
                       "units off the generating means even on clean data")
    def test_m5_base_centers_within_1_5(self):
        ds = generate_m5(0)
        res = ktau_fit(ds.data, KTauConfig(K=3, seed=0))
        assert matched_error(res.centers, ds.true_centers) < 1.5


def lloyd_sse(X, lab, K):
    return sum(((X[lab == k] - X[lab == k].mean(0)) ** 2).sum() for k in range(K) if np.any(lab == k))


class TestKMeans:
    def test_single_cluster_mean(self, rng):
        X = rng.normal(size=(50, 3))
        res = kmeans_fit(X, 1)
        np.testing.assert_allclose(res.centers[0], X.mean(0), rtol=1e-13)

    def test_monotone_objective(self, rng):
        X, _ = two_blobs(5, sep=4)
        res = kmeans_iterate(X, X[[0, 1]], record_history=True, tol=1e-12)
        objs = [np.mean(distances(X, C)[0] ** 2) for C in res.history]
        assert all(b <= a + 1e-12 for a, b in zip(objs, objs[1:]))

    def test_brute_force_two_partition(self):
        X = np.array([[0.0, 0], [1, 0], [0, 1], [10, 10], [11, 10], [10, 11]])
        best = np.inf
        for bits in itertools.product([0, 1], repeat=6):
            lab = np.array(bits)
            if 0 < lab.sum() < 6:
                best = min(best, lloyd_sse(X, lab, 2))
        res = kmeans_fit(X, 2, n_starts=5)
        assert lloyd_sse(X, res.assignment, 2) == pytest.approx(best)
        assert res.tau == pytest.approx(np.sqrt(best / 6))
        assert not res.outlier_flag.any()


class TestTrimmedKMeans:
    def test_alpha_zero_is_kmeans(self, rng):
        X = rng.normal(size=(100, 2))
        a = tkmeans_iterate(X, X[:3], 0.0, record_history=True)
        b = kmeans_iterate(X, X[:3], record_history=True)
        for ca, cb in zip(a.history, b.history):
            np.testing.assert_array_equal(ca, cb)

    def test_planted_outliers_trimmed(self):
        X, _ = two_blobs(6, n=190)
        out = np.array([[100.0, 100 + i] for i in range(10)])
        X = np.vstack([X, out])
        res = tkmeans_fit(X, 2, alpha=0.05, seed=1)
        np.testing.assert_array_equal(np.flatnonzero(res.outlier_flag), np.arange(190, 200))

    def test_trim_count_each_iteration(self, rng):
        X = rng.normal(size=(97, 2))
        alpha = 0.13
        res = tkmeans_iterate(X, X[:2], alpha, record_history=True)
        for C in res.history:
            d, _ = distances(X, C)
            thresh = np.sort(d)[97 - 13]
            assert np.sum(d >= thresh) >= 13
        assert res.outlier_flag.sum() == 13

    @pytest.mark.parametrize("alpha", [-0.1, 1.0, 0.99])
    def test_infeasible(self, rng, alpha):
        with pytest.raises(ValueError):
            tkmeans_fit(rng.normal(size=(20, 2)), 2, alpha)

    def test_subset_mean_init(self, rng):
        X = rng.normal(size=(30, 4))
        C = subset_mean_init(X, 3, np.random.default_rng(0))
        assert C.shape == (3, 4)
        res = tkmeans_fit(X, 3, 0.1, init="subset_means", n_starts=3)
        assert res.method == "tkmeans"


def test_drop_empty_clusters():
    res = ClusteringResult(np.array([[0.0], [1.0], [2.0]]), np.array([0, 0, 2]), np.zeros(3), 0.0,
                           np.zeros(3, bool), 1, True)
    with pytest.warns(RuntimeWarning):
        out = drop_empty_clusters(res)
    assert out.K == 2
    np.testing.assert_array_equal(out.assignment, [0, 0, 1])


def test_to_dict_and_labels():
    res = ClusteringResult(np.array([[0.0], [1.0]]), np.array([0, 1, 1]), np.array([0.0, 0.5, 9.0]),
                           1.0, np.array([False, False, True]), 3, True)
    doc = res.to_dict()
    assert doc["assignment"] == [0, 1, 1] and doc["outlier_flag"] == [False, False, True]
    np.testing.assert_array_equal(res.labels_with_outliers(), [0, 1, 2])
