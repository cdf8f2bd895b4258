"""Ground truth, recall metrics, sweeps, classification eval, random control."""

import numpy as np
import pytest

from grlc.core import VectorSet
from grlc.evaluation import (GroundTruth, bench_sweep, brute_force_knn,
                             classification_eval, control_search, eval_csv_string,
                             knn_classify_accuracy, random_partition, recall_10_at_10,
                             recall_at_1, variant_budget, write_eval_csv)
from grlc.query import QueryBudget, parse_budget


class TestBruteForce:
    def test_self_query_rank_one(self):
        rng = np.random.default_rng(0)
        X = VectorSet(rng.normal(size=(50, 4)).astype(np.float32))
        gt = brute_force_knn(X, X.as_f64()[13][None, :], 5)
        assert gt.ids[0, 0] == 13
        assert gt.dists[0, 0] == 0.0

    def test_hand_instance(self):
        X = VectorSet(np.array([[0.0, 0], [1, 0], [2, 0], [3, 0], [10, 0]],
                               dtype=np.float32))
        gt = brute_force_knn(X, np.array([[0.9, 0.0]]), 5)
        assert gt.ids[0].tolist() == [1, 0, 2, 3, 4]

    def test_distance_ties_break_to_lower_id(self):
        X = VectorSet(np.array([[1.0, 0], [1.0, 0], [-1.0, 0]], dtype=np.float32))
        gt = brute_force_knn(X, np.array([[0.0, 0.0]]), 3)
        assert gt.ids[0].tolist() == [0, 1, 2]

    def test_pure_no_seed_dependence(self):
        rng = np.random.default_rng(1)
        X = VectorSet(rng.normal(size=(40, 3)).astype(np.float32))
        Q = rng.normal(size=(5, 3))
        a = brute_force_knn(X, Q, 10)
        b = brute_force_knn(X, Q, 10)
        assert np.array_equal(a.ids, b.ids) and np.array_equal(a.dists, b.dists)

    def test_k_bound(self):
        X = VectorSet(np.zeros((3, 2), dtype=np.float32))
        with pytest.raises(ValueError):
            brute_force_knn(X, np.zeros((1, 2)), 4)


class TestRecallMetrics:
    def gt(self, ids):
        ids = np.asarray(ids)
        return GroundTruth(ids=ids, dists=np.zeros(ids.shape))

    def test_recall1_all_correct(self):
        gt = self.gt([[1, 2], [3, 4]])
        assert recall_at_1([np.array([1, 9]), np.array([3, 9])], gt) == 1.0

    def test_recall1_none(self):
        gt = self.gt([[1, 2], [3, 4]])
        assert recall_at_1([np.array([2]), np.array([4])], gt) == 0.0

    def test_recall1_half(self):
        gt = self.gt([[1], [3]])
        assert recall_at_1([np.array([1]), np.array([9])], gt) == 0.5

    def test_recall10_extremes_and_overlap(self):
        ids = np.arange(10)[None, :]
        gt = self.gt(ids)
        assert recall_10_at_10([np.arange(10)], gt) == 1.0
        assert recall_10_at_10([np.arange(10, 20)], gt) == 0.0
        seven = np.concatenate([np.arange(7), np.arange(20, 23)])
        assert recall_10_at_10([seven], gt) == pytest.approx(0.7)

    def test_empty_result_counts_zero(self):
        gt = self.gt([[1, 2]])
        assert recall_at_1([np.array([], dtype=int)], gt) == 0.0


class TestBenchSweep:
    def test_single_row_well_formed(self, small_index):
        index, _ = small_index
        rng = np.random.default_rng(2)
        Q = rng.normal(size=(10, index.d))
        report = bench_sweep(index.data, Q, index, [QueryBudget("argmin", probe_ratio=0.5)])
        assert len(report.rows) == 1
        row = report.rows[0]
        assert 0.0 <= row.recall_1 <= 1.0 and 0.0 <= row.recall_10 <= 1.0
        assert row.n_queries == 10 and row.mean_candidates > 0

    def test_full_budget_recall_one(self, small_index):
        index, _ = small_index
        rng = np.random.default_rng(3)
        Q = rng.normal(size=(15, index.d))
        budget = QueryBudget("topk", topk_k=index.K, probe_ratio=1.0)
        report = bench_sweep(index.data, Q, index, [budget])
        assert report.rows[0].recall_1 == 1.0
        assert report.rows[0].recall_10 == 1.0

    def test_candidates_increase_with_ratio(self, small_index):
        index, _ = small_index
        rng = np.random.default_rng(4)
        Q = rng.normal(size=(15, index.d))
        budgets = [QueryBudget("topk", topk_k=2, probe_ratio=r)
                   for r in (0.1, 0.3, 0.5, 1.0)]
        report = bench_sweep(index.data, Q, index, budgets)
        cands = [row.mean_candidates for row in report.rows]
        assert all(b >= a for a, b in zip(cands, cands[1:]))
        assert cands[-1] > cands[0]

    def test_csv_round_trip(self, tmp_path, small_index):
        from grlc.plotting import read_eval_csv

        index, _ = small_index
        rng = np.random.default_rng(5)
        Q = rng.normal(size=(8, index.d))
        budgets = [parse_budget("argmin:0.3"), parse_budget("topk2:0.5")]
        report = bench_sweep(index.data, Q, index, budgets, label="unit",
                             deterministic=True)
        path = tmp_path / "report.csv"
        write_eval_csv(report, str(path))
        metadata, rows = read_eval_csv(str(path))
        assert metadata["label"] == "unit"
        assert len(rows) == 2
        assert rows[0]["recall_10_at_10"] == report.rows[0].recall_10
        assert rows[1]["bucket_mode"] == "topk"
        assert all(r["wall_time_s"] == 0.0 for r in rows)

    def test_deterministic_csv_bytes(self, small_index):
        index, _ = small_index
        rng = np.random.default_rng(6)
        Q = rng.normal(size=(8, index.d))
        budgets = [parse_budget("argmin:0.3")]
        a = eval_csv_string(bench_sweep(index.data, Q, index, budgets, deterministic=True))
        b = eval_csv_string(bench_sweep(index.data, Q, index, budgets, deterministic=True))
        assert a == b


def make_labeled_blobs(n=400, d=6, classes=4, seed=0):
    rng = np.random.default_rng(seed)
    means = rng.uniform(-1, 1, size=(classes, d)) * 8
    labels = np.repeat(np.arange(classes), n // classes)
    pts = means[labels] + rng.normal(scale=0.1, size=(len(labels), d))
    return VectorSet(pts.astype(np.float32)), labels


@pytest.fixture(scope="module")
def separable():
    from grlc.training import fit
    from grlc.index import build_index

    from conftest import quick_hp

    X, labels = make_labeled_blobs()
    hp = quick_hp(K_init=4, epochs_max=6, warmup_epochs=3)
    state = fit(X, hp)
    index = build_index(X, state.gaussians, hp, norm=state.norm)
    rng = np.random.default_rng(1)
    pick = rng.choice(X.n, size=60, replace=False)
    Q = X.as_f64()[pick] + rng.normal(scale=0.02, size=(60, X.d))
    return X, labels, index, Q, labels[pick]


class TestClassificationEval:
    def test_separable_blobs_perfect(self, separable):
        X, labels, index, Q, q_labels = separable
        out = classification_eval(X, labels, Q, q_labels, index)
        assert out["ours_1"] == 1.0
        assert out["ours_2"] == 1.0
        assert out["ours_3"] == 1.0
        assert out["knn_exact"] == 1.0

    def test_variant_budget_semantics(self):
        assert variant_budget(1).bucket_mode == "argmin"
        assert variant_budget(2).bucket_mode == "threshold"
        b3 = variant_budget(3, topk_k=5)
        assert b3.bucket_mode == "topk" and b3.topk_k == 5
        with pytest.raises(ValueError):
            variant_budget(4)

    def test_knn_baseline_majority(self):
        X = VectorSet(np.array([[0.0, 0], [0.1, 0], [0.2, 0], [5.0, 0]],
                               dtype=np.float32))
        labels = np.array([1, 1, 0, 0])
        acc = knn_classify_accuracy(X, labels, np.array([[0.05, 0.0]]),
                                    np.array([1]), k=3)
        assert acc == 1.0


class TestRandomControl:
    def test_partition_shape(self):
        rng = np.random.default_rng(7)
        X = VectorSet(rng.normal(size=(100, 4)).astype(np.float32))
        ctrl = random_partition(X, 8, seed=0)
        assert len(ctrl.buckets) == 8
        union = np.sort(np.concatenate(ctrl.buckets))
        assert np.array_equal(union, np.arange(100))

    def test_budget_respected_and_exactness_at_full(self):
        rng = np.random.default_rng(8)
        X = VectorSet(rng.normal(size=(200, 4)).astype(np.float32))
        ctrl = random_partition(X, 10, seed=1)
        q = rng.normal(size=4)
        res = control_search(q, ctrl, X, 10, target_candidates=50)
        assert res.candidates_examined >= 50
        assert res.candidates_examined <= 50 + max(len(b) for b in ctrl.buckets)
        full = control_search(q, ctrl, X, 10, target_candidates=200)
        gt = brute_force_knn(X, q[None, :], 10)
        assert np.array_equal(full.ids, gt.ids[0])

    def test_deterministic_given_seed(self):
        rng = np.random.default_rng(9)
        X = VectorSet(rng.normal(size=(50, 3)).astype(np.float32))
        a = random_partition(X, 5, seed=3)
        b = random_partition(X, 5, seed=3)
        for x, y in zip(a.buckets, b.buckets):
            assert np.array_equal(x, y)
