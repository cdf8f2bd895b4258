"""Ground truth, recall metrics, budget sweeps and the random-partition control.

The brute-force oracle computes exact Euclidean top-k (ties by id) with the
same arithmetic the index's re-ranking uses, so full-budget searches must
reproduce it id-for-id. Sweeps emit one CSV row per budget; metadata rides
along as '# key=value' comment lines for downstream plotting tools.
"""

from __future__ import annotations

import csv
import io
import json
import time
from dataclasses import dataclass, field

import numpy as np

from .core import VectorSet, euclidean_rows
from .index import Index
from .query import QueryBudget, QueryResult, search_many


@dataclass
class GroundTruth:
    ids: np.ndarray     # (n_queries, k)
    dists: np.ndarray   # (n_queries, k)

    @property
    def k(self) -> int:
        return self.ids.shape[1]


def brute_force_knn(X: VectorSet, Q: np.ndarray, k: int) -> GroundTruth:
    """Exact Euclidean top-k per query; distance ties resolve to lower ids."""
    if k > X.n:
        raise ValueError(f"k={k} exceeds dataset size {X.n}")
    data = X.as_f64()
    Q = np.atleast_2d(np.asarray(Q, dtype=np.float64))
    ids = np.empty((Q.shape[0], k), dtype=np.int64)
    dists = np.empty((Q.shape[0], k))
    all_ids = np.arange(X.n)
    for qi, q in enumerate(Q):
        d = euclidean_rows(data, q)
        order = np.lexsort((all_ids, d))[:k]
        ids[qi] = order
        dists[qi] = d[order]
    return GroundTruth(ids=ids, dists=dists)


# ---------------------------------------------------------------------------
# Recall


def _result_ids(res) -> np.ndarray:
    return res.ids if isinstance(res, QueryResult) else np.asarray(res)


def recall_at_1(results: list, gt: GroundTruth) -> float:
    """Fraction of queries whose first returned id is the true nearest."""
    hits = 0
    for res, true_ids in zip(results, gt.ids):
        ids = _result_ids(res)
        hits += int(ids.size > 0 and ids[0] == true_ids[0])
    return hits / len(results)


def recall_10_at_10(results: list, gt: GroundTruth) -> float:
    """Mean overlap of the returned and true top-10 sets."""
    depth = min(10, gt.k)
    total = 0.0
    for res, true_ids in zip(results, gt.ids):
        ids = _result_ids(res)[:depth]
        total += len(set(ids.tolist()) & set(true_ids[:depth].tolist())) / depth
    return total / len(results)


# ---------------------------------------------------------------------------
# Budget sweeps


@dataclass
class EvalRow:
    budget: QueryBudget
    recall_1: float
    recall_10: float
    mean_candidates: float
    mean_bins: float
    mean_buckets: float
    wall_time_s: float
    n_queries: int


@dataclass
class EvalReport:
    rows: list[EvalRow] = field(default_factory=list)
    metadata: dict = field(default_factory=dict)


EVAL_CSV_HEADER = ["label", "bucket_mode", "topk_k", "probe_ratio", "max_candidates",
                   "recall_at_1", "recall_10_at_10", "mean_candidates",
                   "mean_bins_probed", "mean_buckets_probed", "wall_time_s",
                   "n_queries"]


def bench_sweep(X: VectorSet, Q: np.ndarray, index: Index,
                budgets: list[QueryBudget], label: str = "grlc",
                deterministic: bool = False,
                gt: GroundTruth | None = None) -> EvalReport:
    """One report row per budget: recalls against the exact top-10 plus
    probe accounting. Wall time is zeroed under the deterministic flag so
    identical runs emit identical bytes."""
    Q = np.atleast_2d(np.asarray(Q, dtype=np.float64))
    if gt is None:
        gt = brute_force_knn(X, Q, min(10, X.n))
    report = EvalReport(metadata={
        "label": label,
        "seed": index.hp.seed,
        "dataset_n": index.n,
        "dataset_d": index.d,
        "dataset_checksum": index.data_checksum,
        "hp": json.dumps(index.hp.to_dict(), sort_keys=True),
    })
    for budget in budgets:
        t0 = time.perf_counter()
        results = search_many(Q, index, 10, budget)
        elapsed = 0.0 if deterministic else time.perf_counter() - t0
        report.rows.append(EvalRow(
            budget=budget,
            recall_1=recall_at_1(results, gt),
            recall_10=recall_10_at_10(results, gt),
            mean_candidates=float(np.mean([r.candidates_examined for r in results])),
            mean_bins=float(np.mean([r.bins_probed for r in results])),
            mean_buckets=float(np.mean([r.buckets_probed for r in results])),
            wall_time_s=elapsed,
            n_queries=Q.shape[0],
        ))
    return report


def write_eval_csv(report: EvalReport, path_or_file) -> None:
    """Comment-prefixed metadata, a header row, then one row per budget."""
    own = isinstance(path_or_file, (str, bytes))
    f = open(path_or_file, "w", newline="") if own else path_or_file
    try:
        for key, val in report.metadata.items():
            f.write(f"# {key}={val}\n")
        wr = csv.writer(f)
        wr.writerow(EVAL_CSV_HEADER)
        label = report.metadata.get("label", "grlc")
        for row in report.rows:
            b = row.budget
            wr.writerow([label, b.bucket_mode,
                         b.topk_k if b.bucket_mode == "topk" else "",
                         repr(b.probe_ratio),
                         b.max_candidates if b.max_candidates is not None else "",
                         repr(row.recall_1), repr(row.recall_10),
                         repr(row.mean_candidates), repr(row.mean_bins),
                         repr(row.mean_buckets), repr(row.wall_time_s),
                         row.n_queries])
    finally:
        if own:
            f.close()


def eval_csv_string(report: EvalReport) -> str:
    buf = io.StringIO()
    write_eval_csv(report, buf)
    return buf.getvalue()


# ---------------------------------------------------------------------------
# Classification


def _majority(labels: np.ndarray) -> int:
    return int(np.argmax(np.bincount(labels.astype(np.int64))))


def knn_classify_accuracy(X: VectorSet, labels: np.ndarray, Q: np.ndarray,
                          q_labels: np.ndarray, k: int = 10) -> float:
    """Exact k-NN majority-vote baseline (ties toward the smaller label)."""
    gt = brute_force_knn(X, Q, k)
    labels = np.asarray(labels)
    correct = sum(int(_majority(labels[row]) == int(t))
                  for row, t in zip(gt.ids, np.asarray(q_labels)))
    return correct / len(q_labels)


VARIANT_BUDGETS = {
    1: dict(bucket_mode="argmin"),
    2: dict(bucket_mode="threshold"),
    3: dict(bucket_mode="topk"),
}


def variant_budget(variant: int, probe_ratio: float = 0.3, topk_k: int = 3) -> QueryBudget:
    """Bucket-selection variants: 1 nearest Gaussian, 2 within tau, 3 top-k."""
    if variant not in VARIANT_BUDGETS:
        raise ValueError(f"unknown variant {variant}; expected 1, 2 or 3")
    kwargs = dict(VARIANT_BUDGETS[variant])
    if variant == 3:
        kwargs["topk_k"] = topk_k
    return QueryBudget(probe_ratio=probe_ratio, **kwargs)


def classification_eval(X: VectorSet, labels: np.ndarray, Q: np.ndarray,
                        q_labels: np.ndarray, index: Index,
                        variants: tuple[int, ...] = (1, 2, 3),
                        probe_ratio: float = 0.3, topk_k: int = 3,
                        knn_k: int = 10) -> dict:
    """Majority-vote accuracy per bucket-selection variant plus the exact
    k-NN baseline, evaluated on the same queries."""
    from .query import classify

    labels = np.asarray(labels)
    q_labels = np.asarray(q_labels)
    out: dict = {}
    for v in variants:
        budget = variant_budget(v, probe_ratio=probe_ratio, topk_k=topk_k)
        preds = np.array([classify(q, index, labels, budget) for q in np.atleast_2d(Q)])
        out[f"ours_{v}"] = float(np.mean(preds == q_labels))
    out["knn_exact"] = knn_classify_accuracy(X, labels, Q, q_labels, k=knn_k)
    return out


# ---------------------------------------------------------------------------
# Random-partition control


@dataclass
class RandomPartition:
    """Same bucket count as a learned index, membership assigned uniformly."""

    buckets: list[np.ndarray]
    centroids: np.ndarray


def random_partition(X: VectorSet, K: int, seed: int) -> RandomPartition:
    rng = np.random.default_rng(seed)
    assign = rng.integers(0, K, size=X.n)
    data = X.as_f64()
    buckets = []
    centroids = np.empty((K, X.d))
    for j in range(K):
        members = np.flatnonzero(assign == j)
        buckets.append(members)
        centroids[j] = data[members].mean(axis=0) if members.size else data.mean(axis=0)
    return RandomPartition(buckets=buckets, centroids=centroids)


def control_search(q: np.ndarray, ctrl: RandomPartition, X: VectorSet, k: int,
                   target_candidates: int) -> QueryResult:
    """Scan buckets in centroid-distance order until the candidate budget is
    met, then return the exact top-k among scanned points."""
    q = np.asarray(q, dtype=np.float64)
    data = X.as_f64()
    order = np.lexsort((np.arange(len(ctrl.buckets)),
                        euclidean_rows(ctrl.centroids, q)))
    gathered: list[np.ndarray] = []
    count = 0
    buckets_probed = 0
    for j in order:
        if count >= target_candidates:
            break
        members = ctrl.buckets[j]
        if members.size == 0:
            continue
        gathered.append(members)
        count += members.size
        buckets_probed += 1
    cand = np.concatenate(gathered) if gathered else np.empty(0, dtype=np.int64)
    if cand.size == 0:
        return QueryResult(np.empty(0, dtype=np.int64), np.empty(0), 0, 0, 0)
    dists = euclidean_rows(data[cand], q)
    top = np.lexsort((cand, dists))[:k]
    return QueryResult(ids=cand[top], distances=dists[top],
                       candidates_examined=int(cand.size), bins_probed=0,
                       buckets_probed=buckets_probed)
