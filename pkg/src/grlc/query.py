"""Query answering: bucket selection, ranked-bin probing, exact re-ranking.

A query picks buckets by Mahalanobis distance (single best, all within tau,
or the k nearest), ranks each bucket's bins by the distance from the query's
spherical coordinates to the bin box, probes the closest fraction of bins,
and re-ranks every gathered candidate by its exact Euclidean distance in the
original space. Classification takes a majority vote over the gathered
candidate set. The box-to-point distance has a closed form (coordinatewise
clamping); a projected-gradient solver is kept as a validation oracle.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

import numpy as np

from .core import euclidean_rows, mahalanobis_batch
from .index import Bucket, Index, cart2sph

BUCKET_MODES = ("argmin", "threshold", "topk")


@dataclass
class QueryBudget:
    """How much of the index one query may touch."""

    bucket_mode: str = "argmin"
    topk_k: int = 1                      # only read in topk mode
    probe_ratio: float = 0.3
    max_candidates: int | None = None
    tau: float | None = None             # threshold-mode override; None -> index tau

    def validate(self) -> None:
        if self.bucket_mode not in BUCKET_MODES:
            raise ValueError(f"unknown bucket_mode {self.bucket_mode!r}")
        if not (0 < self.probe_ratio <= 1):
            raise ValueError("probe_ratio must be in (0, 1]")
        if self.bucket_mode == "topk" and self.topk_k < 1:
            raise ValueError("topk_k must be >= 1")


_BUDGET_RE = re.compile(r"^(argmin|threshold|topk(\d+)):([0-9.eE+-]+)(?:@(\d+))?$")


def parse_budget(token: str) -> QueryBudget:
    """Parse 'mode:probe_ratio[@max_candidates]', e.g. argmin:0.3, topk4:0.5@800."""
    m = _BUDGET_RE.match(token.strip())
    if not m:
        raise ValueError(f"cannot parse budget {token!r}")
    mode = m.group(1)
    topk_k = 1
    if mode.startswith("topk"):
        topk_k = int(m.group(2))
        mode = "topk"
    budget = QueryBudget(bucket_mode=mode, topk_k=topk_k,
                         probe_ratio=float(m.group(3)),
                         max_candidates=int(m.group(4)) if m.group(4) else None)
    budget.validate()
    return budget


def format_budget(budget: QueryBudget) -> str:
    mode = budget.bucket_mode + (str(budget.topk_k) if budget.bucket_mode == "topk" else "")
    cap = f"@{budget.max_candidates}" if budget.max_candidates is not None else ""
    return f"{mode}:{budget.probe_ratio:g}{cap}"


@dataclass
class QueryResult:
    ids: np.ndarray
    distances: np.ndarray
    candidates_examined: int
    bins_probed: int
    buckets_probed: int


# ---------------------------------------------------------------------------
# Bucket selection


def select_buckets(q: np.ndarray, index: Index, budget: QueryBudget) -> np.ndarray:
    """Ordered bucket positions; ties in distance break toward the lower id."""
    return select_buckets_geom(index.to_query_space(q), index, budget)


# ---------------------------------------------------------------------------
# Bin distances


def bin_distance(s: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> float:
    """Distance from a point to an axis-aligned box: clamp attains the min."""
    s = np.asarray(s, dtype=np.float64)
    clamped = np.clip(s, lo, hi)
    return float(np.linalg.norm(s - clamped))


def bin_distance_iterative(s: np.ndarray, lo: np.ndarray, hi: np.ndarray,
                           steps: int = 100) -> float:
    """Projected gradient descent on ||s - y||^2 over the box (oracle path)."""
    s = np.asarray(s, dtype=np.float64)
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    y = (lo + hi) / 2.0
    step = 0.4
    for _ in range(steps):
        y = np.clip(y - step * 2.0 * (y - s), lo, hi)
    return float(np.linalg.norm(s - y))


def _bin_boxes(bucket: Bucket) -> tuple[list[tuple], np.ndarray, np.ndarray]:
    """Per non-empty bin: coordinate plus box lo/hi arrays."""
    grid = bucket.grid
    coords = sorted(bucket.bins.keys())
    if not coords:
        return [], np.empty((0, 0)), np.empty((0, 0))
    arr = np.asarray(coords, dtype=np.int64)
    r = arr.shape[1]
    lo = np.empty((len(coords), r))
    hi = np.empty((len(coords), r))
    lo[:, 0] = grid.radial_edges[arr[:, 0]]
    hi[:, 0] = grid.radial_edges[arr[:, 0] + 1]
    for k in range(r - 1):
        a, b = grid.angular_ranges[k]
        width = (b - a) / grid.n_angular
        lo[:, k + 1] = a + arr[:, k + 1] * width
        hi[:, k + 1] = a + (arr[:, k + 1] + 1) * width
    return coords, lo, hi


def ranked_bins(q: np.ndarray, bucket: Bucket,
                index: Index | None = None) -> list[tuple[tuple, float]]:
    """Bins sorted by ascending box distance, ties by coordinate order.

    q must already be in the index's geometry space when index is None.
    Degenerate buckets have no ranking (callers fall back to a linear scan).
    """
    if bucket.degenerate:
        return []
    q_geom = index.to_query_space(q) if index is not None else np.asarray(q, dtype=np.float64)
    s = cart2sph(bucket.basis.T @ (q_geom - bucket.centroid))
    coords, lo, hi = _bin_boxes(bucket)
    if not coords:
        return []
    clamped = np.clip(s, lo, hi)
    dists = np.sqrt(np.einsum("ij,ij->i", s - clamped, s - clamped))
    ranked = sorted(zip(coords, dists.tolist()), key=lambda t: (t[1], t[0]))
    return ranked


# ---------------------------------------------------------------------------
# Search


def _gather_candidates(q_geom: np.ndarray, index: Index, budget: QueryBudget,
                       positions: np.ndarray | None = None) -> tuple[np.ndarray, int, int]:
    """Unique candidate ids across probed bins, plus probe counters."""
    if positions is None:
        positions = select_buckets_geom(q_geom, index, budget)
    seen = np.zeros(index.n, dtype=bool)
    gathered: list[np.ndarray] = []
    count = 0
    bins_probed = 0
    buckets_probed = 0
    cap = budget.max_candidates
    full_budget = budget.probe_ratio >= 1.0 and cap is None

    def add(ids: np.ndarray) -> None:
        nonlocal count
        fresh = ids[~seen[ids]]
        if fresh.size:
            seen[fresh] = True
            gathered.append(fresh)
            count += fresh.size

    for pos in positions:
        if cap is not None and count >= cap:
            break
        bucket = index.buckets[pos]
        buckets_probed += 1
        if bucket.degenerate:
            add(bucket.member_ids)
            continue
        if full_budget:
            # every bin gets probed, so the ranking cannot change the outcome
            add(bucket.member_ids)
            bins_probed += len(bucket.bins)
            continue
        ranked = ranked_bins(q_geom, bucket)
        n_probe = math.ceil(budget.probe_ratio * len(ranked))
        for coord, _ in ranked[:n_probe]:
            add(bucket.bins[coord])
            bins_probed += 1
            if cap is not None and count >= cap:
                break
    ids = np.concatenate(gathered) if gathered else np.empty(0, dtype=np.int64)
    return ids, bins_probed, buckets_probed


def select_buckets_geom(q_geom: np.ndarray, index: Index,
                        budget: QueryBudget) -> np.ndarray:
    """select_buckets for a query already mapped to geometry space."""
    budget.validate()
    delta = mahalanobis_batch(q_geom[None, :], index.gaussians)[0]
    order = np.lexsort((np.arange(index.K), delta))
    if budget.bucket_mode == "argmin":
        return order[:1]
    if budget.bucket_mode == "topk":
        return order[:min(budget.topk_k, index.K)]
    tau = index.hp.tau if budget.tau is None else budget.tau
    within = order[delta[order] <= tau]
    return within if within.size else order[:1]


def search(q: np.ndarray, index: Index, k: int, budget: QueryBudget) -> QueryResult:
    """Approximate k nearest neighbors with exact Euclidean re-ranking."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if index.K == 0:
        raise ValueError("empty index")
    data = index.require_data()
    q = np.asarray(q, dtype=np.float64)
    q_geom = index.to_query_space(q)
    cand, bins_probed, buckets_probed = _gather_candidates(q_geom, index, budget)
    if cand.size == 0:
        return QueryResult(np.empty(0, dtype=np.int64), np.empty(0), 0,
                           bins_probed, buckets_probed)
    dists = euclidean_rows(data.as_f64()[cand], q)
    order = np.lexsort((cand, dists))[:k]
    return QueryResult(ids=cand[order], distances=dists[order],
                       candidates_examined=int(cand.size),
                       bins_probed=bins_probed, buckets_probed=buckets_probed)


def search_many(Q: np.ndarray, index: Index, k: int,
                budget: QueryBudget) -> list[QueryResult]:
    """search() for a query block; bucket selection is batched, results are
    identical to per-query calls."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if index.K == 0:
        raise ValueError("empty index")
    budget.validate()
    data = index.require_data()
    data64 = data.as_f64()
    Q = np.atleast_2d(np.asarray(Q, dtype=np.float64))
    Q_geom = index.norm.apply(Q)
    delta = mahalanobis_batch(Q_geom, index.gaussians)
    col = np.arange(index.K)
    results = []
    for qi in range(Q.shape[0]):
        order = np.lexsort((col, delta[qi]))
        if budget.bucket_mode == "argmin":
            positions = order[:1]
        elif budget.bucket_mode == "topk":
            positions = order[:min(budget.topk_k, index.K)]
        else:
            tau = index.hp.tau if budget.tau is None else budget.tau
            within = order[delta[qi][order] <= tau]
            positions = within if within.size else order[:1]
        cand, bins_probed, buckets_probed = _gather_candidates(
            Q_geom[qi], index, budget, positions=positions)
        if cand.size == 0:
            results.append(QueryResult(np.empty(0, dtype=np.int64), np.empty(0), 0,
                                       bins_probed, buckets_probed))
            continue
        dists = euclidean_rows(data64[cand], Q[qi])
        top = np.lexsort((cand, dists))[:k]
        results.append(QueryResult(ids=cand[top], distances=dists[top],
                                   candidates_examined=int(cand.size),
                                   bins_probed=bins_probed,
                                   buckets_probed=buckets_probed))
    return results


def classify(q: np.ndarray, index: Index, labels: np.ndarray,
             budget: QueryBudget) -> int:
    """Majority label over the gathered candidate set (pre-top-k).

    Ties break toward the smallest label id; an empty candidate set falls
    back to scanning the nearest bucket (then the whole id space).
    """
    labels = np.asarray(labels)
    if labels.shape[0] != index.n:
        raise ValueError("labels must cover every point id")
    q = np.asarray(q, dtype=np.float64)
    q_geom = index.to_query_space(q)
    cand, _, _ = _gather_candidates(q_geom, index, budget)
    if cand.size == 0:
        best = select_buckets_geom(q_geom, index,
                                   QueryBudget(bucket_mode="argmin", probe_ratio=1.0))
        cand = index.buckets[best[0]].member_ids
    if cand.size == 0:
        cand = np.arange(index.n)
    counts = np.bincount(labels[cand].astype(np.int64))
    return int(np.argmax(counts))
