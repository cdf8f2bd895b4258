"""Structural refinement between epochs: split, clone and prune.

Over-full Gaussians are split in two (density clustering picks the children's
centers, k-means as fallback, covariances shrunk). Gaussians with a crowded
boundary shell spawn a clone at the densest shell point. Gaussians whose
bucket degenerated to a point (or emptied) are pruned and their points fall
to the nearest survivor. Each mutation is logged as a RefinementEvent so the
active-count accounting K = K_init + splits + clones - pruned stays auditable.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass

import numpy as np

from .core import GaussianSet, HyperParams, VectorSet, mahalanobis_batch
from .init import kmeans_pp_init

DBSCAN_MAX_POINTS = 2048   # split decisions run on at most this many bucket points
DBSCAN_EPS_SAMPLE = 64


@dataclass
class RefinementEvent:
    """Audit record for one structural mutation."""

    kind: str             # "split" | "clone" | "prune"
    target: int
    created: tuple
    epoch: int
    cardinality: int
    ratio: float = 0.0

    def __post_init__(self):
        expected = {"split": 2, "clone": 1, "prune": 0}[self.kind]
        if len(self.created) != expected:
            raise ValueError(f"{self.kind} must create {expected} Gaussians")

    def net_change(self) -> int:
        return {"split": 1, "clone": 1, "prune": -1}[self.kind]


# ---------------------------------------------------------------------------
# Bucket membership


def current_buckets(X: VectorSet, G: GaussianSet, tau: float,
                    delta: np.ndarray | None = None) -> dict[int, np.ndarray]:
    """Member ids per active Gaussian: all within-tau points, plus each
    uncovered point assigned to its nearest Gaussian. Buckets overlap; their
    union is always the full id set."""
    if delta is None:
        delta = mahalanobis_batch(X, G)
    active = G.active_ids()
    cover = delta[:, active] <= tau
    uncovered = ~cover.any(axis=1)
    argmin_local = np.argmin(delta[:, active], axis=1)
    buckets: dict[int, np.ndarray] = {}
    for col, gid in enumerate(active):
        mask = cover[:, col] | (uncovered & (argmin_local == col))
        buckets[int(gid)] = np.flatnonzero(mask)
    return buckets


# ---------------------------------------------------------------------------
# DBSCAN (brute force neighborhoods, on-demand)


def dbscan(points: np.ndarray, eps: float, min_pts: int) -> np.ndarray:
    """Labels: -1 noise, 0..C-1 clusters. Plain BFS region growing."""
    n = points.shape[0]
    sq = np.einsum("ij,ij->i", points, points)
    eps2 = eps * eps

    def region(i: int) -> np.ndarray:
        d2 = sq + sq[i] - 2.0 * (points @ points[i])
        return np.flatnonzero(d2 <= eps2)

    UNSEEN = -2
    labels = np.full(n, UNSEEN, dtype=int)
    cluster = 0
    for i in range(n):
        if labels[i] != UNSEEN:
            continue
        seed = region(i)
        if seed.size < min_pts:
            labels[i] = -1
            continue
        labels[i] = cluster
        queue = deque(int(q) for q in seed)
        while queue:
            q = queue.popleft()
            if labels[q] == -1:
                labels[q] = cluster
            if labels[q] != UNSEEN:
                continue
            labels[q] = cluster
            reach = region(q)
            if reach.size >= min_pts:
                queue.extend(int(r) for r in reach)
        cluster += 1
    return labels


def _dbscan_params(points: np.ndarray, rng: np.random.Generator) -> tuple[float, int]:
    """Heuristic eps/minPts: eps is the mean distance of sampled points to
    their minPts-th neighbor."""
    n = points.shape[0]
    min_pts = max(5, math.ceil(n / 100))
    m = min(DBSCAN_EPS_SAMPLE, n)
    sample = rng.choice(n, size=m, replace=False)
    kth = min(min_pts, n - 1)
    dists = np.sqrt(np.maximum(
        np.einsum("ij,ij->i", points[sample], points[sample])[:, None]
        + np.einsum("ij,ij->i", points, points)[None, :]
        - 2.0 * points[sample] @ points.T, 0.0))
    kth_dist = np.partition(dists, kth, axis=1)[:, kth]
    return float(kth_dist.mean()), min_pts


# ---------------------------------------------------------------------------
# Split


def split_gaussian(G: GaussianSet, gid: int, bucket_points: np.ndarray,
                   hp: HyperParams, rng: np.random.Generator):
    """Two children replacing an over-full Gaussian, or None to signal no-op.

    DBSCAN looks for exactly two dense clusters; otherwise 2-means supplies
    the child centers. Children share the parent's factor scaled by
    alpha_split (log-diagonal shifted by ln(alpha_split)).
    """
    pts = np.asarray(bucket_points, dtype=np.float64)
    if pts.shape[0] < 4:
        return None
    if pts.shape[0] > DBSCAN_MAX_POINTS:
        pick = np.sort(rng.choice(pts.shape[0], size=DBSCAN_MAX_POINTS, replace=False))
        pts = pts[pick]

    means = None
    eps, min_pts = _dbscan_params(pts, rng)
    if eps > 0:
        labels = dbscan(pts, eps, min_pts)
        ids = np.unique(labels[labels >= 0])
        if ids.size == 2:
            c0, c1 = (pts[labels == i] for i in ids)
            if c0.shape[0] >= 2 and c1.shape[0] >= 2:
                means = (c0.mean(axis=0), c1.mean(axis=0))
    if means is None:
        centers = kmeans_pp_init(VectorSet(pts), 2, int(rng.integers(2 ** 31)),
                                 max_points=pts.shape[0])
        means = (centers[0], centers[1])
    if np.allclose(means[0], means[1]):
        return None

    child_log_diag = G.log_diag[gid] + np.log(hp.alpha_split)
    child_lower = G.lower[gid] * hp.alpha_split
    return [(means[0], child_log_diag.copy(), child_lower.copy()),
            (means[1], child_log_diag.copy(), child_lower.copy())]


def split_pass(X: VectorSet, G: GaussianSet, hp: HyperParams,
               rng: np.random.Generator, epoch: int) -> list[RefinementEvent]:
    """Split every active Gaussian whose bucket exceeds gamma_split * n."""
    delta = mahalanobis_batch(X, G)
    buckets = current_buckets(X, G, hp.tau, delta=delta)
    threshold = hp.gamma_split * X.n
    events = []
    for gid, members in buckets.items():
        if members.size <= threshold:
            continue
        children = split_gaussian(G, gid, X.as_f64()[members], hp, rng)
        if children is None:
            continue
        new_ids = tuple(G.append(*child) for child in children)
        G.deactivate(gid)
        events.append(RefinementEvent(kind="split", target=gid, created=new_ids,
                                      epoch=epoch, cardinality=int(members.size)))
    return events


# ---------------------------------------------------------------------------
# Clone


def boundary_set(gid: int, X: VectorSet, G: GaussianSet, tau: float, e_clone: float,
                 shell_mode: str = "mult", delta: np.ndarray | None = None) -> np.ndarray:
    """Points in the open shell outside tau (bounded by e*tau or (1+e)*tau)
    whose nearest Gaussian is gid."""
    if delta is None:
        delta = mahalanobis_batch(X, G)
    outer = e_clone * tau if shell_mode == "mult" else (1.0 + e_clone) * tau
    col = delta[:, gid]
    in_shell = (col > tau) & (col < outer)
    nearest = np.argmin(delta, axis=1) == gid
    return np.flatnonzero(in_shell & nearest)


def local_density(p: np.ndarray, S: np.ndarray, k_density: int) -> float:
    """Inverse mean distance from p to its k nearest neighbors within S.

    p itself is excluded when it is a member of S; if S is too small the
    neighbor count drops to |S| - 1.
    """
    S = np.asarray(S, dtype=np.float64)
    d = np.sqrt(np.maximum(((S - np.asarray(p, dtype=np.float64)) ** 2).sum(axis=1), 0.0))
    zero = np.flatnonzero(d == 0.0)
    if zero.size:
        d = np.delete(d, zero[0])
    k = min(k_density, d.size)
    if k == 0:
        return float("inf")
    mean = float(np.partition(d, k - 1)[:k].mean())
    return 1.0 / max(mean, 1e-300)


def clone_gaussian(gid: int, X: VectorSet, G: GaussianSet, hp: HyperParams,
                   rng: np.random.Generator, delta: np.ndarray | None = None,
                   bucket_size: int | None = None):
    """A copy of Gaussian gid centered on the densest boundary point, or None.

    Fires only when the shell-to-interior ratio exceeds beta_clone and the
    bucket is large enough to matter. The factor is copied verbatim.
    """
    if delta is None:
        delta = mahalanobis_batch(X, G)
    shell = boundary_set(gid, X, G, hp.tau, hp.e_clone, hp.shell_mode, delta=delta)
    if shell.size == 0:
        return None
    inside = int((delta[:, gid] <= hp.tau).sum())
    ratio = float("inf") if inside == 0 else shell.size / inside
    if bucket_size is None:
        bucket_size = int(current_buckets(X, G, hp.tau, delta=delta)[gid].size)
    if ratio <= hp.beta_clone or bucket_size < hp.clone_min_frac * X.n:
        return None

    m = math.ceil(hp.rho_clone * shell.size)
    sampled = np.sort(rng.choice(shell, size=m, replace=False))
    pts = X.as_f64()[sampled]
    densities = np.array([local_density(pts[i], pts, hp.k_density)
                          for i in range(m)])
    best = sampled[int(np.argmax(densities))]   # first max -> lowest id
    return (X.as_f64()[best].copy(), G.log_diag[gid].copy(), G.lower[gid].copy(),
            ratio)


def clone_pass(X: VectorSet, G: GaussianSet, hp: HyperParams,
               rng: np.random.Generator, epoch: int) -> list[RefinementEvent]:
    delta = mahalanobis_batch(X, G)
    buckets = current_buckets(X, G, hp.tau, delta=delta)
    events = []
    for gid, members in buckets.items():
        out = clone_gaussian(gid, X, G, hp, rng, delta=delta,
                             bucket_size=int(members.size))
        if out is None:
            continue
        mu, log_diag, lower, ratio = out
        new_id = G.append(mu, log_diag, lower)
        events.append(RefinementEvent(kind="clone", target=gid, created=(new_id,),
                                      epoch=epoch, cardinality=int(members.size),
                                      ratio=ratio))
    return events


# ---------------------------------------------------------------------------
# Prune


def prune(X: VectorSet, G: GaussianSet, buckets: dict[int, np.ndarray],
          prune_min_card: int) -> tuple[list[int], dict[int, int]]:
    """Deactivate Gaussians with buckets below the cardinality floor.

    Returns (pruned ids, reassignments) where reassignments maps the points
    of pruned buckets to their nearest surviving Gaussian. Refuses to act if
    nothing would survive.
    """
    victims = [gid for gid, members in buckets.items()
               if members.size < prune_min_card]
    if not victims:
        return [], {}
    survivors = [gid for gid in buckets if gid not in set(victims)]
    if not survivors:
        import warnings

        warnings.warn("prune would remove every Gaussian; skipping")
        return [], {}
    orphan_ids = np.unique(np.concatenate([buckets[g] for g in victims]))
    for gid in victims:
        G.deactivate(gid)
    reassign: dict[int, int] = {}
    if orphan_ids.size:
        delta = mahalanobis_batch(X.as_f64()[orphan_ids], G)
        nearest = np.argmin(delta, axis=1)
        reassign = {int(p): int(g) for p, g in zip(orphan_ids, nearest)}
    return victims, reassign


def prune_pass(X: VectorSet, G: GaussianSet, hp: HyperParams,
               epoch: int) -> list[RefinementEvent]:
    buckets = current_buckets(X, G, hp.tau)
    cards = {gid: int(m.size) for gid, m in buckets.items()}
    victims, _ = prune(X, G, buckets, hp.prune_min_card)
    return [RefinementEvent(kind="prune", target=gid, created=(), epoch=epoch,
                            cardinality=cards[gid])
            for gid in victims]
