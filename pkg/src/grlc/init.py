"""Initial Gaussian placement: k-means++ seeding plus local-scale Cholesky factors.

Centers come from k-means++ with a short Lloyd polish on a uniform subsample.
Each factor starts as ln(mean distance to the center's nearest neighbors) on
the log-diagonal — so the materialized diagonal IS that mean distance — plus
a tiny random strictly-lower perturbation for anisotropic head room.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import GaussianSet, VectorSet

LLOYD_MAX_ITERS = 25
LLOYD_TOL = 1e-4
SUBSAMPLE_FACTOR = 100     # k-means++ sees at most max(100*K, FLOOR) points
SUBSAMPLE_FLOOR = 10_000   # small datasets are used in full


@dataclass
class InitReport:
    """Where the centers landed and the local scale each one saw."""

    chosen_centers: np.ndarray    # (K, d) coordinates after Lloyd polish
    mean_nn_dist: np.ndarray      # (K,) mean distance to the k_init_nn neighbors


def _pairwise_sq_dists(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    d2 = (np.einsum("ij,ij->i", A, A)[:, None]
          + np.einsum("ij,ij->i", B, B)[None, :]
          - 2.0 * (A @ B.T))
    return np.maximum(d2, 0.0)


def kmeans_pp_init(X: VectorSet, K: int, seed: int,
                   max_points: int | None = None) -> np.ndarray:
    """K centers: k-means++ seeding then Lloyd until movement < 1e-4 or 25 iters.

    Runs on a uniform subsample of min(n, 100*K) points unless max_points
    overrides the cap.
    """
    if K > X.n:
        raise ValueError(f"K={K} exceeds dataset size n={X.n}")
    if K < 1:
        raise ValueError("K must be >= 1")
    rng = np.random.default_rng(seed)
    data = X.as_f64()

    if max_points is None:
        max_points = max(SUBSAMPLE_FACTOR * K, SUBSAMPLE_FLOOR)
    m = min(X.n, max_points)
    if m < X.n:
        sub = np.sort(rng.choice(X.n, size=m, replace=False))
        data = data[sub]

    n = data.shape[0]
    centers = np.empty((K, data.shape[1]))
    first = int(rng.integers(0, n))
    centers[0] = data[first]
    d2 = _pairwise_sq_dists(data, centers[:1])[:, 0]
    for i in range(1, K):
        total = d2.sum()
        if total > 0:
            probs = d2 / total
            nxt = int(rng.choice(n, p=probs))
        else:
            # all remaining mass on already-chosen locations (duplicates)
            nxt = int(np.flatnonzero(d2 == 0)[0])
        centers[i] = data[nxt]
        d2 = np.minimum(d2, _pairwise_sq_dists(data, centers[i:i + 1])[:, 0])

    for _ in range(LLOYD_MAX_ITERS):
        assign = np.argmin(_pairwise_sq_dists(data, centers), axis=1)
        new_centers = centers.copy()
        for j in range(K):
            members = assign == j
            if members.any():
                new_centers[j] = data[members].mean(axis=0)
        movement = float(np.sqrt(((new_centers - centers) ** 2).sum(axis=1)).max())
        centers = new_centers
        if movement < LLOYD_TOL:
            break
    return centers


def _mean_knn_dist(points: np.ndarray, ref: np.ndarray, k: int,
                   exclude_self: bool) -> np.ndarray:
    """Per row of `points`: mean Euclidean distance to its k NN within `ref`."""
    d2 = _pairwise_sq_dists(points, ref)
    if exclude_self:
        # the query rows are rows of ref; mask the zero-distance self match
        np.fill_diagonal(d2, np.inf)
    k = min(k, d2.shape[1] - (1 if exclude_self else 0))
    part = np.partition(d2, k - 1, axis=1)[:, :k]
    return np.sqrt(part).mean(axis=1)


def cholesky_init(centers: np.ndarray, X: VectorSet, k_init_nn: int, seed: int,
                  nn_over: str = "centers") -> tuple[GaussianSet, InitReport]:
    """GaussianSet with per-center local scale and a small random lower part.

    The scale is the mean distance from each center to its k_init_nn nearest
    other centers; with too few centers (or nn_over="data") the neighbor
    search falls back to the data points.
    """
    centers = np.asarray(centers, dtype=np.float64)
    K, d = centers.shape
    rng = np.random.default_rng(seed)

    use_centers = nn_over == "centers" and K >= k_init_nn + 1
    if use_centers:
        delta_bar = _mean_knn_dist(centers, centers, k_init_nn, exclude_self=True)
    else:
        delta_bar = _mean_knn_dist(centers, X.as_f64(), k_init_nn, exclude_self=False)
    # duplicate centers give a zero scale; floor it so the factor stays usable
    delta_bar = np.maximum(delta_bar, 1e-8)

    log_diag = np.tile(np.log(delta_bar)[:, None], (1, d))
    raw = rng.uniform(0.0, 0.01, size=(K, d, d))
    eps = 2.0 / (1.0 + np.exp(-raw)) - 1.0   # 2*sigmoid(r) - 1, in (0, 0.005)
    lower = eps * np.tril(np.ones((d, d)), k=-1)

    gs = GaussianSet(mu=centers.copy(), log_diag=log_diag, lower=lower)
    report = InitReport(chosen_centers=centers.copy(), mean_nn_dist=delta_bar)
    return gs, report


def init_gaussians(X: VectorSet, hp) -> tuple[GaussianSet, InitReport]:
    """Full initialization: seeded centers, then local-scale factors."""
    centers = kmeans_pp_init(X, hp.K_init, hp.seed)
    return cholesky_init(centers, X, hp.k_init_nn, hp.seed + 1, nn_over=hp.init_nn_over)
