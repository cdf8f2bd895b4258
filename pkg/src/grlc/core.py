"""Gaussian data model and the dense numeric primitives shared by every module.

A Gaussian is stored as a mean vector plus a Cholesky factor of its
covariance, with the factor's diagonal kept in log-space so that the
materialized diagonal exp(log_diag) is positive by construction and
Sigma = L L^T stays symmetric positive definite for any finite parameters.

Data may arrive as float32; all distance computations run in float64 to
keep triangular solves and gradient checks stable.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, fields
from typing import Iterator

import numpy as np
from scipy.linalg import solve_triangular


class InvalidParameterError(ValueError):
    """A Gaussian parameter is non-finite or structurally invalid."""


# ---------------------------------------------------------------------------
# Vector sets


class VectorSet:
    """n x d matrix of points; ids are implicit row indices 0..n-1."""

    def __init__(self, data: np.ndarray):
        data = np.asarray(data)
        if data.ndim != 2:
            raise ValueError(f"expected 2-d array, got shape {data.shape}")
        n, d = data.shape
        if n < 1:
            raise ValueError("need at least one point")
        if d < 2:
            raise ValueError(f"dimension must be >= 2, got {d}")
        if data.dtype not in (np.float32, np.float64):
            data = data.astype(np.float32)
        if not np.all(np.isfinite(data)):
            raise ValueError("data contains non-finite entries")
        self.data = data

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def d(self) -> int:
        return self.data.shape[1]

    def as_f64(self) -> np.ndarray:
        """The data widened to float64 for numeric work (no copy if already f64)."""
        return self.data.astype(np.float64, copy=False)

    def checksum(self) -> int:
        """CRC32 of the raw data bytes, used as a dataset fingerprint."""
        return zlib.crc32(np.ascontiguousarray(self.data).tobytes()) & 0xFFFFFFFF

    def __len__(self) -> int:
        return self.n

    def __repr__(self) -> str:
        return f"VectorSet(n={self.n}, d={self.d}, dtype={self.data.dtype})"


# ---------------------------------------------------------------------------
# Gaussians


@dataclass(frozen=True)
class GaussianParams:
    """One Gaussian: mean, log of the Cholesky diagonal, strict lower part."""

    mu: np.ndarray        # (d,)
    log_diag: np.ndarray  # (d,)
    lower: np.ndarray     # (d, d), strictly lower triangular

    @property
    def d(self) -> int:
        return self.mu.shape[0]

    def validate(self) -> None:
        if self.mu.shape != self.log_diag.shape or self.mu.ndim != 1:
            raise InvalidParameterError("mu/log_diag shape mismatch")
        d = self.d
        if self.lower.shape != (d, d):
            raise InvalidParameterError(f"lower must be {d}x{d}")
        for name, arr in (("mu", self.mu), ("log_diag", self.log_diag), ("lower", self.lower)):
            if not np.all(np.isfinite(arr)):
                raise InvalidParameterError(f"non-finite entries in {name}")
        if np.any(np.triu(self.lower) != 0.0):
            raise InvalidParameterError("lower has nonzero entries on or above the diagonal")


class GaussianSet:
    """Ordered, growable collection of Gaussians sharing one dimension.

    Parameters live in stacked float64 arrays so batch operations vectorize;
    the `active` mask records which Gaussians still take part (split
    deactivates parents, prune deactivates degenerates).
    """

    def __init__(self, mu: np.ndarray, log_diag: np.ndarray, lower: np.ndarray,
                 active: np.ndarray | None = None):
        mu = np.asarray(mu, dtype=np.float64)
        log_diag = np.asarray(log_diag, dtype=np.float64)
        lower = np.asarray(lower, dtype=np.float64)
        if mu.ndim != 2:
            raise ValueError("mu must be (K, d)")
        K, d = mu.shape
        if log_diag.shape != (K, d) or lower.shape != (K, d, d):
            raise ValueError("parameter array shapes disagree")
        self.mu = mu
        self.log_diag = log_diag
        self.lower = lower
        self.active = (np.ones(K, dtype=bool) if active is None
                       else np.asarray(active, dtype=bool).copy())
        if self.active.shape != (K,):
            raise ValueError("active mask shape disagrees")
        if not self.active.any():
            raise ValueError("need at least one active Gaussian")
        self._enforce_strict_lower()

    def _enforce_strict_lower(self) -> None:
        mask = np.tril(np.ones((self.d, self.d), dtype=bool), k=-1)
        self.lower *= mask

    @property
    def K(self) -> int:
        return self.mu.shape[0]

    @property
    def d(self) -> int:
        return self.mu.shape[1]

    def active_ids(self) -> np.ndarray:
        return np.flatnonzero(self.active)

    @property
    def n_active(self) -> int:
        return int(self.active.sum())

    def __len__(self) -> int:
        return self.K

    def __getitem__(self, i: int) -> GaussianParams:
        return GaussianParams(mu=self.mu[i], log_diag=self.log_diag[i], lower=self.lower[i])

    def __iter__(self) -> Iterator[GaussianParams]:
        for i in range(self.K):
            yield self[i]

    def append(self, mu: np.ndarray, log_diag: np.ndarray, lower: np.ndarray) -> int:
        """Add one active Gaussian; returns its id."""
        self.mu = np.concatenate([self.mu, np.asarray(mu, dtype=np.float64)[None]])
        self.log_diag = np.concatenate([self.log_diag, np.asarray(log_diag, dtype=np.float64)[None]])
        self.lower = np.concatenate([self.lower, np.asarray(lower, dtype=np.float64)[None]])
        self.active = np.concatenate([self.active, [True]])
        self._enforce_strict_lower()
        return self.K - 1

    def deactivate(self, i: int) -> None:
        if self.active[i] and self.n_active == 1:
            raise ValueError("cannot deactivate the last active Gaussian")
        self.active[i] = False

    def copy(self) -> "GaussianSet":
        return GaussianSet(self.mu.copy(), self.log_diag.copy(), self.lower.copy(),
                           self.active.copy())

    # -- flat parameter view over active Gaussians, used by the optimizer
    #    step and by finite-difference checks

    def params_per_gaussian(self) -> int:
        d = self.d
        return 2 * d + d * (d - 1) // 2

    def get_param_vector(self) -> np.ndarray:
        """Flatten active Gaussians' (mu, log_diag, strict-lower) into one vector."""
        rows, cols = np.tril_indices(self.d, k=-1)
        blocks = []
        for i in self.active_ids():
            blocks.extend([self.mu[i], self.log_diag[i], self.lower[i][rows, cols]])
        return np.concatenate(blocks)

    def set_param_vector(self, vec: np.ndarray) -> None:
        d = self.d
        rows, cols = np.tril_indices(d, k=-1)
        per = self.params_per_gaussian()
        ids = self.active_ids()
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (per * len(ids),):
            raise ValueError(f"expected vector of length {per * len(ids)}")
        for k, i in enumerate(ids):
            block = vec[k * per:(k + 1) * per]
            self.mu[i] = block[:d]
            self.log_diag[i] = block[d:2 * d]
            low = np.zeros((d, d))
            low[rows, cols] = block[2 * d:]
            self.lower[i] = low


# ---------------------------------------------------------------------------
# Hyperparameters


@dataclass
class HyperParams:
    """Every tunable of the pipeline, with library defaults.

    Loss weights, thresholds, refinement triggers, schedules and the
    quantization grid all live here so a run is reproducible from one record.
    """

    # coverage / loss
    tau: float = 3.0
    lambda_div: float = 1.0
    lambda_cov: float = 1.0
    lambda_anchor: float = 1e-2
    alpha_anchor: float = 1e-1
    eps_num: float = 1e-12

    # refinement
    alpha_split: float = 0.9        # covariance shrink applied to split children
    gamma_split: float = 1e-2       # split when |bucket| > gamma_split * n
    e_clone: float = 2.2            # shell outer bound multiplier
    rho_clone: float = 0.6          # fraction of shell points sampled
    beta_clone: float = 0.3         # shell/interior ratio trigger
    clone_min_frac: float = 8e-4    # min bucket fraction for clone eligibility
    prune_min_card: int = 2         # buckets below this cardinality are pruned
    k_density: int = 10
    shell_mode: str = "mult"        # "mult": (tau, e*tau); "affine": (tau, (1+e)*tau)

    # initialization
    k_init_nn: int = 3
    K_init: int = 32
    init_nn_over: str = "data"      # initial scale from neighbor distances over
                                    # raw data (local density) or other centers

    # schedule
    epochs_max: int = 250
    warmup_epochs: int = 35
    splitclone_period: int = 35
    prune_period: int = 60
    lr_mu_start: float = 1e-7
    lr_mu_peak: float = 9e-3
    lr_mu_final: float = 3e-3
    lr_chol_start: float = 1e-7
    lr_chol_peak: float = 5e-4
    lr_chol_final: float = 9e-5
    batch_size: int = 5000
    momentum: float = 0.0           # plain SGD by default
    normalize: str = "none"         # "none", "perdim" or "global" preprocessing

    # quantization
    r_pca: int = 3
    n_radial: int = 6
    n_angular: int = 4
    rmin_zero: bool = False         # force the radial grid to start at 0

    # query
    probe_ratio: float = 0.3

    seed: int = 0

    def validate(self) -> None:
        if not self.tau > 0:
            raise ValueError("tau must be > 0")
        if not (0 < self.rho_clone <= 1):
            raise ValueError("rho_clone must be in (0, 1]")
        if not self.e_clone > 1:
            raise ValueError("e_clone must be > 1")
        if not (0 < self.probe_ratio <= 1):
            raise ValueError("probe_ratio must be in (0, 1]")
        if self.r_pca < 2:
            raise ValueError("r_pca must be >= 2")
        if self.n_radial < 1 or self.n_angular < 1:
            raise ValueError("grid divisions must be >= 1")
        if self.shell_mode not in ("mult", "affine"):
            raise ValueError(f"unknown shell_mode {self.shell_mode!r}")
        if self.init_nn_over not in ("centers", "data"):
            raise ValueError(f"unknown init_nn_over {self.init_nn_over!r}")
        if self.normalize not in ("none", "perdim", "global"):
            raise ValueError(f"unknown normalize mode {self.normalize!r}")
        if self.K_init < 1 or self.k_init_nn < 1 or self.batch_size < 1:
            raise ValueError("counts must be >= 1")

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d: dict) -> "HyperParams":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown hyperparameter keys: {sorted(unknown)}")
        hp = cls(**d)
        hp.validate()
        return hp


# ---------------------------------------------------------------------------
# Triangular solves
#
# Two routes: scipy's trsm for speed, and a strictly sequential elementwise
# substitution whose per-row rounding is independent of the batch size.
# The sequential route is what makes the scalar op and the exact batch mode
# agree bit-for-bit, which blocked BLAS kernels do not guarantee.


def _forward_substitute_seq(L: np.ndarray, U: np.ndarray) -> np.ndarray:
    """Solve L Y^T = U^T row-wise; U is (m, d), result (m, d)."""
    m, d = U.shape
    Y = np.empty((m, d), dtype=np.float64)
    for j in range(d):
        acc = U[:, j].astype(np.float64, copy=True)
        for k in range(j):
            acc -= Y[:, k] * L[j, k]
        Y[:, j] = acc / L[j, j]
    return Y


def _back_substitute_seq(L: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """Solve L^T Z^T = Y^T row-wise; Y is (m, d), result (m, d)."""
    m, d = Y.shape
    Z = np.empty((m, d), dtype=np.float64)
    for j in range(d - 1, -1, -1):
        acc = Y[:, j].astype(np.float64, copy=True)
        for k in range(j + 1, d):
            acc -= Z[:, k] * L[k, j]
        Z[:, j] = acc / L[j, j]
    return Z


def solve_lower(L: np.ndarray, U: np.ndarray, exact: bool = False) -> np.ndarray:
    """Rows of U whitened by L: returns Y with L y_i = u_i per row."""
    if exact:
        return _forward_substitute_seq(L, U)
    return solve_triangular(L, U.T, lower=True, check_finite=False).T


def solve_lower_t(L: np.ndarray, Y: np.ndarray, exact: bool = False) -> np.ndarray:
    """Rows of Y pushed through L^-T: returns Z with L^T z_i = y_i per row."""
    if exact:
        return _back_substitute_seq(L, Y)
    return solve_triangular(L, Y.T, lower=True, trans="T", check_finite=False).T


def _row_sq_norms(Y: np.ndarray) -> np.ndarray:
    return np.einsum("ij,ij->i", Y, Y)


def euclidean_rows(A: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Exact per-row Euclidean distance to q in f64.

    Search re-ranking and the brute-force oracle both call this, so their
    distances agree bit-for-bit row by row.
    """
    diff = np.asarray(A, dtype=np.float64) - np.asarray(q, dtype=np.float64)
    return np.sqrt(np.einsum("ij,ij->i", diff, diff))


# ---------------------------------------------------------------------------
# Primitive operations


def materialize_cholesky(g: GaussianParams) -> np.ndarray:
    """Build the lower-triangular factor L with diagonal exp(log_diag)."""
    g.validate()
    L = np.array(g.lower, dtype=np.float64, copy=True)
    np.fill_diagonal(L, np.exp(g.log_diag))
    return L


def materialize_cholesky_all(G: GaussianSet) -> np.ndarray:
    """Stacked (K, d, d) factors; inactive entries are materialized too."""
    if not np.all(np.isfinite(G.log_diag)) or not np.all(np.isfinite(G.lower)):
        raise InvalidParameterError("non-finite Gaussian parameters")
    d = G.d
    L = G.lower.copy()
    idx = np.arange(d)
    L[:, idx, idx] = np.exp(G.log_diag)
    return L


def mahalanobis(x: np.ndarray, g: GaussianParams) -> float:
    """Whitened distance ||L^-1 (x - mu)||_2, via forward substitution."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != g.mu.shape:
        raise ValueError(f"dimension mismatch: point {x.shape} vs Gaussian {g.mu.shape}")
    L = materialize_cholesky(g)
    y = _forward_substitute_seq(L, (x - g.mu)[None, :])
    return float(np.sqrt(_row_sq_norms(y)[0]))


def inverse_factors(G: GaussianSet) -> np.ndarray:
    """Stacked L^-1 per active Gaussian (inactive rows left zero)."""
    Ls = materialize_cholesky_all(G)
    out = np.zeros_like(Ls)
    act = G.active_ids()
    out[act] = np.linalg.inv(Ls[act])
    return out


def mahalanobis_batch(X: VectorSet | np.ndarray, G: GaussianSet,
                      exact: bool = False) -> np.ndarray:
    """n x K matrix of Mahalanobis distances; inactive columns are +inf.

    With exact=True every entry matches the scalar op bit-for-bit (strict
    sequential substitution); the default route whitens with precomputed
    factor inverses and agrees to rounding error.
    """
    data = X.as_f64() if isinstance(X, VectorSet) else np.asarray(X, dtype=np.float64)
    if data.ndim != 2 or data.shape[1] != G.d:
        raise ValueError(f"dimension mismatch: data {data.shape} vs Gaussians d={G.d}")
    n = data.shape[0]
    out = np.full((n, G.K), np.inf)
    if exact:
        Ls = materialize_cholesky_all(G)
        for j in G.active_ids():
            Y = _forward_substitute_seq(Ls[j], data - G.mu[j])
            out[:, j] = np.sqrt(_row_sq_norms(Y))
        return out
    Linv = inverse_factors(G)
    for j in G.active_ids():
        Y = (data - G.mu[j]) @ Linv[j].T
        out[:, j] = np.sqrt(_row_sq_norms(Y))
    return out
