"""Frozen search structure: buckets, per-bucket PCA, spherical bins, persistence.

Each active Gaussian owns a bucket (its covered points plus nearest-fallback
assignments). Bucket points are projected onto a local PCA basis, mapped to
hyperspherical coordinates (radius plus r-1 angles) and binned on a uniform
radial x angular grid bounded by the bucket's own coordinate ranges. The
whole structure serializes to a little-endian binary file with a CRC32
trailer; the dataset itself is referenced by fingerprint, not embedded.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from .core import GaussianSet, HyperParams, VectorSet, mahalanobis_batch
from .refinement import current_buckets
from .training import NormTransform

MAGIC = b"GRLC"
FORMAT_VERSION = 1

# re-exported here because bucket construction and refinement share one rule
assign_buckets = current_buckets


class IndexFormatError(ValueError):
    """Malformed or corrupted index file."""


# ---------------------------------------------------------------------------
# Local PCA


def _orthonormal_completion(basis_cols: list[np.ndarray], d: int, r: int) -> list[np.ndarray]:
    """Pad with standard-basis vectors orthogonalized against what exists."""
    out = list(basis_cols)
    i = 0
    while len(out) < r and i < d:
        cand = np.zeros(d)
        cand[i] = 1.0
        for b in out:
            cand -= (cand @ b) * b
        nrm = np.linalg.norm(cand)
        if nrm > 0.5:  # e_i was not (nearly) in the span
            out.append(cand / nrm)
        i += 1
    if len(out) < r:
        raise ValueError("could not complete orthonormal basis")
    return out


def _fix_signs(basis: np.ndarray) -> np.ndarray:
    """Largest-magnitude component of each column made positive."""
    idx = np.argmax(np.abs(basis), axis=0)
    signs = np.sign(basis[idx, np.arange(basis.shape[1])])
    signs[signs == 0] = 1.0
    return basis * signs


def bucket_pca(points: np.ndarray, r_pca: int) -> tuple[np.ndarray, np.ndarray, np.ndarray, bool]:
    """Centroid, d x r orthonormal basis, n x r projections, degenerate flag.

    Basis columns are the top eigenvectors of the centered covariance in
    descending eigenvalue order. Buckets too small or rank deficient get the
    basis padded with an orthonormal completion and are flagged degenerate
    (searched by linear scan instead of bins).
    """
    pts = np.asarray(points, dtype=np.float64)
    m, d = pts.shape
    r = min(r_pca, d)
    centroid = pts.mean(axis=0)
    centered = pts - centroid

    if m == 1:
        basis = np.stack(_orthonormal_completion([], d, r), axis=1)
        return centroid, basis, np.zeros((1, r)), True

    _, S, Vt = np.linalg.svd(centered, full_matrices=False)
    tol = max(S[0] * 1e-9, 1e-12) if S.size else 1e-12
    rank = int((S > tol).sum())
    take = min(rank, r)
    cols = [Vt[i] for i in range(take)]
    degenerate = m <= r_pca or rank < r
    if len(cols) < r:
        cols = _orthonormal_completion(cols, d, r)
    basis = _fix_signs(np.stack(cols, axis=1))
    return centroid, basis, centered @ basis, degenerate


# ---------------------------------------------------------------------------
# Hyperspherical coordinates


def cart2sph(v: np.ndarray) -> np.ndarray:
    """(radius, r-1 angles): phi_k = atan2(||tail||, v_k), last angle signed."""
    v = np.asarray(v, dtype=np.float64)
    return cart2sph_batch(v[None, :])[0]


def cart2sph_batch(V: np.ndarray) -> np.ndarray:
    V = np.asarray(V, dtype=np.float64)
    m, r = V.shape
    if r < 2:
        raise ValueError("need r >= 2 for spherical coordinates")
    suffix = np.zeros((m, r + 1))
    suffix[:, :r] = np.cumsum((V ** 2)[:, ::-1], axis=1)[:, ::-1]
    S = np.empty_like(V)
    S[:, 0] = np.sqrt(suffix[:, 0])
    for k in range(r - 2):
        S[:, k + 1] = np.arctan2(np.sqrt(suffix[:, k + 1]), V[:, k])
    S[:, r - 1] = np.arctan2(V[:, r - 1], V[:, r - 2])
    return S


def sph2cart(s: np.ndarray) -> np.ndarray:
    """Inverse of cart2sph (used by round-trip validation)."""
    s = np.asarray(s, dtype=np.float64)
    r = s.shape[0]
    v = np.empty(r)
    radius, angles = s[0], s[1:]
    sin_prod = 1.0
    for k in range(r - 1):
        v[k] = radius * sin_prod * np.cos(angles[k])
        sin_prod *= np.sin(angles[k])
    v[r - 1] = radius * sin_prod
    return v


# ---------------------------------------------------------------------------
# Grid


@dataclass
class GridSpec:
    radial_edges: np.ndarray     # (n_radial + 1,)
    angular_ranges: np.ndarray   # (r - 1, 2)
    n_radial: int
    n_angular: int


def _coord_indices(values: np.ndarray, lo: float, hi: float, n: int) -> np.ndarray:
    width = (hi - lo) / n
    if width <= 0:
        return np.zeros(values.shape, dtype=np.int64)
    idx = np.floor((values - lo) / width).astype(np.int64)
    return np.clip(idx, 0, n - 1)


def grid_bin_coords(sph: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Integer bin coordinates (m, r) for spherical points, clamped into range."""
    sph = np.atleast_2d(sph)
    m, r = sph.shape
    out = np.empty((m, r), dtype=np.int64)
    out[:, 0] = _coord_indices(sph[:, 0], grid.radial_edges[0], grid.radial_edges[-1],
                               grid.n_radial)
    for k in range(r - 1):
        lo, hi = grid.angular_ranges[k]
        out[:, k + 1] = _coord_indices(sph[:, k + 1], lo, hi, grid.n_angular)
    return out


def build_grid(projected: np.ndarray, n_radial: int, n_angular: int,
               rmin_zero: bool = False) -> tuple[GridSpec, dict[tuple, np.ndarray]]:
    """Uniform spherical grid over the bucket's own coordinate ranges.

    Every point lands in exactly one bin (top edges clamp into the last bin);
    empty bins are omitted from the map.
    """
    projected = np.asarray(projected, dtype=np.float64)
    if projected.shape[0] < 1:
        raise ValueError("need at least one projected point")
    sph = cart2sph_batch(projected)
    radii = sph[:, 0]
    r_min = 0.0 if rmin_zero else float(radii.min())
    r_max = float(radii.max())
    edges = r_min + (r_max - r_min) * np.arange(n_radial + 1) / n_radial
    ranges = np.stack([sph[:, 1:].min(axis=0), sph[:, 1:].max(axis=0)], axis=1)
    grid = GridSpec(radial_edges=edges, angular_ranges=ranges,
                    n_radial=n_radial, n_angular=n_angular)
    coords = grid_bin_coords(sph, grid)
    bins: dict[tuple, np.ndarray] = {}
    order = np.lexsort(coords.T[::-1])
    sorted_coords = coords[order]
    boundaries = np.flatnonzero(np.any(np.diff(sorted_coords, axis=0) != 0, axis=1)) + 1
    for chunk in np.split(order, boundaries):
        bins[tuple(int(c) for c in coords[chunk[0]])] = np.sort(chunk)
    return grid, bins


# ---------------------------------------------------------------------------
# Buckets and the index


@dataclass
class Bucket:
    gaussian_id: int
    member_ids: np.ndarray                 # sorted ascending
    centroid: np.ndarray                   # (d,)
    basis: np.ndarray                      # (d, r), orthonormal columns
    grid: GridSpec
    bins: dict[tuple, np.ndarray]          # bin coord -> member ids (global)
    degenerate: bool = False

    @property
    def n_members(self) -> int:
        return int(self.member_ids.size)


@dataclass
class Index:
    gaussians: GaussianSet        # compacted: only the surviving Gaussians
    gaussian_ids: np.ndarray      # original training-time ids, ascending
    buckets: list[Bucket]
    n: int
    d: int
    data_checksum: int
    hp: HyperParams
    norm: NormTransform = field(default_factory=NormTransform)
    data: VectorSet | None = None  # attached dataset; not serialized

    @property
    def K(self) -> int:
        return len(self.buckets)

    def require_data(self) -> VectorSet:
        if self.data is None:
            raise ValueError("index has no dataset attached; pass it to load_index")
        return self.data

    def to_query_space(self, q: np.ndarray) -> np.ndarray:
        return self.norm.apply(np.asarray(q, dtype=np.float64)[None, :])[0]


def build_index(X: VectorSet, G: GaussianSet, hp: HyperParams,
                norm: NormTransform | None = None) -> Index:
    """Assign buckets, quantize each one, and assemble the frozen index."""
    hp.validate()
    norm = norm or NormTransform()
    geom = norm.apply(X.data)
    geom_vs = VectorSet(geom)
    delta = mahalanobis_batch(geom_vs, G)
    memberships = current_buckets(geom_vs, G, hp.tau, delta=delta)

    active = G.active_ids()
    compact = GaussianSet(G.mu[active], G.log_diag[active], G.lower[active])
    buckets = []
    for gid in active:
        members = memberships[int(gid)]
        if members.size == 0:
            # empty bucket: keep a placeholder so ids stay aligned
            r = min(hp.r_pca, G.d)
            grid = GridSpec(np.zeros(hp.n_radial + 1), np.zeros((r - 1, 2)),
                            hp.n_radial, hp.n_angular)
            buckets.append(Bucket(int(gid), members.astype(np.int64), G.mu[gid].copy(),
                                  np.stack(_orthonormal_completion([], G.d, r), axis=1),
                                  grid, {}, degenerate=True))
            continue
        centroid, basis, projected, degenerate = bucket_pca(geom[members], hp.r_pca)
        grid, local_bins = build_grid(projected, hp.n_radial, hp.n_angular,
                                      rmin_zero=hp.rmin_zero)
        bins = {coord: members[loc] for coord, loc in local_bins.items()}
        buckets.append(Bucket(int(gid), members.astype(np.int64), centroid, basis,
                              grid, bins, degenerate=degenerate))

    return Index(gaussians=compact, gaussian_ids=active.astype(np.int64),
                 buckets=buckets, n=X.n, d=X.d, data_checksum=X.checksum(),
                 hp=hp, norm=norm, data=X)


# ---------------------------------------------------------------------------
# Persistence: little-endian binary, CRC32 trailer


def _pack_lower(lower: np.ndarray) -> np.ndarray:
    d = lower.shape[0]
    rows, cols = np.tril_indices(d, k=-1)
    return lower[rows, cols]


def _unpack_lower(packed: np.ndarray, d: int) -> np.ndarray:
    rows, cols = np.tril_indices(d, k=-1)
    out = np.zeros((d, d))
    out[rows, cols] = packed
    return out


def _hp_to_json(hp: HyperParams) -> bytes:
    import json

    return json.dumps(hp.to_dict(), sort_keys=True).encode("utf-8")


def save_index(index: Index, path: str) -> None:
    """Write the index; floats are f64, ids u32, layout fixed by version 1."""
    buf = bytearray()
    put = buf.extend
    put(MAGIC)
    put(struct.pack("<I", FORMAT_VERSION))
    put(struct.pack("<QII", index.n, index.d, index.K))
    put(struct.pack("<I", index.data_checksum))
    hp_json = _hp_to_json(index.hp)
    put(struct.pack("<I", len(hp_json)))
    put(hp_json)

    mode_code = {"none": 0, "perdim": 1, "global": 2}[index.norm.mode]
    put(struct.pack("<B", mode_code))
    if mode_code:
        put(np.asarray(index.norm.shift, dtype="<f8").tobytes())
        put(np.asarray(index.norm.scale, dtype="<f8").tobytes())

    G = index.gaussians
    for i in range(G.K):
        put(struct.pack("<I", int(index.gaussian_ids[i])))
        put(np.asarray(G.mu[i], dtype="<f8").tobytes())
        put(np.asarray(G.log_diag[i], dtype="<f8").tobytes())
        put(np.asarray(_pack_lower(G.lower[i]), dtype="<f8").tobytes())

    for b in index.buckets:
        r = b.basis.shape[1]
        put(struct.pack("<IBQI", b.gaussian_id, int(b.degenerate), b.n_members, r))
        put(np.asarray(b.centroid, dtype="<f8").tobytes())
        put(np.ascontiguousarray(b.basis, dtype="<f8").tobytes())
        put(struct.pack("<I", b.grid.n_radial))
        put(struct.pack("<I", b.grid.n_angular))
        put(np.asarray(b.grid.radial_edges, dtype="<f8").tobytes())
        put(np.ascontiguousarray(b.grid.angular_ranges, dtype="<f8").tobytes())
        coords = sorted(b.bins.keys())
        put(struct.pack("<I", len(coords)))
        offset = 0
        pool: list[np.ndarray] = []
        for coord in coords:
            ids = b.bins[coord]
            put(np.asarray(coord, dtype="<u2").tobytes())
            put(struct.pack("<QQ", offset, ids.size))
            pool.append(ids)
            offset += ids.size
        put(struct.pack("<Q", offset))
        if pool:
            put(np.concatenate(pool).astype("<u4").tobytes())

    put(struct.pack("<I", zlib.crc32(bytes(buf)) & 0xFFFFFFFF))
    with open(path, "wb") as f:
        f.write(bytes(buf))


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise IndexFormatError(f"truncated index file at byte {self.pos}")
        out = self.blob[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def array(self, dtype: str, count: int) -> np.ndarray:
        itemsize = np.dtype(dtype).itemsize
        return np.frombuffer(self.take(itemsize * count), dtype=dtype).copy()


def load_index(path: str, data: VectorSet | None = None) -> Index:
    """Read an index file, verify the CRC, optionally attach (and verify) data."""
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < 8 or blob[:4] != MAGIC:
        raise IndexFormatError("not an index file (bad magic)")
    stored_crc = struct.unpack("<I", blob[-4:])[0]
    if zlib.crc32(blob[:-4]) & 0xFFFFFFFF != stored_crc:
        raise IndexFormatError("checksum mismatch; file corrupted")

    rd = _Reader(blob[:-4])
    rd.take(4)  # magic
    (version,) = rd.unpack("<I")
    if version != FORMAT_VERSION:
        raise IndexFormatError(f"unsupported format version {version}")
    n, d, K = rd.unpack("<QII")
    (checksum,) = rd.unpack("<I")
    (hp_len,) = rd.unpack("<I")
    import json

    hp = HyperParams.from_dict(json.loads(rd.take(hp_len).decode("utf-8")))

    (mode_code,) = rd.unpack("<B")
    mode = {0: "none", 1: "perdim", 2: "global"}[mode_code]
    if mode_code:
        shift = rd.array("<f8", d)
        scale = rd.array("<f8", d)
        norm = NormTransform(mode=mode, shift=shift, scale=scale)
    else:
        norm = NormTransform()

    gids = np.empty(K, dtype=np.int64)
    mu = np.empty((K, d))
    log_diag = np.empty((K, d))
    lower = np.empty((K, d, d))
    for i in range(K):
        (gids[i],) = rd.unpack("<I")
        mu[i] = rd.array("<f8", d)
        log_diag[i] = rd.array("<f8", d)
        lower[i] = _unpack_lower(rd.array("<f8", d * (d - 1) // 2), d)
    gaussians = GaussianSet(mu, log_diag, lower)

    buckets = []
    for _ in range(K):
        gid, degenerate, n_members, r = rd.unpack("<IBQI")
        centroid = rd.array("<f8", d)
        basis = rd.array("<f8", d * r).reshape(d, r)
        (n_radial,) = rd.unpack("<I")
        (n_angular,) = rd.unpack("<I")
        edges = rd.array("<f8", n_radial + 1)
        ranges = rd.array("<f8", (r - 1) * 2).reshape(r - 1, 2)
        grid = GridSpec(edges, ranges, n_radial, n_angular)
        (n_bins,) = rd.unpack("<I")
        table = []
        for _ in range(n_bins):
            coord = tuple(int(c) for c in rd.array("<u2", r))
            off, length = rd.unpack("<QQ")
            table.append((coord, off, length))
        (pool_size,) = rd.unpack("<Q")
        pool = rd.array("<u4", pool_size).astype(np.int64)
        bins = {coord: pool[off:off + length] for coord, off, length in table}
        members = np.sort(pool) if pool_size else np.empty(0, dtype=np.int64)
        if members.size != n_members:
            raise IndexFormatError(f"bucket {gid}: member pool size mismatch")
        buckets.append(Bucket(gid, members, centroid, basis, grid, bins,
                              degenerate=bool(degenerate)))
    if rd.pos != len(rd.blob):
        raise IndexFormatError(f"{len(rd.blob) - rd.pos} trailing bytes")

    index = Index(gaussians=gaussians, gaussian_ids=gids, buckets=buckets, n=n, d=d,
                  data_checksum=checksum, hp=hp, norm=norm)
    if data is not None:
        attach_data(index, data)
    return index


def attach_data(index: Index, data: VectorSet) -> None:
    """Bind the dataset the index was built on, verifying the fingerprint."""
    if data.n != index.n or data.d != index.d:
        raise IndexFormatError(
            f"dataset shape ({data.n}, {data.d}) does not match index "
            f"({index.n}, {index.d})")
    if data.checksum() != index.data_checksum:
        raise IndexFormatError("dataset checksum does not match index fingerprint")
    index.data = data
