"""Binary vector formats, label files, synthetic mixtures and run configuration.

fvecs/ivecs use the classic framing: every record is a little-endian int32
dimension followed by that many float32 (or int32) payload values. Loaders
reject rather than guess: truncation, non-positive or inconsistent
dimensions all raise FormatError with the byte offset of the offence.
"""

from __future__ import annotations

import configparser
import struct
from dataclasses import dataclass, fields

import numpy as np

from .core import HyperParams, VectorSet


class FormatError(ValueError):
    """Malformed binary vector file."""


# ---------------------------------------------------------------------------
# fvecs / ivecs


def _load_vecs(path: str, payload_dtype: str) -> np.ndarray:
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < 4:
        raise FormatError(f"{path}: truncated header at byte 0")
    d0 = struct.unpack_from("<i", blob, 0)[0]
    if d0 <= 0:
        raise FormatError(f"{path}: non-positive dimension {d0} at byte 0")
    rec = 4 + 4 * d0
    if len(blob) % rec != 0:
        # walk records to point at the exact offence
        pos = 0
        while pos < len(blob):
            if len(blob) - pos < 4:
                raise FormatError(f"{path}: truncated record header at byte {pos}")
            d = struct.unpack_from("<i", blob, pos)[0]
            if d <= 0:
                raise FormatError(f"{path}: non-positive dimension {d} at byte {pos}")
            if d != d0:
                raise FormatError(f"{path}: inconsistent dimension {d} != {d0} at byte {pos}")
            if len(blob) - pos < 4 + 4 * d:
                raise FormatError(f"{path}: truncated record payload at byte {pos}")
            pos += 4 + 4 * d
        raise FormatError(f"{path}: malformed framing")  # pragma: no cover
    n = len(blob) // rec
    raw = np.frombuffer(blob, dtype="<i4").reshape(n, 1 + d0)
    headers = raw[:, 0]
    bad = np.flatnonzero(headers != d0)
    if bad.size:
        off = int(bad[0]) * rec
        raise FormatError(
            f"{path}: inconsistent dimension {int(headers[bad[0]])} != {d0} at byte {off}")
    payload = raw[:, 1:].view(payload_dtype)
    return payload.copy()


def load_fvecs(path: str) -> VectorSet:
    """VectorSet from an .fvecs file (int32 dim header, float32 payload)."""
    return VectorSet(_load_vecs(path, "<f4"))


def load_ivecs(path: str) -> np.ndarray:
    """Integer matrix from an .ivecs file (int32 header and payload)."""
    return _load_vecs(path, "<i4")


def _save_vecs(path: str, data: np.ndarray, payload_dtype: str) -> None:
    data = np.ascontiguousarray(data)
    n, d = data.shape
    out = np.empty((n, 1 + d), dtype="<i4")
    out[:, 0] = d
    out[:, 1:] = data.astype(payload_dtype, copy=False).view("<i4")
    with open(path, "wb") as f:
        f.write(out.tobytes())


def save_fvecs(path: str, data: np.ndarray | VectorSet) -> None:
    arr = data.data if isinstance(data, VectorSet) else np.asarray(data)
    _save_vecs(path, arr.astype("<f4", copy=False), "<f4")


def save_ivecs(path: str, data: np.ndarray) -> None:
    _save_vecs(path, np.asarray(data, dtype="<i4"), "<i4")


def load_labels(path: str) -> np.ndarray:
    """Integer labels, one per line."""
    labels = np.loadtxt(path, dtype=np.int64, ndmin=1)
    return labels


def save_labels(path: str, labels: np.ndarray) -> None:
    np.savetxt(path, np.asarray(labels, dtype=np.int64), fmt="%d")


# ---------------------------------------------------------------------------
# Synthetic mixtures


@dataclass
class LabeledDataset:
    vectors: VectorSet
    labels: np.ndarray | None = None
    component_means: np.ndarray | None = None

    @property
    def n(self) -> int:
        return self.vectors.n


def synth_mixture(n: int, d: int, components: int, spread: float,
                  seed: int) -> LabeledDataset:
    """Anisotropic Gaussian mixture: means uniform in [-1, 1]^d, covariance
    factors are random rotations with axis scales in spread * [0.3, 1].
    Labels are component ids; points are stored float32."""
    if components < 1 or n < components:
        raise ValueError("need 1 <= components <= n")
    rng = np.random.default_rng(seed)
    means = rng.uniform(-1.0, 1.0, size=(components, d))
    counts = np.full(components, n // components)
    counts[: n % components] += 1
    points = np.empty((n, d), dtype=np.float64)
    labels = np.empty(n, dtype=np.int64)
    pos = 0
    for c in range(components):
        Q, R = np.linalg.qr(rng.normal(size=(d, d)))
        Q = Q * np.sign(np.diag(R))  # fix the QR sign ambiguity
        scales = spread * rng.uniform(0.3, 1.0, size=d)
        z = rng.normal(size=(counts[c], d))
        points[pos:pos + counts[c]] = means[c] + (z * scales) @ Q.T
        labels[pos:pos + counts[c]] = c
        pos += counts[c]
    return LabeledDataset(vectors=VectorSet(points.astype(np.float32)),
                          labels=labels, component_means=means)


# ---------------------------------------------------------------------------
# Run configuration


CONFIG_SECTIONS = {
    "run": {"seed", "deterministic", "threads", "label"},
    "paths": {"data", "queries", "labels", "query_labels", "gt", "out", "index",
              "train_log"},
    "hyperparams": {f.name for f in fields(HyperParams)},
}


@dataclass
class RunConfig:
    """Effective options for one CLI invocation: hyperparameters plus paths."""

    hp: HyperParams
    paths: dict
    deterministic: bool = False
    threads: int = 0          # 0: leave the BLAS pool alone
    label: str = "grlc"

    def to_config_text(self) -> str:
        cp = configparser.ConfigParser()
        cp["run"] = {"seed": str(self.hp.seed),
                     "deterministic": str(self.deterministic).lower(),
                     "threads": str(self.threads),
                     "label": self.label}
        cp["paths"] = {k: str(v) for k, v in self.paths.items() if v is not None}
        cp["hyperparams"] = {k: str(v) for k, v in self.hp.to_dict().items()}
        import io as _io

        buf = _io.StringIO()
        cp.write(buf)
        return buf.getvalue()


def _coerce(name: str, raw: str, target_type):
    if target_type is bool:
        low = raw.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"cannot parse boolean {name}={raw!r}")
    return target_type(raw)


def parse_config(path: str) -> dict:
    """Flat 'key = value' file with [run]/[paths]/[hyperparams] sections.

    Unknown sections or keys are rejected. Values are returned per section
    with hyperparameters coerced to their declared types.
    """
    cp = configparser.ConfigParser()
    cp.optionxform = str  # hyperparameter keys are case-sensitive
    read = cp.read(path)
    if not read:
        raise FileNotFoundError(path)
    out: dict = {"run": {}, "paths": {}, "hyperparams": {}}
    hp_types = {f.name: f.type for f in fields(HyperParams)}
    defaults = HyperParams()
    for section in cp.sections():
        if section not in CONFIG_SECTIONS:
            raise ValueError(f"unknown config section [{section}]")
        for key, raw in cp.items(section):
            if key not in CONFIG_SECTIONS[section]:
                raise ValueError(f"unknown config key {key!r} in [{section}]")
            if section == "hyperparams":
                out[section][key] = _coerce(key, raw, type(getattr(defaults, key)))
            elif key in ("seed", "threads"):
                out[section][key] = int(raw)
            elif key == "deterministic":
                out[section][key] = _coerce(key, raw, bool)
            else:
                out[section][key] = raw
    return out
