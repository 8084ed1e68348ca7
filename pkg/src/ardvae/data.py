"""Dataset loading, scaling, splitting, minibatching and synthetic generation.

Binary matrices use the ``flat_f32`` container: a 16-byte little-endian
header (magic ``b"ARDM"``, version u32, rows u32, cols u32) followed by
``rows * cols`` row-major values. Version 1 stores float32 payloads, version 2
float64 (used for checkpoint blobs).
"""
from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from .numerics import DTYPE, RngStream

MAGIC = b"ARDM"
HEADER = struct.Struct("<4sIII")
VERSION_F32 = 1
VERSION_F64 = 2
_PAYLOAD = {VERSION_F32: np.dtype("<f4"), VERSION_F64: np.dtype("<f8")}


class DataFormatError(ValueError):
    pass


@dataclass
class Dataset:
    X: np.ndarray
    name: str = "data"
    pixel_range: tuple[float, float] | None = None
    ground_truth_latent_dim: int | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        X = np.ascontiguousarray(self.X, dtype=DTYPE)
        if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
            raise ValueError(f"dataset needs shape (N>=1, D>=1), got {X.shape}")
        if not np.all(np.isfinite(X)):
            row = int(np.argwhere(~np.isfinite(X))[0, 0])
            raise ValueError(f"dataset {self.name!r} has a non-finite value in row {row}")
        self.X = X
        if self.pixel_range is None:
            self.pixel_range = (float(X.min()), float(X.max()))

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    def subset(self, rows, name: str | None = None) -> "Dataset":
        return Dataset(self.X[rows], name or self.name, self.pixel_range, self.ground_truth_latent_dim, dict(self.meta))


@dataclass
class SplitSpec:
    train_count: int
    test_count: int
    seed: int = 0


# ---------------------------------------------------------------------------
# file formats


def write_flat(path, X, version: int = VERSION_F32) -> None:
    X = np.asarray(X)
    if X.ndim != 2:
        raise ValueError(f"need a 2-D matrix, got shape {X.shape}")
    if version not in _PAYLOAD:
        raise ValueError(f"unknown flat container version {version}")
    with open(path, "wb") as fh:
        fh.write(HEADER.pack(MAGIC, version, X.shape[0], X.shape[1]))
        fh.write(np.ascontiguousarray(X, dtype=_PAYLOAD[version]).tobytes())


def read_flat(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < HEADER.size:
        raise DataFormatError(f"{path}: file is {len(raw)} bytes, shorter than the 16-byte header")
    magic, version, n, d = HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise DataFormatError(f"{path}: bad magic {magic!r} at byte offset 0")
    if version not in _PAYLOAD:
        raise DataFormatError(f"{path}: unsupported version {version} at byte offset 4")
    dt = _PAYLOAD[version]
    expected = HEADER.size + n * d * dt.itemsize
    if len(raw) != expected:
        raise DataFormatError(f"{path}: payload ends at byte offset {len(raw)}, header implies {expected}")
    return np.frombuffer(raw, dtype=dt, offset=HEADER.size).reshape(n, d).astype(DTYPE)


def read_csv_matrix(path) -> np.ndarray:
    rows = []
    width = None
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                vals = [float(c) for c in row]
            except ValueError as exc:
                raise DataFormatError(f"{path}: line {lineno}: {exc}") from None
            if width is None:
                width = len(vals)
            elif len(vals) != width:
                raise DataFormatError(f"{path}: line {lineno}: expected {width} values, got {len(vals)}")
            rows.append(vals)
    if not rows:
        raise DataFormatError(f"{path}: no data rows")
    return np.array(rows, dtype=DTYPE)


def write_csv_matrix(path, X) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        for row in np.asarray(X):
            w.writerow([repr(float(v)) for v in row])


def load_matrix_file(path, format: str | None = None, name: str | None = None) -> Dataset:
    """Load a CSV or flat_f32 file; the format defaults from the extension."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"data file not found: {path}")
    if format is None:
        format = "csv" if path.suffix.lower() in (".csv", ".txt") else "flat_f32"
    if format == "csv":
        X = read_csv_matrix(path)
    elif format == "flat_f32":
        X = read_flat(path)
    else:
        raise ValueError(f"unknown data format {format!r}")
    return Dataset(X, name or path.stem)


# ---------------------------------------------------------------------------
# scaling


@dataclass
class Standardizer:
    """Affine map ``(x - offset) / scale`` applied per column."""

    offset: np.ndarray
    scale: np.ndarray
    mode: str

    @classmethod
    def fit(cls, X, mode: str = "unit_range") -> "Standardizer":
        X = np.asarray(X, dtype=DTYPE)
        d = X.shape[1]
        if mode == "none":
            return cls(np.zeros(d), np.ones(d), mode)
        if mode == "unit_range":
            lo, hi = float(X.min()), float(X.max())
            span = hi - lo if hi > lo else 1.0
            return cls(np.full(d, lo), np.full(d, span), mode)
        if mode == "zscore":
            sd = X.std(axis=0)
            return cls(X.mean(axis=0), np.where(sd > 0, sd, 1.0), mode)
        raise ValueError(f"unknown standardization mode {mode!r}")

    def transform(self, X) -> np.ndarray:
        return (np.asarray(X, dtype=DTYPE) - self.offset) / self.scale

    def inverse(self, Y) -> np.ndarray:
        return np.asarray(Y, dtype=DTYPE) * self.scale + self.offset

    def to_dict(self) -> dict:
        return {"mode": self.mode, "offset": self.offset.tolist(), "scale": self.scale.tolist()}


def standardize(d: Dataset, mode: str = "unit_range", fitted: Standardizer | None = None) -> tuple[Dataset, Standardizer]:
    st = fitted or Standardizer.fit(d.X, mode)
    out = Dataset(st.transform(d.X), d.name, None, d.ground_truth_latent_dim, dict(d.meta))
    out.meta["standardization"] = st.mode
    return out, st


# ---------------------------------------------------------------------------
# splitting and batching


def split(d: Dataset, s: SplitSpec) -> tuple[Dataset, Dataset]:
    if s.train_count < 1:
        raise ValueError("train_count must be >= 1")
    if s.test_count < 0:
        raise ValueError("test_count must be >= 0")
    if s.train_count + s.test_count > d.n:
        raise ValueError(f"split {s.train_count}+{s.test_count} exceeds {d.n} rows")
    perm = RngStream(s.seed, ("split",)).permutation(d.n)
    train_rows = np.sort(perm[: s.train_count])
    test_rows = np.sort(perm[s.train_count: s.train_count + s.test_count])
    train = d.subset(train_rows, f"{d.name}-train")
    test = d.subset(test_rows, f"{d.name}-test") if s.test_count else None
    return train, test


def epoch_order(n: int, rng: RngStream, epoch: int) -> np.ndarray:
    """Row order for one epoch; a pure function of the stream and epoch index."""
    return rng.split(f"epoch{epoch}").permutation(n)


def minibatches(d: Dataset | np.ndarray, batch_size: int, rng: RngStream, epoch: int = 0) -> Iterator[np.ndarray]:
    """Yield the batches of one epoch; the final short batch is kept."""
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    X = d.X if isinstance(d, Dataset) else np.asarray(d)
    order = epoch_order(X.shape[0], rng, epoch)
    for start in range(0, X.shape[0], batch_size):
        yield X[order[start:start + batch_size]]


# ---------------------------------------------------------------------------
# synthetic data


def _orthonormal(rng: RngStream, rows: int, cols: int) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((rows, cols)))
    return q * np.sign(np.diag(r))


def synth_generate(true_dim: int, ambient_dim: int, n: int, noise_std: float = 0.05,
                   nonlinearity: str = "linear", rng: RngStream | None = None, seed: int = 0) -> Dataset:
    """Sample data lying near a ``true_dim``-dimensional manifold in ``ambient_dim`` dimensions.

    Sources ``s ~ N(0, I_k)`` pass through a random map with orthonormal
    columns (``linear``) or through a fixed random tanh layer followed by such
    a map (``tanh-mlp``); isotropic Gaussian noise is added on top.
    """
    if true_dim < 1 or true_dim > ambient_dim:
        raise ValueError(f"need 1 <= k <= D, got k={true_dim}, D={ambient_dim}")
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if noise_std < 0:
        raise ValueError("noise_std must be non-negative")
    rng = rng or RngStream(seed)
    s = rng.split("sources").standard_normal((n, true_dim))
    A = _orthonormal(rng.split("map"), ambient_dim, true_dim)
    if nonlinearity == "linear":
        clean = s @ A.T
    elif nonlinearity == "tanh-mlp":
        hidden = 4 * true_dim
        W1 = rng.split("w1").standard_normal((hidden, true_dim))
        b1 = 0.5 * rng.split("b1").standard_normal(hidden)
        H = np.tanh(s @ W1.T + b1)
        B = _orthonormal(rng.split("map2"), ambient_dim, min(hidden, ambient_dim))
        W2 = B @ rng.split("w2").standard_normal((B.shape[1], hidden)) / np.sqrt(hidden)
        clean = H @ W2.T
    else:
        raise ValueError(f"unknown nonlinearity {nonlinearity!r}")
    X = clean + noise_std * rng.split("noise").standard_normal((n, ambient_dim))
    meta = {"k": true_dim, "D": ambient_dim, "n": n, "noise_std": noise_std, "nonlinearity": nonlinearity,
            "seed": rng.seed}
    return Dataset(X, f"synth-k{true_dim}-D{ambient_dim}", ground_truth_latent_dim=true_dim, meta=meta)
