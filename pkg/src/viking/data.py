"""Toy datasets and file loaders."""

from __future__ import annotations

import csv
import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ContractError, FormatError
from .net import Batch

STD_EPS = 1e-12
IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.9
    seed: int = 0
    standardize: bool = True

    def __post_init__(self):
        if not 0.0 < self.train_fraction <= 1.0:
            raise ContractError(f"train_fraction must be in (0, 1], got {self.train_fraction}")


@dataclass(frozen=True)
class Standardizer:
    """Per-column affine map fitted on training inputs."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, x) -> "Standardizer":
        x = np.asarray(x, dtype=np.float64)
        return cls(x.mean(axis=0), np.maximum(x.std(axis=0), STD_EPS))

    def transform(self, x):
        return (np.asarray(x, dtype=np.float64) - self.mean) / self.std

    def inverse(self, z):
        return np.asarray(z, dtype=np.float64) * self.std + self.mean


def sinusoid_curve(x):
    return 5.0 * np.sin(10.0 * np.asarray(x, dtype=np.float64))


def make_sinusoid(noise_std: float = 0.1, seed: int = 0, grid=(0.25, 0.75), grid_points: int = 200):
    """Ten noisy samples of ``5 sin(10 x)`` with a gap in the middle.

    Twenty equally spaced inputs cover [0.35, 0.65]; only the first and last
    five are kept. Returns ``(batch, grid_x)`` where ``grid_x`` is a
    ``(grid_points, 1)`` evaluation grid.
    """
    if not 1e-3 <= noise_std <= 1.0:
        raise ContractError(f"noise_std must lie in [1e-3, 1], got {noise_std}")
    rng = np.random.default_rng(seed)
    x = np.linspace(0.35, 0.65, 20)
    keep = np.r_[0:5, 15:20]
    x = x[keep]
    y = sinusoid_curve(x) + noise_std * rng.standard_normal(x.size)
    grid_x = np.linspace(grid[0], grid[1], grid_points)[:, None]
    return Batch(x[:, None], y[:, None]), grid_x


def make_blobs(n: int = 200, seed: int = 0, dim: int = 2, separation: float = 1.0,
               spread: float = 1.0) -> Batch:
    """Two isotropic Gaussian classes centred at ``+-separation/2`` along every axis.

    Labels alternate so class counts differ by at most one.
    """
    rng = np.random.default_rng(seed)
    y = np.arange(n) % 2
    centres = np.where(y[:, None] == 1, 0.5, -0.5) * separation * np.ones((1, dim))
    x = centres + spread * rng.standard_normal((n, dim))
    return Batch(x, y.astype(np.int64))


def split(batch: Batch, spec: SplitSpec):
    """Seeded shuffle then split into ``(train, val)``; ``val`` is None at fraction 1.

    With ``spec.standardize`` inputs are standardized by train statistics; the
    fitted :class:`Standardizer` is stored in ``train.meta["standardizer"]``.
    """
    n = len(batch)
    perm = np.random.default_rng(spec.seed).permutation(n)
    n_train = n if spec.train_fraction == 1.0 else int(round(spec.train_fraction * n))
    n_train = min(max(n_train, 1), n)
    tr, va = perm[:n_train], perm[n_train:]
    train = batch.subset(tr)
    val = batch.subset(va) if va.size else None
    if spec.standardize:
        st = Standardizer.fit(train.inputs)
        train = Batch(st.transform(train.inputs), train.targets, {"standardizer": st})
        if val is not None:
            val = Batch(st.transform(val.inputs), val.targets, {"standardizer": st})
    return train, val


def load_csv(path, target, split_spec: SplitSpec = SplitSpec(), categorical: bool = False):
    """Numeric CSV with a header row.

    ``target`` is a column name or index; every other column is an input.
    Returns ``(train, val)`` as in :func:`split`.
    """
    path = Path(path)
    with path.open(newline="") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError(f"{path}: empty file", field="header", line=1) from None
        rows = []
        for row in reader:
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise FormatError(
                    f"{path}:{reader.line_num}: expected {len(header)} fields, got {len(row)}",
                    line=reader.line_num)
            try:
                rows.append([float(c) for c in row])
            except ValueError as exc:
                raise FormatError(f"{path}:{reader.line_num}: {exc}", line=reader.line_num) from None
    if not rows:
        raise FormatError(f"{path}: no data rows", field="rows")
    data = np.array(rows)
    if isinstance(target, str):
        if target not in header:
            raise FormatError(f"{path}: no column named {target!r}", field="target")
        t = header.index(target)
    else:
        t = int(target)
    x = np.delete(data, t, axis=1)
    y = data[:, t].astype(np.int64) if categorical else data[:, t:t + 1]
    return split(Batch(x, y), split_spec)


def _open(path):
    path = Path(path)
    return gzip.open(path, "rb") if path.suffix == ".gz" else path.open("rb")


def _read_idx(path, expected_magic, what):
    with _open(path) as f:
        raw = f.read()
    if len(raw) < 8:
        raise FormatError(f"{what} file {path} too short for an IDX header", field="header")
    magic, count = struct.unpack(">II", raw[:8])
    if magic != expected_magic:
        raise FormatError(f"{what} file has magic {magic:#010x}, expected {expected_magic:#010x}",
                          field="magic")
    ndim = magic & 0xFF
    head = 4 + 4 * ndim
    if len(raw) < head:
        raise FormatError(f"{what} file truncated in dimension header", field="dimensions")
    dims = (count,) + struct.unpack(">" + "I" * (ndim - 1), raw[8:head])
    size = int(np.prod(dims))
    if len(raw) - head < size:
        raise FormatError(f"{what} file truncated: need {size} bytes, have {len(raw) - head}",
                          field="data")
    return np.frombuffer(raw, dtype=np.uint8, count=size, offset=head).reshape(dims)


def load_idx(images_path, labels_path, split_spec: SplitSpec = SplitSpec()):
    """MNIST-style IDX images (ubyte, magic 0x803) and labels (ubyte, magic 0x801).

    Pixels are scaled to [0, 1] and flattened, then split and standardized.
    """
    images = _read_idx(images_path, IDX_IMAGES_MAGIC, "images")
    labels = _read_idx(labels_path, IDX_LABELS_MAGIC, "labels")
    if images.shape[0] != labels.shape[0]:
        raise FormatError(f"count mismatch: {images.shape[0]} images vs {labels.shape[0]} labels",
                          field="count")
    x = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    return split(Batch(x, labels.astype(np.int64)), split_spec)


def write_idx(path, array: np.ndarray) -> None:
    """Write a uint8 array as IDX (used to build fixtures)."""
    arr = np.asarray(array, dtype=np.uint8)
    magic = 0x00000800 | arr.ndim
    head = struct.pack(">I", magic) + struct.pack(">" + "I" * arr.ndim, *arr.shape)
    Path(path).write_bytes(head + arr.tobytes())


def minibatches(batch: Batch, batch_size: int, rng: np.random.Generator | None = None):
    """Split into consecutive mini-batches, shuffled first when ``rng`` is given."""
    n = len(batch)
    idx = rng.permutation(n) if rng is not None else np.arange(n)
    return [batch.subset(idx[i:i + batch_size]) for i in range(0, n, batch_size)]
