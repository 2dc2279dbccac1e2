"""Datasets and their on-disk formats.

Two formats are supported:

* CSV, one observation per row, float columns, optional header line.
* A binary dump: magic ``b"HVID"``, little-endian ``u32 N``, ``u32 d``, then
  ``N * d`` little-endian float64 values in row-major order.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"HVID"
_HEADER = struct.Struct("<4sII")


class ConfigurationError(ValueError):
    """Raised when shapes or settings are inconsistent."""


class DomainError(ValueError):
    """Raised when a value lies outside the domain of an operation."""


@dataclass(frozen=True, eq=False)
class Dataset:
    """An immutable ``(N, d)`` block of observations with cached moments.

    The mean and the centred sum of squares are computed once so the
    Gaussian model can evaluate its joint and gradients in O(d).
    """

    rows: np.ndarray
    mean: np.ndarray = field(init=False, repr=False)
    scatter: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        rows = np.array(self.rows, dtype=float, copy=True)
        if rows.ndim == 1:
            rows = rows[:, None]
        if rows.ndim != 2:
            raise ConfigurationError("dataset rows must form a 2-D array")
        rows.setflags(write=False)
        object.__setattr__(self, "rows", rows)
        if rows.shape[0] == 0:
            mean = np.zeros(rows.shape[1])
            scatter = np.zeros(rows.shape[1])
        else:
            mean = rows.mean(axis=0)
            scatter = ((rows - mean) ** 2).sum(axis=0)
        mean.setflags(write=False)
        scatter.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "scatter", scatter)

    @property
    def n(self) -> int:
        return self.rows.shape[0]

    @property
    def dim(self) -> int:
        return self.rows.shape[1]

    def __len__(self):
        return self.n

    def subset(self, index) -> "Dataset":
        return Dataset(self.rows[index])

    def checksum(self) -> str:
        import hashlib

        return hashlib.sha256(self.rows.astype("<f8").tobytes()).hexdigest()


def read_csv(path) -> Dataset:
    path = Path(path)
    with path.open("r", encoding="utf-8") as fh:
        first = fh.readline()
    skip = 0
    try:
        [float(v) for v in first.strip().split(",") if v.strip()]
    except ValueError:
        skip = 1
    rows = np.loadtxt(path, delimiter=",", skiprows=skip, ndmin=2)
    return Dataset(rows)


def write_csv(data: Dataset, path) -> None:
    header = ",".join(f"x{j}" for j in range(data.dim))
    np.savetxt(path, data.rows, delimiter=",", header=header, comments="", fmt="%.17g")


def write_binary(data: Dataset, path) -> None:
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, data.n, data.dim))
        fh.write(np.ascontiguousarray(data.rows, dtype="<f8").tobytes())


def read_binary(path) -> Dataset:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise ConfigurationError(f"{path}: truncated header")
    magic, n, d = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise ConfigurationError(f"{path}: bad magic {magic!r}")
    body = raw[_HEADER.size:]
    if len(body) != 8 * n * d:
        raise ConfigurationError(f"{path}: expected {n * d} values, found {len(body) // 8}")
    rows = np.frombuffer(body, dtype="<f8").reshape(n, d)
    return Dataset(rows)


def load(path) -> Dataset:
    """Read a dataset, choosing the format from the file contents."""
    with open(path, "rb") as fh:
        head = fh.read(4)
    if head == MAGIC:
        return read_binary(path)
    return read_csv(path)
