"""Datasets, device partitions, synthetic generation and CSV ingestion.

Local datasets are row ranges into one global matrix; the selection matrices
of the federated setup are never materialized.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from scfl import rng as rngs


class DataError(ValueError):
    """Malformed dataset input (bad CSV, shape mismatch, non-finite values)."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self) -> None:
        X = np.asarray(self.features, dtype=np.float64)
        Y = np.asarray(self.labels, dtype=np.float64)
        if X.ndim != 2 or Y.ndim != 2:
            raise DataError("features and labels must be 2-D matrices")
        if X.shape[0] != Y.shape[0]:
            raise DataError(f"row count mismatch: {X.shape[0]} features vs {Y.shape[0]} labels")
        if X.shape[0] < 1 or X.shape[1] < 1 or Y.shape[1] < 1:
            raise DataError(f"empty dataset: X{X.shape}, Y{Y.shape}")
        if not (np.isfinite(X).all() and np.isfinite(Y).all()):
            raise DataError("dataset contains non-finite values")
        object.__setattr__(self, "features", _frozen(X))
        object.__setattr__(self, "labels", _frozen(Y))

    @property
    def m(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    @property
    def o(self) -> int:
        return self.labels.shape[1]

    def rows(self, index) -> "Dataset":
        return Dataset(self.features[index], self.labels[index])


@dataclass(frozen=True)
class DevicePartition:
    """Disjoint, ordered, contiguous row ranges covering ``[0, m)``."""

    row_ranges: tuple[tuple[int, int], ...]
    m: int = field(default=-1)

    def __post_init__(self) -> None:
        ranges = tuple((int(a), int(b)) for a, b in self.row_ranges)
        if not ranges:
            raise DataError("partition needs at least one device")
        m = ranges[-1][1] if self.m < 0 else int(self.m)
        expected = 0
        for i, (start, stop) in enumerate(ranges):
            if start != expected:
                raise DataError(f"device {i} range starts at {start}, expected {expected}")
            if stop <= start:
                raise DataError(f"device {i} has an empty range [{start}, {stop})")
            expected = stop
        if expected != m:
            raise DataError(f"ranges cover [0, {expected}) but m = {m}")
        object.__setattr__(self, "row_ranges", ranges)
        object.__setattr__(self, "m", m)

    @property
    def device_count(self) -> int:
        return len(self.row_ranges)

    @property
    def sizes(self) -> tuple[int, ...]:
        return tuple(b - a for a, b in self.row_ranges)

    def local(self, ds: Dataset, i: int) -> tuple[np.ndarray, np.ndarray]:
        """Read-only views ``(X_i, Y_i)`` of device ``i``'s rows."""
        if ds.m != self.m:
            raise DataError(f"partition covers {self.m} rows, dataset has {ds.m}")
        a, b = self.row_ranges[i]
        return ds.features[a:b], ds.labels[a:b]


@dataclass(frozen=True)
class LabelSortSpec:
    shards_per_device: int = 1

    def __post_init__(self) -> None:
        if self.shards_per_device < 1:
            raise DataError("shards_per_device must be >= 1")


def normalize(ds: Dataset) -> Dataset:
    """Scale all features by ``1 / max|X_ij|`` so every entry lies in [-1, 1]."""
    peak = float(np.max(np.abs(ds.features)))
    if peak == 0.0:
        raise DataError("cannot normalize an all-zero feature matrix")
    if peak == 1.0:
        return ds
    return Dataset(ds.features / peak, ds.labels)


def generate_synthetic(seed: int, m: int, d: int, o: int, noise_std: float = 0.0) -> Dataset:
    """Linear-regression data with uniform features and a seeded ground-truth model.

    Features are uniform on [-1, 1] and then normalized; labels are
    ``X @ W_true + N(0, noise_std^2)``.  ``W_true`` is standard normal and can
    be recovered with :func:`true_model`.
    """
    if m < 1 or d < 1 or o < 1:
        raise DataError(f"m, d, o must be >= 1, got {(m, d, o)}")
    if noise_std < 0:
        raise DataError("noise_std must be non-negative")
    gen = rngs.stream(seed, rngs.DATA)
    X = gen.uniform(-1.0, 1.0, size=(m, d))
    X = X / np.max(np.abs(X))
    W_true = true_model(seed, d, o)
    Y = X @ W_true
    if noise_std > 0:
        Y = Y + gen.normal(0.0, noise_std, size=(m, o))
    return Dataset(X, Y)


def true_model(seed: int, d: int, o: int) -> np.ndarray:
    """The ground-truth weights used by :func:`generate_synthetic` for ``seed``."""
    return rngs.stream(seed, rngs.DATA, 1).standard_normal((d, o))


def train_test_split(ds: Dataset, m_train: int) -> tuple[Dataset, Dataset]:
    """First ``m_train`` rows for training, the rest for testing (no shuffling)."""
    if not 1 <= m_train < ds.m:
        raise DataError(f"m_train must be in [1, {ds.m - 1}], got {m_train}")
    return ds.rows(slice(0, m_train)), ds.rows(slice(m_train, ds.m))


def partition_even(m: int, n_devices: int) -> DevicePartition:
    """Contiguous split into ``n_devices`` near-equal ranges (IID order assumed)."""
    if not 1 <= n_devices <= m:
        raise DataError(f"need 1 <= N <= m, got N={n_devices}, m={m}")
    bounds = [round(i * m / n_devices) for i in range(n_devices + 1)]
    return DevicePartition(tuple(zip(bounds[:-1], bounds[1:])), m)


def partition_noniid(
    ds: Dataset, n_devices: int, spec: LabelSortSpec | None = None, seed: int = 0
) -> tuple[Dataset, DevicePartition]:
    """Label-sorted shard split.

    Rows are sorted by the first label column (ties by original index) and cut
    into ``N * shards_per_device`` equal shards, the last shard taking any
    remainder.  Shards are dealt to devices through a seeded permutation.

    Returns a *reordered copy* of the dataset in which each device's shards are
    adjacent, together with the partition over that reordered copy.
    """
    spec = spec or LabelSortSpec()
    if n_devices > ds.m:
        raise DataError(f"cannot split {ds.m} rows across {n_devices} devices")
    if n_devices < 1:
        raise DataError("need at least one device")
    n_shards = n_devices * spec.shards_per_device
    if n_shards > ds.m:
        raise DataError(f"{n_shards} shards exceed {ds.m} rows")
    order = np.lexsort((np.arange(ds.m), ds.labels[:, 0]))
    size = ds.m // n_shards
    cuts = [i * size for i in range(n_shards)] + [ds.m]
    shards = [order[cuts[s]:cuts[s + 1]] for s in range(n_shards)]
    perm = rngs.stream(seed, rngs.PARTITION).permutation(n_shards)

    new_order = []
    ranges = []
    start = 0
    for dev in range(n_devices):
        mine = perm[dev * spec.shards_per_device:(dev + 1) * spec.shards_per_device]
        rows = np.concatenate([shards[s] for s in mine])
        new_order.append(rows)
        ranges.append((start, start + len(rows)))
        start += len(rows)
    new_order = np.concatenate(new_order)
    return ds.rows(new_order), DevicePartition(tuple(ranges), ds.m)


# --------------------------------------------------------------------------- CSV


def csv_header(d: int, o: int) -> list[str]:
    return [f"f{j}" for j in range(d)] + [f"y{j}" for j in range(o)]


def save_csv(ds: Dataset, path: str | Path) -> None:
    """Write ``f0..f{d-1},y0..y{o-1}`` rows; floats use round-trip ``repr``."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(csv_header(ds.d, ds.o))
        for x, y in zip(ds.features, ds.labels):
            w.writerow([repr(float(v)) for v in x] + [repr(float(v)) for v in y])


def load_csv(path: str | Path, d: int, o: int) -> Dataset:
    """Load a pre-featurized dataset; errors name the offending row/column."""
    expected = csv_header(d, o)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DataError(f"{path}: empty file")
        header = [h.strip() for h in header]
        for j, name in enumerate(header):
            if j >= len(expected):
                raise DataError(f"{path}: unexpected extra column {name!r} at position {j}")
            if name != expected[j]:
                raise DataError(f"{path}: column {j} is {name!r}, expected {expected[j]!r}")
        if len(header) < len(expected):
            raise DataError(f"{path}: missing column {expected[len(header)]!r}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(expected):
                raise DataError(f"{path}: row {lineno} has {len(row)} cells, expected {len(expected)}")
            values = []
            for j, cell in enumerate(row):
                try:
                    v = float(cell)
                except ValueError:
                    raise DataError(
                        f"{path}: row {lineno}, column {expected[j]!r}: non-numeric value {cell!r}"
                    ) from None
                if not math.isfinite(v):
                    raise DataError(f"{path}: row {lineno}, column {expected[j]!r}: non-finite value")
                values.append(v)
            rows.append(values)
    if not rows:
        raise DataError(f"{path}: no data rows")
    arr = np.array(rows, dtype=np.float64)
    return Dataset(arr[:, :d], arr[:, d:])
