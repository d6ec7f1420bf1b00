"""Datasets, vertical partitioning and synthetic clients.

A :class:`DenseDataset` is the centralized view (features plus labels); a
:class:`VerticalDataset` is the federated view, where each :class:`ClientData`
holds a column block of the same N rows and the labels stay with the server.
"""

from __future__ import annotations

import gzip
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np


class ParseError(ValueError):
    pass


class DimensionError(ValueError):
    pass


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class DenseDataset:
    features: np.ndarray
    labels: np.ndarray
    n_classes: int
    label_values: tuple = ()

    def __post_init__(self):
        x = np.asarray(self.features, dtype=float)
        y = np.asarray(self.labels, dtype=np.int64)
        if x.ndim != 2 or x.shape[0] < 1 or x.shape[1] < 1:
            raise DimensionError(f"features must be a non-empty 2-D matrix, got {x.shape}")
        if y.shape != (x.shape[0],):
            raise DimensionError(f"{y.shape[0]} labels for {x.shape[0]} rows")
        if not np.all(np.isfinite(x)):
            raise ValueError("features contain non-finite entries")
        if self.n_classes < 1 or y.min() < 0 or y.max() >= self.n_classes:
            raise ValueError(f"labels must lie in [0, {self.n_classes})")
        object.__setattr__(self, "features", _frozen(x))
        object.__setattr__(self, "labels", _frozen(y))

    @property
    def n_samples(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def subset(self, rows: np.ndarray) -> "DenseDataset":
        return DenseDataset(self.features[rows], self.labels[rows], self.n_classes, self.label_values)


@dataclass(frozen=True)
class ClientData:
    client_id: int
    features: np.ndarray
    zero_rows: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        x = np.asarray(self.features, dtype=float)
        if x.ndim != 2 or x.shape[1] < 1:
            raise DimensionError(f"client features must be N x d_m, got {x.shape}")
        object.__setattr__(self, "features", _frozen(x))

    @property
    def d_m(self) -> int:
        return self.features.shape[1]

    @property
    def n_samples(self) -> int:
        return self.features.shape[0]


@dataclass(frozen=True)
class VerticalDataset:
    clients: tuple
    labels: np.ndarray
    n_classes: int

    def __post_init__(self):
        clients = tuple(self.clients)
        y = np.asarray(self.labels, dtype=np.int64)
        if not clients:
            raise DimensionError("at least one client is required")
        for k, c in enumerate(clients):
            if c.client_id != k:
                raise ValueError(f"client ids must be 0..M-1 without gaps, got {c.client_id} at {k}")
            if c.n_samples != y.shape[0]:
                raise DimensionError(f"client {k} has {c.n_samples} rows, labels have {y.shape[0]}")
        if y.size and (y.min() < 0 or y.max() >= self.n_classes):
            raise ValueError(f"labels must lie in [0, {self.n_classes})")
        object.__setattr__(self, "clients", clients)
        object.__setattr__(self, "labels", _frozen(y))

    @classmethod
    def from_clients(cls, clients: Sequence[ClientData], labels, n_classes: int) -> "VerticalDataset":
        """Assemble clients in the given order, renumbering ids to 0..M-1."""
        return cls(tuple(replace(c, client_id=k) for k, c in enumerate(clients)), labels, n_classes)

    @property
    def n_clients(self) -> int:
        return len(self.clients)

    @property
    def n_samples(self) -> int:
        return self.labels.shape[0]

    @property
    def dims(self) -> list[int]:
        return [c.d_m for c in self.clients]

    def features(self) -> np.ndarray:
        """Column-wise reassembly of all client blocks."""
        return np.hstack([c.features for c in self.clients])

    def subset(self, rows: np.ndarray) -> "VerticalDataset":
        rows = np.asarray(rows)
        clients = tuple(replace(c, features=c.features[rows], zero_rows=None) for c in self.clients)
        return VerticalDataset(clients, self.labels[rows], self.n_classes)


def load_libsvm(path, expected_dim: int | None = None) -> DenseDataset:
    """Read a LIBSVM text file (optionally gzipped) into a dense dataset.

    Feature indices are 1-based in the file and 0-based in the result. Labels
    are remapped to 0..C-1 in ascending numeric order; the original values are
    kept in ``label_values``.
    """
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    raw_labels: list[float] = []
    rows: list[int] = []
    cols: list[int] = []
    vals: list[float] = []
    max_index = 0
    with opener(path, "rt") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            tokens = line.split()
            try:
                raw_labels.append(float(tokens[0]))
            except ValueError:
                raise ParseError(f"{path}:{lineno}: bad label {tokens[0]!r}") from None
            row = len(raw_labels) - 1
            for tok in tokens[1:]:
                idx, sep, val = tok.partition(":")
                try:
                    if not sep:
                        raise ValueError
                    k = int(idx)
                    v = float(val)
                except ValueError:
                    raise ParseError(f"{path}:{lineno}: bad feature token {tok!r}") from None
                if k < 1:
                    raise ParseError(f"{path}:{lineno}: feature index {k} is not 1-based")
                if expected_dim is not None and k > expected_dim:
                    raise DimensionError(
                        f"{path}:{lineno}: feature index {k} exceeds expected_dim={expected_dim}"
                    )
                rows.append(row)
                cols.append(k - 1)
                vals.append(v)
                max_index = max(max_index, k)
    if not raw_labels:
        raise ParseError(f"{path}: no samples")
    d = expected_dim if expected_dim is not None else max_index
    x = np.zeros((len(raw_labels), max(d, 1)))
    x[rows, cols] = vals
    label_values, labels = np.unique(np.asarray(raw_labels), return_inverse=True)
    return DenseDataset(x, labels, len(label_values), tuple(float(v) for v in label_values))


def partition_vertical(ds: DenseDataset, splits: Sequence[int], permutation_seed: int | None = None) -> VerticalDataset:
    """Split the feature columns into contiguous blocks, one per client.

    With ``permutation_seed`` the columns are shuffled (seeded) before splitting.
    """
    splits = [int(s) for s in splits]
    if any(s < 1 for s in splits):
        raise DimensionError(f"every split must be >= 1, got {splits}")
    if sum(splits) != ds.n_features:
        raise DimensionError(f"splits sum to {sum(splits)}, dataset has d={ds.n_features}")
    order = np.arange(ds.n_features)
    if permutation_seed is not None:
        order = np.random.default_rng(permutation_seed).permutation(ds.n_features)
    bounds = np.concatenate([[0], np.cumsum(splits)])
    clients = tuple(
        ClientData(m, ds.features[:, order[bounds[m]:bounds[m + 1]]]) for m in range(len(splits))
    )
    return VerticalDataset(clients, ds.labels, ds.n_classes)


def equal_splits(d: int, n_clients: int) -> list[int]:
    """Near-equal contiguous block sizes; the first ``d % M`` clients get one extra column."""
    base, extra = divmod(d, n_clients)
    return [base + (1 if m < extra else 0) for m in range(n_clients)]


def normalize_client_features(cd: ClientData) -> ClientData:
    """Rescale each nonzero row to unit Euclidean norm; zero rows are kept and flagged."""
    x = cd.features
    norms = np.linalg.norm(x, axis=1)
    zero = norms == 0
    scale = np.where(zero, 1.0, norms)
    return replace(cd, features=x / scale[:, None], zero_rows=_frozen(zero))


def make_noisy_clone(cd: ClientData, fraction: float, noise_std: float, seed: int) -> ClientData:
    """Copy of ``cd`` with Gaussian noise added to ``floor(fraction * d_m)`` random columns.

    The columns are a prefix of a seeded permutation and the noise matrix is
    drawn for all columns up front, so clones made with one seed are nested:
    a larger fraction perturbs a superset of columns with the same noise.
    """
    rng = np.random.default_rng(seed)
    k = math.floor(fraction * cd.d_m)
    order = rng.permutation(cd.d_m)
    noise = rng.normal(0.0, noise_std, size=cd.features.shape)
    x = np.array(cd.features)
    cols = order[:k]
    x[:, cols] += noise[:, cols]
    return replace(cd, features=x, zero_rows=None)


def make_random_client(n: int, d_m: int, mean: float, std: float, seed: int, client_id: int = 0) -> ClientData:
    if n < 1 or d_m < 1:
        raise DimensionError(f"need n, d_m >= 1, got {n}, {d_m}")
    rng = np.random.default_rng(seed)
    return ClientData(client_id, rng.normal(mean, std, size=(n, d_m)))


def train_test_split(ds: VerticalDataset, test_fraction: float, seed: int) -> tuple[VerticalDataset, VerticalDataset]:
    n = ds.n_samples
    perm = np.random.default_rng(seed).permutation(n)
    n_test = int(round(test_fraction * n))
    test_rows = np.sort(perm[:n_test])
    train_rows = np.sort(perm[n_test:])
    return ds.subset(train_rows), ds.subset(test_rows)


def subsample_rows(n: int, size: int, seed: int) -> np.ndarray:
    """Sorted seeded row subsample (all rows when ``size >= n``)."""
    if size >= n:
        return np.arange(n)
    return np.sort(np.random.default_rng(seed).choice(n, size=size, replace=False))
