"""Embedding traces recorded by the trainers.

A trace stores, for every valuation round ``t = 1..T`` and every client, a set
of sample indices with their embeddings, plus the complete row ``t = 0``.

Two readings of those entries exist:

``"observed"`` (synchronous training)
    entries are the only known values of row ``t``; everything else is
    missing and has to be filled by matrix completion.
``"delta"`` (asynchronous training)
    entries are the embeddings that *changed* since the previous snapshot;
    every other value carries forward, so each snapshot is fully known.

On disk a trace is a directory with ``trace.csv`` (``client_id,t,sample_id,
h_0..h_{C-1}``), ``labels.csv`` (``sample_id,label``) and ``meta.json``.
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .files import read_csv, read_json, write_csv, write_json

KINDS = ("observed", "delta")


class TraceSchemaError(ValueError):
    pass


@dataclass
class EmbeddingTrace:
    kind: str
    initial: np.ndarray  # (M, N, C), row t = 0
    indices: list = field(default_factory=list)  # indices[t-1][m] -> int array
    values: list = field(default_factory=list)  # values[t-1][m] -> (k, C) array
    model_norms: np.ndarray | None = None  # (T+1, M)
    full: np.ndarray | None = None  # optional ground truth (T+1, M, N, C)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"trace kind must be one of {KINDS}, got {self.kind!r}")

    @property
    def n_clients(self) -> int:
        return self.initial.shape[0]

    @property
    def n_samples(self) -> int:
        return self.initial.shape[1]

    @property
    def n_channels(self) -> int:
        return self.initial.shape[2]

    @property
    def n_rounds(self) -> int:
        return len(self.indices)

    def append_round(self, indices, values) -> None:
        self.indices.append([np.asarray(i, dtype=np.int64) for i in indices])
        self.values.append([np.asarray(v, dtype=float) for v in values])

    def observed_mask(self) -> np.ndarray:
        """Boolean ``(M, T, N)`` array, true where round ``t >= 1`` recorded an entry."""
        mask = np.zeros((self.n_clients, self.n_rounds, self.n_samples), dtype=bool)
        for t, per_client in enumerate(self.indices):
            for m, idx in enumerate(per_client):
                mask[m, t, idx] = True
        return mask

    def observations(self, m: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Triplets for client ``m``: 0-based round rows (t-1), sample ids, ``(k, C)`` values."""
        rows = [np.full(len(per_client[m]), t, dtype=np.int64) for t, per_client in enumerate(self.indices)]
        cols = [per_client[m] for per_client in self.indices]
        vals = [per_client[m] for per_client in self.values]
        if not rows:
            return np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros((0, self.n_channels))
        return np.concatenate(rows), np.concatenate(cols), np.concatenate(vals).reshape(-1, self.n_channels)

    def is_fully_observed(self) -> bool:
        return bool(self.observed_mask().all()) if self.n_rounds else True

    def snapshots(self) -> "SnapshotSequence":
        """Full per-round states ``(M, N, C)`` for t = 0..T.

        Needs a delta trace, or an observed trace where every entry was seen.
        """
        if self.kind == "observed" and not self.is_fully_observed():
            raise ValueError("observed trace has missing entries; complete it first")
        return SnapshotSequence(self)

    def dense(self) -> np.ndarray:
        """``(T+1, M, N, C)`` array; unobserved entries of an observed trace are NaN."""
        if self.kind == "delta":
            return np.stack(list(self.snapshots()))
        out = np.full((self.n_rounds + 1,) + self.initial.shape, np.nan)
        out[0] = self.initial
        for t, (per_idx, per_val) in enumerate(zip(self.indices, self.values), start=1):
            for m, (idx, val) in enumerate(zip(per_idx, per_val)):
                out[t, m, idx] = val
        return out


class SnapshotSequence(Sequence):
    """Lazy ``t -> (M, N, C)`` view that replays a trace; sequential access is O(1) per step."""

    def __init__(self, trace: EmbeddingTrace):
        self._trace = trace
        self._t = 0
        self._state = np.array(trace.initial, dtype=float)

    def __len__(self) -> int:
        return self._trace.n_rounds + 1

    def __getitem__(self, t):
        if isinstance(t, slice):
            return [self[k] for k in range(*t.indices(len(self)))]
        if t < 0:
            t += len(self)
        if not 0 <= t < len(self):
            raise IndexError(t)
        if t < self._t:
            self._t = 0
            self._state = np.array(self._trace.initial, dtype=float)
        while self._t < t:
            idx_t = self._trace.indices[self._t]
            val_t = self._trace.values[self._t]
            for m in range(self._trace.n_clients):
                self._state[m, idx_t[m]] = val_t[m]
            self._t += 1
        return self._state.copy()


def trace_rows(trace: EmbeddingTrace):
    """CSV rows ``client_id, t, sample_id, h...`` in (t, client, sample) order."""
    C = trace.n_channels
    for m in range(trace.n_clients):
        for i, h in enumerate(trace.initial[m].tolist()):
            yield [m, 0, i, *h]
    for t, (per_idx, per_val) in enumerate(zip(trace.indices, trace.values), start=1):
        for m in range(trace.n_clients):
            order = np.argsort(per_idx[m], kind="stable")
            idx = per_idx[m][order].tolist()
            vals = per_val[m].reshape(-1, C)[order].tolist()
            for i, h in zip(idx, vals):
                yield [m, t, i, *h]


def write_trace(trace: EmbeddingTrace, directory, labels, extra_meta: dict | None = None) -> Path:
    directory = Path(directory)
    C = trace.n_channels
    header = ["client_id", "t", "sample_id"] + [f"h_{c}" for c in range(C)]
    write_csv(directory / "trace.csv", header, trace_rows(trace))
    write_csv(directory / "labels.csv", ["sample_id", "label"], enumerate(np.asarray(labels).tolist()))
    meta = {
        "kind": trace.kind,
        "n_clients": trace.n_clients,
        "n_samples": trace.n_samples,
        "n_channels": C,
        "n_rounds": trace.n_rounds,
        "model_norms": None if trace.model_norms is None else np.asarray(trace.model_norms).tolist(),
    }
    meta.update(extra_meta or {})
    write_json(directory / "meta.json", meta)
    return directory


def read_trace(directory) -> tuple[EmbeddingTrace, np.ndarray, dict]:
    """Load a trace directory; returns ``(trace, labels, meta)``."""
    directory = Path(directory)
    try:
        meta = read_json(directory / "meta.json")
        M, N, C, T = (int(meta[k]) for k in ("n_clients", "n_samples", "n_channels", "n_rounds"))
        kind = meta["kind"]
    except (OSError, KeyError, ValueError) as exc:
        raise TraceSchemaError(f"{directory}: unreadable meta.json ({exc})") from exc
    header, rows = read_csv(directory / "trace.csv")
    expected = ["client_id", "t", "sample_id"] + [f"h_{c}" for c in range(C)]
    if header != expected:
        raise TraceSchemaError(f"{directory / 'trace.csv'}: header {header} != {expected}")
    _, label_rows = read_csv(directory / "labels.csv")
    labels = np.array([int(r[1]) for r in label_rows], dtype=np.int64)
    if labels.shape[0] != N:
        raise TraceSchemaError(f"{directory}: {labels.shape[0]} labels for n_samples={N}")

    initial = np.full((M, N, C), np.nan)
    buckets: list[list[list]] = [[[] for _ in range(M)] for _ in range(T)]
    for lineno, row in enumerate(rows, start=2):
        if len(row) != 3 + C:
            raise TraceSchemaError(f"trace.csv:{lineno}: expected {3 + C} fields, got {len(row)}")
        m, t, i = int(row[0]), int(row[1]), int(row[2])
        if not (0 <= m < M and 0 <= t <= T and 0 <= i < N):
            raise TraceSchemaError(f"trace.csv:{lineno}: index out of range ({m}, {t}, {i})")
        h = [float(v) for v in row[3:]]
        if t == 0:
            initial[m, i] = h
        else:
            buckets[t - 1][m].append((i, h))
    if np.isnan(initial).any():
        raise TraceSchemaError(f"{directory}: row t=0 is incomplete")

    trace = EmbeddingTrace(kind, initial)
    for per_client in buckets:
        trace.append_round(
            [np.array([i for i, _ in b], dtype=np.int64) for b in per_client],
            [np.array([h for _, h in b], dtype=float).reshape(-1, C) for b in per_client],
        )
    if meta.get("model_norms") is not None:
        trace.model_norms = np.asarray(meta["model_norms"], dtype=float)
    return trace, labels, meta
