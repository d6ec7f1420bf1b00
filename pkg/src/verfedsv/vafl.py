"""Discrete-event simulation of asynchronous vertical FL (VAFL).

The server keeps the latest embedding of every (client, sample) pair. Each
client wakes up on its own period, draws a batch of ``tau`` samples, pushes
their embeddings, pulls the partial gradients computed from the server's
current (possibly stale) state and updates its local model. One wake-up is
atomic with respect to other events.

Time is virtual: every timestamp is converted to integer ticks of
``time_resolution`` seconds, so periods like 0.03 s and a valuation interval
of 0.01 s line up exactly. At each valuation timestamp the server state is
snapshotted after all client events due at or before that tick.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field

import numpy as np

from .data import VerticalDataset
from .files import write_csv
from .model import LocalModel, MultinomialLogistic, n_channels, total_embeddings
from .sync import DivergenceError
from .trace import EmbeddingTrace

_CLIENT, _SNAPSHOT = 0, 1


@dataclass
class ClientProfile:
    client_id: int
    tau: int
    period: float
    learning_rate: float = 1.0
    seed: int = 0
    participation: float = 1.0  # probability that a scheduled wake-up actually communicates
    offset: float | None = None  # first wake-up time; defaults to one period

    def __post_init__(self):
        if self.period <= 0:
            raise ValueError(f"client {self.client_id}: period must be > 0")
        if self.tau < 1:
            raise ValueError(f"client {self.client_id}: tau must be >= 1")
        if not 0.0 <= self.participation <= 1.0:
            raise ValueError(f"client {self.client_id}: participation must lie in [0, 1]")


@dataclass
class AsyncConfig:
    total_time: float
    valuation_interval: float
    profiles: list = field(default_factory=list)
    seed: int = 0
    time_resolution: float = 1e-9
    record_events: bool = True

    def ticks(self, seconds: float) -> int:
        return int(round(seconds / self.time_resolution))

    @property
    def n_valuations(self) -> int:
        total, step = self.ticks(self.total_time), self.ticks(self.valuation_interval)
        if step <= 0 or total % step:
            raise ValueError(
                f"valuation_interval={self.valuation_interval} must divide total_time={self.total_time}"
            )
        if total // step < 1:
            raise ValueError("need at least one valuation timestamp")
        return total // step


@dataclass
class Event:
    time: float
    client_id: int
    action: str  # "update" or "query"
    batch: np.ndarray


@dataclass
class ServerState:
    embeddings: np.ndarray  # (M, N, C)
    labels: np.ndarray

    @classmethod
    def zeros(cls, n_clients: int, labels, n_channels: int) -> "ServerState":
        labels = np.asarray(labels)
        return cls(np.zeros((n_clients, labels.shape[0], n_channels)), labels)

    def push(self, m: int, batch: np.ndarray, values: np.ndarray) -> None:
        self.embeddings[m, batch] = values

    def partial_gradient(self, batch: np.ndarray, loss) -> tuple[np.ndarray, np.ndarray]:
        h = self.embeddings[:, batch].sum(axis=0)
        return loss.loss(h, self.labels[batch]), loss.grad(h, self.labels[batch])


def uniform_profiles(n_clients: int, tau: int, period: float, learning_rate: float = 1.0, seed: int = 0):
    return [ClientProfile(m, tau, period, learning_rate, seed=seed * 1000 + m) for m in range(n_clients)]


def run_vafl(data: VerticalDataset, cfg: AsyncConfig, loss=None):
    """Simulate VAFL until ``cfg.total_time``.

    Returns ``(models, trace, loss_history, events)``. The trace is a delta
    trace whose snapshot ``t`` is the server state at valuation time ``t``
    (snapshot 0 is all zeros); ``loss_history[t]`` is the mean training loss
    of the current local models at that time.
    """
    loss = loss or MultinomialLogistic()
    M, N = data.n_clients, data.n_samples
    if len(cfg.profiles) != M:
        raise ValueError(f"{len(cfg.profiles)} profiles for {M} clients")
    C = n_channels(loss, data.n_classes)
    xs = [c.features for c in data.clients]
    models = [LocalModel.zeros(C, c.d_m) for c in data.clients]
    server = ServerState.zeros(M, data.labels, C)
    rngs = [np.random.default_rng(p.seed) for p in cfg.profiles]
    for p in cfg.profiles:
        if p.tau > N:
            raise ValueError(f"client {p.client_id}: tau={p.tau} exceeds N={N}")

    T = cfg.n_valuations
    step = cfg.ticks(cfg.valuation_interval)
    end = cfg.ticks(cfg.total_time)
    queue: list[tuple[int, int, int, int]] = []  # (tick, kind, client/round, seq)
    seq = 0
    for t in range(1, T + 1):
        heapq.heappush(queue, (t * step, _SNAPSHOT, t, seq))
        seq += 1
    wakeups = [0] * M
    for m, p in enumerate(cfg.profiles):
        first = cfg.ticks(p.period if p.offset is None else p.offset)
        if first <= end:
            heapq.heappush(queue, (first, _CLIENT, m, seq))
            seq += 1

    trace = EmbeddingTrace("delta", server.embeddings.copy())
    previous = server.embeddings.copy()
    norms = [[mdl.norm() for mdl in models]]
    history = [float(np.mean(loss.loss(total_embeddings(models, data), data.labels)))]
    events: list[Event] = []

    while queue:
        tick, kind, who, _ = heapq.heappop(queue)
        if kind == _SNAPSHOT:
            current = server.embeddings
            changed = [np.flatnonzero(np.any(current[m] != previous[m], axis=-1)) for m in range(M)]
            trace.append_round(changed, [current[m, idx] for m, idx in enumerate(changed)])
            previous = current.copy()
            norms.append([mdl.norm() for mdl in models])
            history.append(float(np.mean(loss.loss(total_embeddings(models, data), data.labels))))
            continue

        m, p = who, cfg.profiles[who]
        rng = rngs[m]
        wakeups[m] += 1
        nxt = cfg.ticks((p.offset if p.offset is not None else p.period) + wakeups[m] * p.period)
        if nxt <= end:
            heapq.heappush(queue, (nxt, _CLIENT, m, seq))
            seq += 1
        if p.participation < 1.0 and rng.random() >= p.participation:
            continue

        batch = np.sort(rng.choice(N, size=p.tau, replace=False))
        x_b = xs[m][batch]
        server.push(m, batch, x_b @ models[m].theta.T)
        batch_loss, g = server.partial_gradient(batch, loss)
        now = tick * cfg.time_resolution
        if not np.all(np.isfinite(batch_loss)):
            raise DivergenceError(f"non-finite loss at simulated time {now:.6g}s (client {m})")
        models[m].theta -= (p.learning_rate / len(batch)) * (g.T @ x_b)
        if cfg.record_events:
            events.append(Event(now, m, "update", batch))
            events.append(Event(now, m, "query", batch))

    trace.model_norms = np.asarray(norms)
    return models, trace, np.asarray(history), events


def snapshot_delta(s_prev: np.ndarray, s_curr: np.ndarray, m: int) -> np.ndarray:
    """Sorted sample indices whose embedding for client ``m`` differs between two snapshots."""
    s_prev, s_curr = np.asarray(s_prev), np.asarray(s_curr)
    if s_prev.shape != s_curr.shape:
        raise ValueError(f"snapshot shapes differ: {s_prev.shape} vs {s_curr.shape}")
    return np.flatnonzero(np.any(s_prev[m] != s_curr[m], axis=-1))


def write_event_log(path, events) -> None:
    rows = ([repr(e.time), e.client_id, e.action, " ".join(map(str, e.batch.tolist()))] for e in events)
    write_csv(path, ["time", "client_id", "action", "batch"], rows)
