"""Synchronous vertical FL training (FedSGD).

Every round the server draws one mini-batch, each client uploads the batch
embeddings computed with its current model, the server returns the partial
gradients ``g_i = df(h_i; y_i)/dh_i`` and every client takes a local step.
The uploaded embeddings form a partially observed :class:`EmbeddingTrace`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import VerticalDataset
from .model import LocalModel, MultinomialLogistic, n_channels, total_embeddings
from .trace import EmbeddingTrace


class DivergenceError(RuntimeError):
    pass


@dataclass
class SyncConfig:
    rounds: int
    batch_size: int
    learning_rate: float = 1.0
    schedule: str = "constant"  # or "one_over_t": eta_t = learning_rate / t
    seed: int = 0
    l2: float = 0.0
    eval_every: int = 1  # full-training-set loss cadence; 0 disables
    record_full: bool = False  # keep every sample's embedding per round (diagnostics)

    def __post_init__(self):
        if self.rounds < 0:
            raise ValueError("rounds must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.schedule not in ("constant", "one_over_t"):
            raise ValueError(f"unknown schedule {self.schedule!r}")

    def eta(self, t: int) -> float:
        return self.learning_rate / t if self.schedule == "one_over_t" else self.learning_rate


def batch_from_budgets(taus) -> int:
    """Largest batch every client can upload in one round (the minimum budget)."""
    return int(min(taus))


def run_fedsgd(data: VerticalDataset, cfg: SyncConfig, loss=None):
    """Train for ``cfg.rounds`` rounds.

    Returns ``(models, trace, loss_history)``; ``loss_history[k]`` is the mean
    training loss after ``k * eval_every`` rounds (entry 0 is the initial loss).
    Round ``t`` of the trace holds the batch embeddings uploaded in round ``t``,
    i.e. computed with the model after ``t - 1`` updates.
    """
    loss = loss or MultinomialLogistic()
    N, M = data.n_samples, data.n_clients
    if cfg.batch_size > N:
        raise ValueError(f"batch_size={cfg.batch_size} exceeds N={N}")
    C = n_channels(loss, data.n_classes)
    y = data.labels
    xs = [c.features for c in data.clients]
    models = [LocalModel.zeros(C, c.d_m) for c in data.clients]
    rng = np.random.default_rng(cfg.seed)

    trace = EmbeddingTrace("observed", np.stack([x @ mdl.theta.T for x, mdl in zip(xs, models)]))
    norms = [[mdl.norm() for mdl in models]]
    full = [trace.initial.copy()] if cfg.record_full else None
    history = [float(np.mean(loss.loss(total_embeddings(models, data), y)))]

    for t in range(1, cfg.rounds + 1):
        batch = np.sort(rng.choice(N, size=cfg.batch_size, replace=False))
        emb = [x[batch] @ mdl.theta.T for x, mdl in zip(xs, models)]
        if full is not None:
            full.append(np.stack([x @ mdl.theta.T for x, mdl in zip(xs, models)]))
        h = np.sum(emb, axis=0)
        batch_loss = loss.loss(h, y[batch])
        if not np.all(np.isfinite(batch_loss)):
            raise DivergenceError(f"non-finite loss in round {t}")
        g = loss.grad(h, y[batch])  # (B, C)
        step = cfg.eta(t) / len(batch)
        for x, mdl in zip(xs, models):
            update = g.T @ x[batch]
            if cfg.l2:
                update = update + cfg.l2 * len(batch) * mdl.theta
            mdl.theta -= step * update
        trace.append_round([batch] * M, emb)
        norms.append([mdl.norm() for mdl in models])
        if cfg.eval_every and t % cfg.eval_every == 0:
            value = float(np.mean(loss.loss(total_embeddings(models, data), y)))
            if not np.isfinite(value):
                raise DivergenceError(f"non-finite training loss after round {t}")
            history.append(value)

    trace.model_norms = np.asarray(norms)
    if full is not None:
        trace.full = np.stack(full)
    return models, trace, np.asarray(history)


def observed_mask(trace: EmbeddingTrace) -> np.ndarray:
    """``(M, T, N)`` mask of embeddings recorded in rounds ``1..T``."""
    return trace.observed_mask()
