"""Per-round utilities and the time-averaged Shapley value of each client.

Round ``t`` compares two embedding snapshots. A coalition ``S`` is credited
with the drop in mean loss obtained when its members switch from their
round ``t-1`` embeddings to their round ``t`` embeddings while everybody else
keeps the old ones::

    U_t(S) = mean_i f(sum_m h_i^m(t-1); y_i)
             - mean_i f(sum_{m in S} h_i^m(t) + sum_{m not in S} h_i^m(t-1); y_i)

A client's value is its Shapley value under ``U_t``, averaged over rounds.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .model import MultinomialLogistic

_CHUNK_ELEMS = 1 << 22


@dataclass
class ValuationResult:
    values: np.ndarray
    method: str  # "exact", "monte_carlo" or "exhaustive"
    K: int | None = None
    seed: int | None = None
    per_round_utilities: np.ndarray | None = None  # (T, 2^M) in exact mode
    error_bound: dict = field(default_factory=dict)
    utility_range: float | None = None

    @property
    def shares(self) -> np.ndarray:
        """Values as percentages of their sum."""
        total = float(np.sum(self.values))
        if total == 0:
            return np.zeros_like(self.values)
        return 100.0 * self.values / total


class UtilityEvaluator:
    """Evaluates ``U_t(S)`` from a sequence of ``(M, N, C)`` snapshots ``t = 0..T``.

    ``snapshots`` may be a ``(T+1, M, N, C)`` array or any indexable sequence
    (e.g. a lazy trace replay); rounds are cached one at a time.
    """

    def __init__(self, snapshots, labels, loss=None):
        self.snapshots = snapshots
        self.labels = np.asarray(labels)
        self.loss = loss or MultinomialLogistic()
        first = np.asarray(snapshots[0])
        if first.ndim != 3:
            raise ValueError(f"snapshots must be (M, N, C), got {first.shape}")
        if first.shape[1] != self.labels.shape[0]:
            raise ValueError(f"snapshots cover {first.shape[1]} samples, labels {self.labels.shape[0]}")
        self.n_clients, self.n_samples, self.n_channels = first.shape
        self.n_rounds = len(snapshots) - 1
        self._cached_t = None
        self._prev = None

    def round_terms(self, t: int):
        """``(base_total, deltas, base_loss)`` for round ``t``."""
        if not 1 <= t <= self.n_rounds:
            raise IndexError(f"round {t} outside 1..{self.n_rounds}")
        if self._cached_t != t:
            if self._prev is not None and self._prev[0] == t - 1:
                prev = self._prev[1]
            else:
                prev = np.asarray(self.snapshots[t - 1], dtype=float)
            curr = np.asarray(self.snapshots[t], dtype=float)
            base = prev.sum(axis=0)
            deltas = curr - prev
            base_loss = float(np.mean(self.loss.loss(base, self.labels)))
            self._terms = (base, deltas, base_loss)
            self._cached_t = t
            self._prev = (t, curr)
        return self._terms

    def mean_loss(self, h) -> np.ndarray:
        return np.mean(self.loss.loss(h, self.labels), axis=-1)

    def utility(self, t: int, S) -> float:
        base, deltas, base_loss = self.round_terms(t)
        members = sorted(set(int(m) for m in S))
        if not members:
            return 0.0
        if members[0] < 0 or members[-1] >= self.n_clients:
            raise ValueError(f"coalition {members} outside 0..{self.n_clients - 1}")
        mixed = base + deltas[members].sum(axis=0)
        return base_loss - float(self.mean_loss(mixed))

    def coalition_utilities(self, t: int, membership: np.ndarray) -> np.ndarray:
        """Utilities for a ``(B, M)`` 0/1 membership matrix."""
        base, deltas, base_loss = self.round_terms(t)
        membership = np.asarray(membership, dtype=float)
        flat = deltas.reshape(self.n_clients, -1)
        out = np.empty(membership.shape[0])
        step = max(1, _CHUNK_ELEMS // flat.shape[1])
        for lo in range(0, membership.shape[0], step):
            mixed = (membership[lo:lo + step] @ flat).reshape(-1, self.n_samples, self.n_channels) + base
            out[lo:lo + step] = base_loss - self.mean_loss(mixed)
        out[~membership.any(axis=1)] = 0.0
        return out

    def utility_table(self) -> np.ndarray:
        """``(T, 2^M)`` table; column ``k`` is the coalition whose members are the set bits of ``k``."""
        membership = coalition_membership(self.n_clients)
        return np.stack([self.coalition_utilities(t, membership) for t in range(1, self.n_rounds + 1)])


def coalition_membership(n_clients: int) -> np.ndarray:
    codes = np.arange(1 << n_clients)
    return ((codes[:, None] >> np.arange(n_clients)) & 1).astype(bool)


def shapley_weights(n_clients: int) -> np.ndarray:
    """Weight ``1 / (M * binom(M-1, |S|))`` for each coalition size ``|S| = 0..M-1``."""
    return np.array([1.0 / (n_clients * math.comb(n_clients - 1, k)) for k in range(n_clients)])


def shapley_from_table(table: np.ndarray, n_clients: int) -> np.ndarray:
    """Shapley values of the game whose coalition utilities are ``table`` (length ``2^M``)."""
    membership = coalition_membership(n_clients)
    sizes = membership.sum(axis=1)
    weights = shapley_weights(n_clients)
    codes = np.arange(1 << n_clients)
    values = np.empty(n_clients)
    for m in range(n_clients):
        without = codes[~membership[:, m]]
        values[m] = np.sum(weights[sizes[without]] * (table[without | (1 << m)] - table[without]))
    return values


def exact_verfedsv(evaluator: UtilityEvaluator, max_clients: int = 20, keep_table: bool = False) -> ValuationResult:
    """Exact values by enumerating all ``2^M`` coalitions in every round."""
    M = evaluator.n_clients
    if M > max_clients:
        raise ValueError(
            f"exact valuation enumerates 2^{M} coalitions per round; "
            f"M={M} exceeds the cap of {max_clients}, use mc_verfedsv instead"
        )
    table = evaluator.utility_table()
    mean_table = table.mean(axis=0)
    values = shapley_from_table(mean_table, M)
    return ValuationResult(
        values, "exact",
        per_round_utilities=table if keep_table else None,
        utility_range=float(mean_table.max() - mean_table.min()),
    )


def hoeffding_K(R: float, M: int, eps: float, delta: float) -> int:
    """Permutations needed so every estimate is within ``eps`` with probability ``1 - delta``."""
    if R == 0:
        return 0
    return math.ceil((2.0 * R**2 * M / eps**2) * math.log(2.0 * M / delta))


def hoeffding_eps(R: float, M: int, K: int, delta: float) -> float:
    """Accuracy implied by ``K`` permutations (inverse of :func:`hoeffding_K`)."""
    return math.sqrt(2.0 * R**2 * M * math.log(2.0 * M / delta) / K)


def _permutations(M: int, K: int, rng, antithetic: bool) -> np.ndarray:
    """``(K, M)`` uniform random orderings; with ``antithetic`` the second half reverses the first."""
    n = (K + 1) // 2 if antithetic else K
    perms = rng.permuted(np.tile(np.arange(M), (n, 1)), axis=1)
    if antithetic:
        perms = np.concatenate([perms, perms[:, ::-1]])[:K]
    return perms


def mc_verfedsv(evaluator: UtilityEvaluator, K: int | None = None, seed: int = 0,
                antithetic: bool = False, exhaustive: bool = False, delta: float = 0.05) -> ValuationResult:
    """Monte-Carlo values from ``K`` random client orderings shared across rounds.

    Each ordering is swept as a growing prefix, so one ordering costs ``M``
    loss evaluations per round. ``exhaustive=True`` uses all ``M!`` orderings
    instead of sampling.
    """
    M = evaluator.n_clients
    if exhaustive:
        perms = np.array(list(itertools.permutations(range(M))))
        method = "exhaustive"
    else:
        if K is None or K < 1:
            raise ValueError("K must be >= 1")
        perms = _permutations(M, K, np.random.default_rng(seed), antithetic)
        method = "monte_carlo"
    n_perm = perms.shape[0]
    T = evaluator.n_rounds
    totals = np.zeros(M)
    prefix_sum = np.zeros((n_perm, M))  # sum over rounds of U_t(prefix of length j+1)
    per_elem = M * evaluator.n_samples * evaluator.n_channels
    step = max(1, _CHUNK_ELEMS // per_elem)
    for t in range(1, T + 1):
        base, deltas, base_loss = evaluator.round_terms(t)
        for lo in range(0, n_perm, step):
            chunk = perms[lo:lo + step]
            mixed = base + np.cumsum(deltas[chunk], axis=1)  # (k, M, N, C)
            prefix = base_loss - evaluator.mean_loss(mixed)  # (k, M)
            marginal = np.diff(prefix, axis=1, prepend=0.0)
            totals += np.bincount(chunk.ravel(), weights=marginal.ravel(), minlength=M)
            prefix_sum[lo:lo + step] += prefix
    values = totals / (n_perm * T)
    prefix_mean = prefix_sum / T
    R = float(max(prefix_mean.max(), 0.0) - min(prefix_mean.min(), 0.0))
    bound = {"delta": delta}
    if not exhaustive and R > 0:
        bound["mc_eps"] = hoeffding_eps(R, M, n_perm, delta)
    return ValuationResult(values, method, K=n_perm, seed=None if exhaustive else seed,
                           error_bound=bound, utility_range=R)


def completion_epsilon(reports) -> tuple[float, str]:
    """Mean over clients of the completion max residual, preferring held-out residuals.

    Accepts fit reports or plain per-client residuals; returns ``(eps, source)``.
    """
    residuals, sources = [], set()
    for r in reports:
        if isinstance(r, (int, float, np.floating)):
            residuals.append(float(r))
            sources.add("given")
        elif getattr(r, "heldout_max_residual", None) is not None:
            residuals.append(r.heldout_max_residual)
            sources.add("heldout")
        else:
            residuals.append(r.max_residual)
            sources.add("observed")
    if not residuals:
        return 0.0, "none"
    return float(np.mean(residuals)), "+".join(sorted(sources))


def completion_error_budget(reports, G: float, strict: bool = False) -> float:
    """``2 G eps`` where eps is the mean per-client completion residual.

    ``strict=True`` multiplies by the number of clients, which is what the
    triangle inequality gives when every client's residual can add up inside
    one mixed embedding.
    """
    reports = list(reports)
    eps, _ = completion_epsilon(reports)
    budget = 2.0 * G * eps
    return budget * len(reports) if strict else budget
