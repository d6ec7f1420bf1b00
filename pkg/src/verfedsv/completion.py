"""Low-rank completion of partially observed embedding matrices.

For each client (and each class channel) the ``T x N`` matrix of embeddings
is fitted as ``W @ H.T`` by minimizing::

    sum_{(t, i) observed} (A[t, i] - w_t . h_i)^2 + lam * (||W||_F^2 + ||H||_F^2)

with alternating ridge least squares. Each half-sweep solves every row of
``W`` (then of ``H``) exactly, so the objective never increases.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .trace import EmbeddingTrace

log = logging.getLogger(__name__)

_BLOCK = 2048


class CompletionError(RuntimeError):
    pass


@dataclass
class CompletionConfig:
    rank: int | None = None  # None: derived from rank_bound per client
    reg: float = 1e-2
    max_iters: int = 200
    tol: float = 1e-6
    seed: int = 0
    rank_cap: int = 50

    def __post_init__(self):
        if self.rank is not None and self.rank < 1:
            raise ValueError("rank must be >= 1")
        if self.tol <= 0:
            raise ValueError("tol must be > 0")
        if self.reg < 0:
            raise ValueError("reg must be >= 0")


@dataclass
class CompletionFit:
    W: np.ndarray  # (T, r)
    H: np.ndarray  # (N, r)
    objective: list = field(default_factory=list)
    observed_rmse: float = 0.0
    max_residual: float = 0.0
    converged: bool = False

    def reconstruct(self) -> np.ndarray:
        return self.W @ self.H.T


def _objective(values, mask, W, H, reg):
    resid = np.where(mask, values - W @ H.T, 0.0)
    return float(np.sum(resid**2) + reg * (np.sum(W**2) + np.sum(H**2)))


def _ridge_rows(values, mask, F, reg):
    """Solve, for every row ``a`` of ``values``, min ||mask_a * (a - G f)||^2 + reg ||f||^2."""
    n, r = values.shape[0], F.shape[1]
    out = np.empty((n, r))
    eye = reg * np.eye(r)
    outer = (F[:, :, None] * F[:, None, :]).reshape(F.shape[0], r * r)
    for lo in range(0, n, _BLOCK):
        m = mask[lo:lo + _BLOCK].astype(float)
        gram = (m @ outer).reshape(-1, r, r) + eye
        rhs = (m * values[lo:lo + _BLOCK]) @ F
        try:
            out[lo:lo + _BLOCK] = np.linalg.solve(gram, rhs[..., None])[..., 0]
        except np.linalg.LinAlgError as exc:
            raise CompletionError(
                "singular ridge system: a row or column has no observations and reg=0"
            ) from exc
    return out


def complete_matrix(rows, cols, vals, shape, rank: int, reg: float = 1e-2, max_iters: int = 200,
                    tol: float = 1e-6, seed: int = 0) -> CompletionFit:
    """Fit a rank-``rank`` factorization to the observed entries ``(rows[k], cols[k]) -> vals[k]``."""
    T, N = shape
    rows, cols = np.asarray(rows, dtype=np.int64), np.asarray(cols, dtype=np.int64)
    vals = np.asarray(vals, dtype=float)
    mask = np.zeros(shape, dtype=bool)
    values = np.zeros(shape)
    mask[rows, cols] = True
    values[rows, cols] = vals

    empty_rows = int(np.sum(~mask.any(axis=1)))
    empty_cols = int(np.sum(~mask.any(axis=0)))
    if empty_rows or empty_cols:
        if reg == 0:
            raise CompletionError(
                f"{empty_rows} empty rows / {empty_cols} empty columns cannot be solved with reg=0"
            )
        warnings.warn(
            f"{empty_rows} rows and {empty_cols} columns have no observations; "
            "their factors are set by the regularizer alone",
            stacklevel=2,
        )

    rng = np.random.default_rng(seed)
    scale = 1.0 / math.sqrt(rank)
    W = rng.normal(0.0, scale, size=(T, rank))
    H = rng.normal(0.0, scale, size=(N, rank))
    objective = [_objective(values, mask, W, H, reg)]
    converged = False
    for _ in range(max_iters):
        W = _ridge_rows(values, mask, H, reg)
        H = _ridge_rows(values.T, mask.T, W, reg)
        objective.append(_objective(values, mask, W, H, reg))
        prev, cur = objective[-2], objective[-1]
        if prev - cur <= tol * max(prev, np.finfo(float).tiny):
            converged = True
            break

    resid = np.abs(values - W @ H.T)[mask]
    return CompletionFit(
        W, H, objective,
        observed_rmse=float(np.sqrt(np.mean(resid**2))) if resid.size else 0.0,
        max_residual=float(resid.max()) if resid.size else 0.0,
        converged=converged,
    )


def approx_epsilon_rank(matrix, eps: float) -> int:
    """Number of singular values that are at least ``eps`` times the largest one."""
    s = np.linalg.svd(np.asarray(matrix, dtype=float), compute_uv=False)
    if s.size == 0 or s[0] == 0:
        return 0
    return int(np.sum(s >= eps * s[0]))


def rank_bound(d_m: int, L: float, T: int, eps: float) -> int:
    """``min(d_m, ceil(L ln T / eps))``: the data-dimension and drift terms of the rank bound."""
    if eps <= 0:
        raise ValueError("eps must be > 0")
    return int(min(d_m, math.ceil(L * math.log(T) / eps)))


def default_rank(d_m: int, T: int, N: int, cap: int = 50) -> int:
    return max(1, min(rank_bound(d_m, 1.0, max(T, 1), 0.1), T, N, cap))


@dataclass
class ClientFitReport:
    client_id: int
    rank: int
    observed_rmse: float
    max_residual: float  # observed entries, Euclidean norm across channels
    heldout_max_residual: float | None = None
    iterations: int = 0
    converged: bool = True


@dataclass
class CompletedEmbeddings:
    fits: list  # fits[m][c] -> CompletionFit
    history: np.ndarray  # (T+1, M, N, C): row 0 plus completed rounds, observed entries exact
    reports: list  # ClientFitReport per client

    def snapshots(self) -> np.ndarray:
        return self.history


def complete_trace(trace: EmbeddingTrace, cfg: CompletionConfig | None = None, dims=None) -> CompletedEmbeddings:
    """Complete every client's embedding matrix, one channel at a time.

    ``dims`` (per-client feature dimensions) sets the default rank when
    ``cfg.rank`` is None. Observed entries are copied back over the low-rank
    reconstruction. If the trace carries ground truth (``trace.full``), the
    reports also give the max residual over all entries.
    """
    cfg = cfg or CompletionConfig()
    if trace.kind != "observed":
        raise ValueError("only observed (synchronous) traces need completion")
    T, M, N, C = trace.n_rounds, trace.n_clients, trace.n_samples, trace.n_channels
    history = np.empty((T + 1, M, N, C))
    history[0] = trace.initial
    fits, reports = [], []
    for m in range(M):
        if cfg.rank is not None:
            r = cfg.rank
        else:
            d_m = dims[m] if dims is not None else cfg.rank_cap
            r = default_rank(d_m, T, N, cfg.rank_cap)
        rows, cols, vals = trace.observations(m)
        per_channel = []
        for c in range(C):
            fit = complete_matrix(rows, cols, vals[:, c], (T, N), r, cfg.reg, cfg.max_iters, cfg.tol, cfg.seed)
            history[1:, m, :, c] = fit.reconstruct()
            per_channel.append(fit)
        recon = history[1:, m].copy()
        history[1 + rows, m, cols] = vals
        resid = np.linalg.norm(recon[rows, cols] - vals, axis=-1) if rows.size else np.zeros(0)
        heldout = None
        if trace.full is not None:
            heldout = float(np.max(np.linalg.norm(history[1:, m] - trace.full[1:, m], axis=-1)))
        reports.append(ClientFitReport(
            m, r,
            observed_rmse=float(np.sqrt(np.mean(resid**2))) if resid.size else 0.0,
            max_residual=float(resid.max()) if resid.size else 0.0,
            heldout_max_residual=heldout,
            iterations=max(len(f.objective) - 1 for f in per_channel),
            converged=all(f.converged for f in per_channel),
        ))
        log.info("client %d: rank %d, observed RMSE %.3g, max residual %.3g", m, r,
                 reports[-1].observed_rmse, reports[-1].max_residual)
        fits.append(per_channel)
    return CompletedEmbeddings(fits, history, reports)
