"""End-to-end pipeline: prepare clients, train, complete, value, tabulate.

The CLI is a thin layer over these functions; presets are plain config
dictionaries merged under the user's config.
"""

from __future__ import annotations

import copy
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .completion import CompletedEmbeddings, approx_epsilon_rank, complete_trace, rank_bound
from .config import ClientSpec, ConfigError, ExperimentConfig, config_from_dict
from .data import (
    VerticalDataset,
    equal_splits,
    load_libsvm,
    make_noisy_clone,
    make_random_client,
    normalize_client_features,
    partition_vertical,
    subsample_rows,
)
from .model import accuracy, get_loss, lipschitz_G, log_prior_offset, mean_loss
from .shapley import (
    UtilityEvaluator,
    ValuationResult,
    completion_epsilon,
    exact_verfedsv,
    hoeffding_K,
    mc_verfedsv,
)
from .sync import SyncConfig, batch_from_budgets, run_fedsgd
from .trace import EmbeddingTrace
from .vafl import AsyncConfig, ClientProfile, run_vafl

log = logging.getLogger(__name__)

VALUATION_HEADER = ["client_id", "kind", "value", "share", "method", "K", "seed", "error_bound"]


@dataclass
class PreparedData:
    train: VerticalDataset
    test: VerticalDataset | None
    specs: list
    loss: object

    @property
    def kinds(self) -> list[str]:
        return [s.report_kind() for s in self.specs]


def build_loss(name: str, labels, n_classes: int, prior_offset: bool):
    binary = name == "binary"
    if binary and n_classes != 2:
        raise ConfigError(f"binary loss needs 2 classes, dataset has {n_classes}")
    offset = log_prior_offset(labels, n_classes, binary=binary) if prior_offset else None
    return get_loss(name, offset)


def prepare_data(cfg: ExperimentConfig) -> PreparedData:
    """Load, split and subsample the dataset, then build one client per spec.

    Synthetic clients are generated over train and test rows together so the
    test set sees the same feature construction.
    """
    dc = cfg.dataset
    if dc.format != "libsvm":
        raise ConfigError(f"unsupported dataset format {dc.format!r}")
    if not Path(dc.path).exists():
        raise ConfigError(
            f"dataset {dc.path!r} not found; set dataset.path in the config "
            "(Adult can be rebuilt with scripts/prepare_adult.py)"
        )
    ds = load_libsvm(dc.path, dc.expected_dim)
    splits = dc.splits or equal_splits(ds.n_features, dc.n_clients)
    blocks = partition_vertical(ds, splits, dc.permutation_seed)

    n = blocks.n_samples
    perm = np.random.default_rng(dc.split_seed).permutation(n)
    n_test = int(round(dc.test_fraction * n))
    test_rows, train_rows = np.sort(perm[:n_test]), np.sort(perm[n_test:])
    if dc.subsample is not None:
        train_rows = train_rows[subsample_rows(train_rows.size, dc.subsample, cfg.subsample_seed)]
    rows = np.concatenate([train_rows, test_rows])
    base = blocks.subset(rows)

    specs = list(cfg.clients) or [ClientSpec("regular", source=m) for m in range(blocks.n_clients)]
    clients = []
    for k, s in enumerate(specs):
        if not 0 <= s.source < base.n_clients:
            raise ConfigError(f"clients[{k}]: source block {s.source} outside 0..{base.n_clients - 1}")
        block = base.clients[s.source]
        if s.kind == "regular":
            cd = block
        elif s.kind == "clone":
            cd = make_noisy_clone(block, s.fraction, s.noise_std, s.seed)
        else:
            cd = make_random_client(rows.size, s.dim or block.d_m, s.mean, s.std, s.seed)
        clients.append(normalize_client_features(cd) if dc.normalize else cd)
    full = VerticalDataset.from_clients(clients, base.labels, base.n_classes)
    train = full.subset(np.arange(train_rows.size))
    test = full.subset(np.arange(train_rows.size, rows.size)) if n_test else None
    loss = build_loss(dc.loss, train.labels, train.n_classes, dc.prior_offset)
    return PreparedData(train, test, specs, loss)


@dataclass
class TrainResult:
    models: list
    trace: EmbeddingTrace
    history: np.ndarray
    events: list = field(default_factory=list)
    train_accuracy: float = float("nan")
    test_accuracy: float | None = None
    final_loss: float = float("nan")


def make_profiles(cfg: ExperimentConfig, specs) -> list[ClientProfile]:
    a = cfg.async_
    return [
        ClientProfile(
            m,
            tau=s.tau if s.tau is not None else a.tau,
            period=s.period if s.period is not None else a.period,
            learning_rate=a.learning_rate,
            seed=cfg.seed * 1000 + m,
            participation=a.participation,
        )
        for m, s in enumerate(specs)
    ]


def train(cfg: ExperimentConfig, data: PreparedData) -> TrainResult:
    if cfg.mode == "sync":
        s = cfg.sync
        taus = [spec.tau if spec.tau is not None else s.batch_size for spec in data.specs]
        sync_cfg = SyncConfig(s.rounds, batch_from_budgets(taus), s.learning_rate, s.schedule,
                              cfg.seed, s.l2, s.eval_every, s.record_full)
        models, trace, history = run_fedsgd(data.train, sync_cfg, data.loss)
        events = []
    else:
        a = cfg.async_
        async_cfg = AsyncConfig(a.total_time, a.valuation_interval, make_profiles(cfg, data.specs), cfg.seed)
        models, trace, history, events = run_vafl(data.train, async_cfg, data.loss)
    test_acc = accuracy(models, data.test, data.loss) if data.test is not None else None
    return TrainResult(models, trace, history, events, accuracy(models, data.train, data.loss), test_acc,
                       mean_loss(models, data.train, data.loss))


def trace_meta(cfg: ExperimentConfig, data: PreparedData) -> dict:
    """Everything ``value`` needs besides the trace itself."""
    offset = data.loss.offset
    return {
        "mode": cfg.mode,
        "seed": cfg.seed,
        "kinds": data.kinds,
        "dims": data.train.dims,
        "n_classes": data.train.n_classes,
        "loss": data.loss.name,
        "loss_offset": None if offset is None else [float(v) for v in offset],
    }


def loss_from_meta(meta: dict):
    try:
        return get_loss(meta.get("loss", "multinomial"), meta.get("loss_offset"))
    except ValueError as exc:
        raise ConfigError(f"trace meta.json: {exc}") from exc


@dataclass
class Valuation:
    result: ValuationResult
    completion: CompletedEmbeddings | None = None
    eps: float | None = None
    eps_source: str | None = None
    completion_bound: float | None = None
    mc_bound: float | None = None
    delta: float | None = None
    n_rounds: int = 0

    @property
    def error_bound(self) -> float | None:
        parts = [b for b in (self.completion_bound, self.mc_bound) if b is not None]
        return float(sum(parts)) if parts else None


def snapshots_for(trace: EmbeddingTrace, cfg: ExperimentConfig, dims=None):
    """Full snapshots: the trace itself when fully known, else its completion."""
    if trace.kind == "observed" and not trace.is_fully_observed():
        completed = complete_trace(trace, cfg.completion, dims)
        return completed.history, completed
    return trace.snapshots(), None


def value_trace(trace: EmbeddingTrace, labels, loss, cfg: ExperimentConfig, dims=None) -> Valuation:
    snaps, completed = snapshots_for(trace, cfg, dims)
    ev = UtilityEvaluator(snaps, labels, loss)
    v = cfg.valuation
    seed = cfg.valuation_seed
    out = Valuation(None, completed, n_rounds=ev.n_rounds)
    if completed is not None:
        out.eps, out.eps_source = completion_epsilon(completed.reports)
        out.completion_bound = 2.0 * lipschitz_G(loss) * out.eps
    if v.method == "exact":
        out.result = exact_verfedsv(ev, v.max_clients)
    elif v.method == "exhaustive":
        out.result = mc_verfedsv(ev, exhaustive=True)
    else:
        K = v.K
        if K is None:
            if v.eps is None:
                raise ConfigError("valuation.method=mc needs K or eps")
            pilot = mc_verfedsv(ev, v.pilot_K, seed=seed + 1)
            total = abs(float(np.sum(pilot.values)))  # exact: every ordering telescopes to U([M])
            eps_abs = v.eps / 100.0 * total
            K = max(1, hoeffding_K(pilot.utility_range, ev.n_clients, eps_abs, v.delta)) if eps_abs > 0 else 1
            log.info("Hoeffding count: R=%.4g, eps=%.4g -> K=%d", pilot.utility_range, eps_abs, K)
            work = K * ev.n_rounds * ev.n_clients * ev.n_samples * ev.n_channels
            if work > 1e10:
                log.warning("K=%d implies ~%.1e loss terms; raise valuation.eps or set valuation.K", K, work)
        out.result = mc_verfedsv(ev, K, seed, antithetic=v.antithetic, delta=v.delta)
        out.mc_bound = out.result.error_bound.get("mc_eps")
        out.delta = v.delta
    if out.completion_bound is not None:
        out.result.error_bound["completion"] = out.completion_bound
    return out


def valuation_rows(val: Valuation, kinds) -> list[list]:
    r = val.result
    shares = r.shares
    bound = val.error_bound
    return [
        [m, kinds[m] if kinds else "regular", float(r.values[m]), float(shares[m]), r.method,
         r.K, r.seed, bound]
        for m in range(len(r.values))
    ]


def summary_lines(cfg_mode: str, trace: EmbeddingTrace, val: Valuation | None, train: TrainResult | None = None) -> list[str]:
    lines = [
        f"mode: {cfg_mode}",
        f"T: {trace.n_rounds}",
        f"M: {trace.n_clients}",
        f"N: {trace.n_samples}",
    ]
    if train is not None:
        lines.append(f"final training loss: {train.final_loss:.6f}")
        lines.append(f"train accuracy: {train.train_accuracy:.4f}")
        if train.test_accuracy is not None:
            lines.append(f"test accuracy: {train.test_accuracy:.4f}")
    if val is not None:
        r = val.result
        method = r.method if r.method != "monte_carlo" else f"monte_carlo(K={r.K}, seed={r.seed})"
        lines.append(f"valuation method: {method}")
        if val.completion_bound is not None:
            lines.append(f"completion eps ({val.eps_source} residuals): {val.eps:.6g}")
            lines.append(f"completion bound 2*G*eps: {val.completion_bound:.6g}")
        else:
            lines.append("completion bound 2*G*eps: n/a (fully observed)")
        if val.mc_bound is not None:
            lines.append(f"monte carlo bound: eps={val.mc_bound:.6g} at delta={val.delta}")
        elif r.method == "monte_carlo":
            lines.append("monte carlo bound: eps=0 (constant utilities)")
        else:
            lines.append("monte carlo bound: n/a")
        lines.append(f"sum of values: {float(np.sum(r.values)):.6g}")
    return lines


# ---------------------------------------------------------------- presets

def _regulars(n: int = 3) -> list[dict]:
    return [{"kind": "regular", "source": m} for m in range(n)]


HETEROGENEITY_LEVELS = (0.0, 0.1, 0.2, 0.3, 0.4)
FREQUENCY_PERIODS = tuple(round(0.01 * i, 2) for i in range(1, 6))

PRESETS: dict[str, dict] = {
    "heterogeneity": {
        "mode": "sync",
        "dataset": {"subsample": 1000},
        "sync": {"rounds": 100, "batch_size": 250, "learning_rate": 1.0},
        "completion": {"rank": 5, "max_iters": 100},
        "valuation": {"method": "exact"},
        # one noise seed for all clones makes the perturbed column sets nested
        "clients": _regulars() + [
            {"kind": "clone", "source": 0, "fraction": f, "noise_std": 1.0, "seed": 100}
            for f in HETEROGENEITY_LEVELS
        ],
    },
    "random_feature_sync": {
        "mode": "sync",
        "dataset": {"subsample": 10000},
        "sync": {"rounds": 100, "batch_size": 2500, "learning_rate": 1.0},
        "completion": {"rank": 5, "max_iters": 100},
        "valuation": {"method": "exact"},
        "clients": _regulars() + [
            {"kind": "random", "source": 0, "mean": float(i), "std": float(i), "seed": 200 + i}
            for i in range(1, 6)
        ],
    },
    "frequency": {
        "mode": "async",
        "dataset": {"subsample": 2000},
        "async": {"total_time": 1.0, "valuation_interval": 0.01, "tau": 200, "period": 0.01},
        "valuation": {"method": "exact"},
        "clients": _regulars() + [
            {"kind": "regular", "source": 0, "period": p} for p in FREQUENCY_PERIODS
        ],
    },
    "random_feature_async": {
        "mode": "async",
        "dataset": {"subsample": 10000},
        "async": {"total_time": 1.0, "valuation_interval": 0.01, "tau": 200, "period": 0.01},
        "valuation": {"method": "exact"},
        "clients": _regulars() + [
            {"kind": "random", "source": 0, "mean": 0.0, "std": 1.0, "seed": 200 + i,
             "period": p, "label": f"random({p!r})"}
            for i, p in enumerate(FREQUENCY_PERIODS, start=1)
        ],
    },
    "rank_report": {
        "mode": "sync",
        "dataset": {"subsample": 2000},
        "sync": {"rounds": 200, "batch_size": 250, "learning_rate": 8.0,
                 "schedule": "one_over_t", "record_full": True},
        "rank_eps": 1e-3,
    },
}


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in (over or {}).items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def preset_config(name: str, overrides: dict | None = None, base_dir=None) -> ExperimentConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return config_from_dict(_merge(PRESETS[name], overrides or {}), base_dir)


@dataclass
class ExperimentOutput:
    name: str
    header: list
    rows: list
    summary: list
    valuation: Valuation | None
    train: TrainResult
    data: PreparedData


def _relative_difference(a: float, b: float) -> float:
    return abs(a - b) / abs(a) if a != 0 else (0.0 if b == 0 else math.inf)


def rank_rows(trace: EmbeddingTrace, dims, eps: float, learning_rate: float, G: float,
              matrices=None) -> list[list]:
    """Per client and channel: approximated eps-rank of the ``T x N`` embedding matrix and its bound.

    ``matrices`` is a ``(T+1, M, N, C)`` history; defaults to the trace's
    ground truth or, for fully known traces, its snapshots.
    """
    if matrices is None:
        matrices = trace.full if trace.full is not None else np.stack(list(trace.snapshots()))
    T = trace.n_rounds
    # drift per round is at most eta_t * G for unit-norm rows
    bound_L = learning_rate * G
    rows = []
    for m in range(trace.n_clients):
        bound = rank_bound(dims[m], bound_L, T, eps) if T > 1 else 0
        for c in range(trace.n_channels):
            rows.append([m, dims[m], c, approx_epsilon_rank(matrices[1:, m, :, c], eps), bound])
    return rows


RANK_HEADER = ["client_id", "d_m", "channel", "eps_rank", "rank_bound"]


def run_experiment(name: str, cfg: ExperimentConfig) -> ExperimentOutput:
    data = prepare_data(cfg)
    result = train(cfg, data)
    trace = result.trace

    if name == "rank_report":
        rows = rank_rows(trace, data.train.dims, cfg.rank_eps, cfg.sync.learning_rate, lipschitz_G(data.loss))
        summary = summary_lines(cfg.mode, trace, None, result)
        summary.append(f"rank eps: {cfg.rank_eps!r}")
        return ExperimentOutput(name, RANK_HEADER, rows, summary, None, result, data)

    val = value_trace(trace, data.train.labels, data.loss, cfg, data.train.dims)
    values, shares = val.result.values, val.result.shares
    summary = summary_lines(cfg.mode, trace, val, result)

    if name == "heterogeneity":
        header = ["heterogeneity", "client_id", "value", "relative_difference"]
        rows = []
        for m, spec in enumerate(data.specs):
            if spec.kind == "clone":
                rows.append([round(100 * spec.fraction), m, float(values[m]),
                             _relative_difference(float(values[spec.source]), float(values[m]))])
    elif name == "frequency":
        header = ["client_id", "period", "share"]
        rows = [[m, spec.period, float(shares[m])] for m, spec in enumerate(data.specs) if spec.period is not None]
    else:
        header = ["client_id", "kind", "share"]
        rows = [[m, spec.report_kind(), float(shares[m])] for m, spec in enumerate(data.specs)]
        regular = float(sum(shares[m] for m, s in enumerate(data.specs) if s.kind == "regular"))
        summary.append(f"regular clients total share: {regular:.4f}")
        summary.append(f"random clients total share: {100.0 - regular:.4f}")
    return ExperimentOutput(name, header, rows, summary, val, result, data)
