"""Experiment configuration: nested dataclasses loaded from a YAML file.

Every section is optional in the file; missing keys keep their defaults and
unknown keys are rejected so typos do not silently fall back to defaults.
Relative dataset paths are resolved against the config file's directory,
falling back to the working directory.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .completion import CompletionConfig


class ConfigError(ValueError):
    pass


@dataclass
class DatasetConfig:
    path: str = "data/adult.libsvm.gz"
    format: str = "libsvm"
    expected_dim: int | None = 123
    n_clients: int = 3
    splits: list | None = None  # column counts per client; default near-equal blocks
    permutation_seed: int | None = None
    test_fraction: float = 0.2
    split_seed: int = 0
    subsample: int | None = None  # training rows kept; None keeps all
    subsample_seed: int | None = None  # None: use the top-level seed
    normalize: bool = True
    prior_offset: bool = True  # fixed log class prior added to the total embedding
    loss: str = "multinomial"


@dataclass
class ClientSpec:
    """One client of the experiment.

    ``regular`` takes column block ``source`` as is; ``clone`` copies block
    ``source`` and adds noise to ``fraction`` of its columns; ``random``
    draws Gaussian features. ``period``/``tau`` override the async defaults.
    """

    kind: str = "regular"
    source: int = 0
    fraction: float = 0.0
    noise_std: float = 1.0
    mean: float = 0.0
    std: float = 1.0
    dim: int | None = None  # random clients; defaults to the width of block ``source``
    seed: int = 0
    period: float | None = None
    tau: int | None = None
    label: str | None = None  # report kind; derived from the other fields when None

    def __post_init__(self):
        if self.kind not in ("regular", "clone", "random"):
            raise ConfigError(f"unknown client kind {self.kind!r}")

    def report_kind(self) -> str:
        if self.label is not None:
            return self.label
        if self.kind == "clone":
            return f"clone({round(100 * self.fraction)}%)"
        if self.kind == "random":
            return "random"
        if self.period is not None:
            return f"frequency({self.period!r})"
        return "regular"


@dataclass
class SyncSection:
    rounds: int = 100
    batch_size: int = 250
    learning_rate: float = 1.0
    schedule: str = "constant"
    l2: float = 0.0
    eval_every: int = 1
    record_full: bool = False


@dataclass
class AsyncSection:
    total_time: float = 1.0
    valuation_interval: float = 0.01
    tau: int = 200
    period: float = 0.01
    learning_rate: float = 1.0
    participation: float = 1.0


@dataclass
class ValuationConfig:
    method: str = "exact"  # exact | mc | exhaustive
    K: int | None = None  # mc: None derives K from eps via the Hoeffding count
    eps: float | None = None  # mc target accuracy in percentage points of the value total
    delta: float = 0.05
    antithetic: bool = False
    seed: int | None = None  # None: use the top-level seed
    max_clients: int = 20
    pilot_K: int = 64  # permutations used to estimate the utility range for the Hoeffding count

    def __post_init__(self):
        if self.method not in ("exact", "mc", "exhaustive"):
            raise ConfigError(f"unknown valuation method {self.method!r}")


@dataclass
class ExperimentConfig:
    mode: str = "sync"
    seed: int = 0
    output: str = "runs/default"
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    clients: list = field(default_factory=list)  # ClientSpec list; empty means regular blocks only
    sync: SyncSection = field(default_factory=SyncSection)
    async_: AsyncSection = field(default_factory=AsyncSection)
    completion: CompletionConfig = field(default_factory=CompletionConfig)
    valuation: ValuationConfig = field(default_factory=ValuationConfig)
    rank_eps: float = 1e-3

    def __post_init__(self):
        if self.mode not in ("sync", "async"):
            raise ConfigError(f"mode must be 'sync' or 'async', got {self.mode!r}")

    @property
    def valuation_seed(self) -> int:
        return self.seed if self.valuation.seed is None else self.valuation.seed

    @property
    def subsample_seed(self) -> int:
        return self.seed if self.dataset.subsample_seed is None else self.dataset.subsample_seed


_SECTIONS = {
    "dataset": DatasetConfig,
    "sync": SyncSection,
    "async": AsyncSection,
    "completion": CompletionConfig,
    "valuation": ValuationConfig,
}


def _build(cls, values: dict, where: str):
    if not isinstance(values, dict):
        raise ConfigError(f"{where}: expected a mapping, got {type(values).__name__}")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(values) - names)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}; allowed: {sorted(names)}")
    try:
        return cls(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def config_from_dict(raw: dict[str, Any], base_dir: Path | None = None) -> ExperimentConfig:
    raw = dict(raw or {})
    kwargs: dict[str, Any] = {}
    for key, cls in _SECTIONS.items():
        if key in raw:
            kwargs["async_" if key == "async" else key] = _build(cls, raw.pop(key) or {}, key)
    if "clients" in raw:
        specs = raw.pop("clients") or []
        kwargs["clients"] = [_build(ClientSpec, s, f"clients[{k}]") for k, s in enumerate(specs)]
    top = {f.name for f in dataclasses.fields(ExperimentConfig)} - set(_SECTIONS) - {"async_", "clients"}
    unknown = sorted(set(raw) - top)
    if unknown:
        raise ConfigError(f"unknown top-level keys {unknown}; allowed: {sorted(top | set(_SECTIONS) | {'clients'})}")
    kwargs.update(raw)
    try:
        cfg = ExperimentConfig(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    if base_dir is not None:
        p = Path(cfg.dataset.path)
        if not p.is_absolute() and (base_dir / p).exists():
            cfg.dataset.path = str(base_dir / p)
    return cfg


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML ({exc})") from exc
    return config_from_dict(raw or {}, path.parent)


def config_to_dict(cfg: ExperimentConfig) -> dict:
    out = dataclasses.asdict(cfg)
    out["async"] = out.pop("async_")
    return out
