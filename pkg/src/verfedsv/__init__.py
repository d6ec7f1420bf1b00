"""Vertical federated learning simulation and per-client Shapley valuation."""

from .completion import CompletionConfig, complete_matrix, complete_trace
from .data import (
    ClientData,
    DenseDataset,
    VerticalDataset,
    load_libsvm,
    normalize_client_features,
    partition_vertical,
)
from .model import BinaryLogistic, LocalModel, MultinomialLogistic
from .shapley import UtilityEvaluator, ValuationResult, exact_verfedsv, mc_verfedsv
from .sync import SyncConfig, run_fedsgd
from .trace import EmbeddingTrace, read_trace, write_trace
from .vafl import AsyncConfig, ClientProfile, run_vafl

__all__ = [
    "AsyncConfig",
    "BinaryLogistic",
    "ClientData",
    "ClientProfile",
    "CompletionConfig",
    "DenseDataset",
    "EmbeddingTrace",
    "LocalModel",
    "MultinomialLogistic",
    "SyncConfig",
    "UtilityEvaluator",
    "ValuationResult",
    "VerticalDataset",
    "complete_matrix",
    "complete_trace",
    "exact_verfedsv",
    "load_libsvm",
    "mc_verfedsv",
    "normalize_client_features",
    "partition_vertical",
    "read_trace",
    "run_fedsgd",
    "run_vafl",
    "write_trace",
]
