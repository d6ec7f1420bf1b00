"""Linear local models and the server-side loss ``f(h; y)``.

Each client holds a ``C x d_m`` weight matrix and contributes the embedding
``h_i^m = theta_m @ x_i^m`` (one score per class). The server sums the client
embeddings and evaluates the loss on the total. With ``C == 1`` the embedding
is a scalar and :class:`BinaryLogistic` gives the margin loss.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import DimensionError, VerticalDataset


@dataclass
class LocalModel:
    theta: np.ndarray  # (C, d_m)

    @classmethod
    def zeros(cls, n_classes: int, d_m: int) -> "LocalModel":
        return cls(np.zeros((n_classes, d_m)))

    @property
    def n_classes(self) -> int:
        return self.theta.shape[0]

    @property
    def d_m(self) -> int:
        return self.theta.shape[1]

    def norm(self) -> float:
        return float(np.linalg.norm(self.theta))


def embed(model: LocalModel, x: np.ndarray) -> np.ndarray:
    """Embedding of one sample (shape ``(d_m,)``) or a batch (``(B, d_m)``)."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != model.d_m:
        raise DimensionError(f"feature dimension {x.shape[-1]} != model dimension {model.d_m}")
    return x @ model.theta.T


def _check_labels(y: np.ndarray, n_classes: int) -> None:
    if y.size and (y.min() < 0 or y.max() >= n_classes):
        raise ValueError(f"label out of range for {n_classes} classes")


class _OffsetLoss:
    """Optional fixed server-side offset ``b`` added to every total embedding.

    With ``b`` the log class prior, the all-zero model already predicts the
    class frequencies, so no client earns credit for learning an intercept.
    The offset is not trained and does not change gradients' form.
    """

    def __init__(self, offset=None):
        self.offset = None if offset is None else np.asarray(offset, dtype=float)

    def _shift(self, h) -> np.ndarray:
        h = np.asarray(h, dtype=float)
        return h if self.offset is None else h + self.offset


class MultinomialLogistic(_OffsetLoss):
    """``f(h; y) = logsumexp(h + b) - (h + b)_y``, the softmax cross-entropy on class scores."""

    name = "multinomial"
    # sup ||softmax(h) - e_y||_2 and the largest Hessian eigenvalue bound
    lipschitz = math.sqrt(2.0)
    smoothness = 1.0

    def loss(self, h: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Per-sample loss; ``h`` has shape ``(..., N, C)``, ``y`` shape ``(N,)``."""
        h = self._shift(h)
        y = np.asarray(y)
        _check_labels(y, h.shape[-1])
        # channel loops: reductions over a short trailing axis are slow in numpy
        channels = [h[..., c] for c in range(h.shape[-1])]
        top = channels[0].copy()
        for hc in channels[1:]:
            np.maximum(top, hc, out=top)
        total = np.zeros_like(top)
        h_y = np.zeros_like(top)
        for c, hc in enumerate(channels):
            total += np.exp(hc - top)
            h_y += np.where(y == c, hc, 0.0)
        return np.log(total) + top - h_y

    def grad(self, h: np.ndarray, y: np.ndarray) -> np.ndarray:
        h = self._shift(h)
        y = np.asarray(y)
        _check_labels(y, h.shape[-1])
        e = np.exp(h - h.max(axis=-1, keepdims=True))
        p = e / e.sum(axis=-1, keepdims=True)
        onehot = np.zeros_like(p)
        np.put_along_axis(onehot, np.broadcast_to(y[..., None], h.shape[:-1] + (1,)), 1.0, axis=-1)
        return p - onehot


class BinaryLogistic(_OffsetLoss):
    """``f(h; y) = log(1 + exp(-s (h + b)))`` with ``s = 2y - 1``, for scalar (C == 1) embeddings."""

    name = "binary"
    lipschitz = 1.0
    smoothness = 0.25

    def loss(self, h: np.ndarray, y: np.ndarray) -> np.ndarray:
        h = self._shift(h)[..., 0]
        y = np.asarray(y)
        _check_labels(y, 2)
        return np.logaddexp(0.0, -(2.0 * y - 1.0) * h)

    def grad(self, h: np.ndarray, y: np.ndarray) -> np.ndarray:
        h = self._shift(h)
        y = np.asarray(y)
        _check_labels(y, 2)
        s = 2.0 * y - 1.0
        # -s * sigmoid(-s h); the tanh form does not overflow
        sig = 0.5 * (1.0 + np.tanh(-0.5 * s * h[..., 0]))
        return (-s * sig)[..., None]


LOSSES = {"multinomial": MultinomialLogistic, "binary": BinaryLogistic}


def get_loss(name: str, offset=None):
    try:
        return LOSSES[name](offset)
    except KeyError:
        raise ValueError(f"unknown loss {name!r}; choose from {sorted(LOSSES)}") from None


def log_prior_offset(labels, n_classes: int, binary: bool = False) -> np.ndarray:
    """Log class frequencies (``C`` values), or the log-odds of class 1 when ``binary``."""
    counts = np.bincount(np.asarray(labels), minlength=n_classes).astype(float)
    if np.any(counts == 0):
        raise ValueError("every class needs at least one sample for a prior offset")
    freq = counts / counts.sum()
    if binary:
        return np.array([math.log(freq[1] / freq[0])])
    return np.log(freq)


def n_channels(loss, n_classes: int) -> int:
    """Embedding width for a loss: one score per class, or a single margin."""
    return 1 if isinstance(loss, BinaryLogistic) else n_classes


def lipschitz_G(loss=None) -> float:
    """Global bound on ``||grad_h f(h; y)||_2``."""
    return (loss or MultinomialLogistic()).lipschitz


def loss_value(h, y, loss=None) -> float:
    return float((loss or MultinomialLogistic()).loss(np.asarray(h)[None, :], np.asarray([y]))[0])


def grad_h(h, y, loss=None) -> np.ndarray:
    return (loss or MultinomialLogistic()).grad(np.asarray(h, dtype=float)[None, :], np.asarray([y]))[0]


def total_embeddings(models, data: VerticalDataset) -> np.ndarray:
    """Server-side sum of all client embeddings, shape ``(N, C)``."""
    return sum(embed(mdl, c.features) for mdl, c in zip(models, data.clients))


def predict(models, data: VerticalDataset, loss=None) -> np.ndarray:
    h = total_embeddings(models, data)
    if loss is not None and loss.offset is not None:
        h = h + loss.offset
    if h.shape[1] == 1:
        return (h[:, 0] > 0).astype(np.int64)
    return np.argmax(h, axis=1)  # first maximum wins ties


def accuracy(models, data: VerticalDataset, loss=None) -> float:
    return float(np.mean(predict(models, data, loss) == data.labels))


def mean_loss(models, data: VerticalDataset, loss=None) -> float:
    loss = loss or MultinomialLogistic()
    return float(np.mean(loss.loss(total_embeddings(models, data), data.labels)))
