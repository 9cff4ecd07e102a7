"""Linear-probe evaluation of frozen encoder features."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .losses import similarity_matrix
from .model import ModelSpec, ModelState, forward
from .numerics import DimensionError, DomainError, Rng, tree_sum
from .pairing import PairIndexSet

__all__ = [
    "ProbeConfig",
    "ProbeReport",
    "extract_features",
    "linear_probe",
    "pairwise_similarity_stats",
    "is_collapsed",
]


@dataclass(frozen=True)
class ProbeConfig:
    lr0: float = 0.01
    decay: float = 0.98
    epochs: int = 100
    batch_size: int = 32
    patience: int = 10
    val_fraction: float = 0.1
    standardize: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.lr0 <= 0 or self.epochs < 1 or self.batch_size < 1 or self.patience < 1:
            raise DomainError("lr0, epochs, batch_size and patience must be positive")
        if not 0 < self.decay <= 1:
            raise DomainError("decay must lie in (0, 1]")
        if not 0 < self.val_fraction < 1:
            raise DomainError("val_fraction must lie in (0, 1)")


@dataclass
class ProbeReport:
    train_accuracy: float
    test_accuracy: float
    val_accuracy: float
    epochs_run: int
    best_epoch: int
    trace: list[float] = field(default_factory=list)


def extract_features(state: ModelState, spec: ModelSpec, x) -> np.ndarray:
    """Encoder outputs ``h`` for every row of ``x`` in a single pass, so any
    batch standardization uses statistics of the whole set."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != spec.encoder.widths[0]:
        raise DimensionError(f"inputs must be (M, {spec.encoder.widths[0]}), got {x.shape}")
    return forward(state, spec, x).h


def _softmax(logits):
    e = np.exp(logits - logits.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def _accuracy(W, b, x, y) -> float:
    return float(np.mean(np.argmax(x @ W + b, axis=1) == y)) if len(y) else float("nan")


def linear_probe(train_x, train_y, test_x, test_y, cfg: ProbeConfig = ProbeConfig()) -> ProbeReport:
    """Softmax regression trained by minibatch SGD.

    The learning rate is ``lr0 * decay**epoch``. A seeded ``val_fraction``
    of the training rows is held out; training stops after ``patience``
    epochs without a new best validation accuracy and the best epoch's
    weights are scored on the test set. Features are standardized with
    training-set statistics when ``cfg.standardize`` is set.
    """
    train_x = np.asarray(train_x, dtype=np.float64)
    test_x = np.asarray(test_x, dtype=np.float64)
    train_y = np.asarray(train_y)
    test_y = np.asarray(test_y)
    if train_x.ndim != 2 or test_x.ndim != 2 or train_x.shape[1] != test_x.shape[1]:
        raise DimensionError("train and test features must be 2-D with equal width")
    if len(train_x) != len(train_y) or len(test_x) != len(test_y):
        raise DimensionError("feature and label counts differ")
    classes = np.unique(train_y)
    if classes.size < 2:
        raise DomainError("linear probe needs at least two classes")
    k = int(max(train_y.max(), test_y.max() if len(test_y) else 0)) + 1

    rng = Rng(cfg.seed)
    perm = rng.substream(0).permutation(len(train_x))
    n_val = max(1, int(round(cfg.val_fraction * len(train_x))))
    val_idx, fit_idx = perm[:n_val], perm[n_val:]

    if cfg.standardize:
        mu = train_x[fit_idx].mean(axis=0)
        sd = train_x[fit_idx].std(axis=0)
        sd = np.where(sd > 1e-12, sd, 1.0)
        train_x = (train_x - mu) / sd
        test_x = (test_x - mu) / sd
    xf, yf = train_x[fit_idx], train_y[fit_idx]
    xv, yv = train_x[val_idx], train_y[val_idx]

    W = np.zeros((train_x.shape[1], k))
    b = np.zeros(k)
    onehot = np.eye(k)
    best = (-1.0, -1, W.copy(), b.copy())
    trace = []
    epochs_run = 0
    for epoch in range(cfg.epochs):
        lr = cfg.lr0 * cfg.decay**epoch
        order = rng.substream(1, epoch).permutation(len(xf))
        for s in range(0, len(order), cfg.batch_size):
            bi = order[s : s + cfg.batch_size]
            p = _softmax(xf[bi] @ W + b)
            g = (p - onehot[yf[bi]]) / len(bi)
            W -= lr * (xf[bi].T @ g)
            b -= lr * g.sum(axis=0)
        epochs_run = epoch + 1
        acc = _accuracy(W, b, xv, yv)
        trace.append(acc)
        if acc > best[0]:
            best = (acc, epoch, W.copy(), b.copy())
        elif epoch - best[1] >= cfg.patience:
            break
    val_acc, best_epoch, W, b = best
    return ProbeReport(
        train_accuracy=_accuracy(W, b, xf, yf),
        test_accuracy=_accuracy(W, b, test_x, test_y),
        val_accuracy=val_acc,
        epochs_run=epochs_run,
        best_epoch=best_epoch,
        trace=trace,
    )


def pairwise_similarity_stats(z, pairs: PairIndexSet) -> dict:
    """Mean cosine similarity over ordered positives and ordered negatives."""
    z = np.asarray(z, dtype=np.float64)
    if z.shape[0] != pairs.n_views:
        raise DimensionError(f"expected {pairs.n_views} vectors, got {z.shape[0]}")
    S = similarity_matrix(z, "cosine")
    pos = S[pairs.positives[:, 0], pairs.positives[:, 1]]
    mean_pos = float(tree_sum(pos) / pos.size)
    if pairs.t_n:
        neg = S[np.arange(pairs.n_views)[:, None], pairs.negatives_by_anchor]
        mean_neg = float(tree_sum(neg.ravel()) / neg.size)
    else:
        mean_neg = float("nan")
    return {"mean_pos": mean_pos, "mean_neg": mean_neg, "gap": mean_pos - mean_neg}


def is_collapsed(stats: dict, tol: float = 1e-3) -> bool:
    """Collapse signature: no positive/negative gap while everything aligns."""
    return abs(stats["gap"]) < tol and stats["mean_pos"] > 1 - tol
