"""Optimizers, the warmup + cosine schedule and the two-view pre-training loop."""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Literal

import numpy as np

from .data_augment import AugmentPolicy, ImageSample, VectorAugment, augment_image, augment_vector
from .losses import LossConfig, get_loss
from .model import ModelSpec, ModelState, backward, forward, init_params
from .numerics import DimensionError, DomainError, Rng, tree_sum
from .pairing import build_pairs

__all__ = [
    "TrainConfig",
    "MetricsRow",
    "DivergenceError",
    "lr_at",
    "sgd_step",
    "lars_step",
    "OptimizerState",
    "pretrain",
    "write_metrics_csv",
    "METRICS_COLUMNS",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 128
    epochs: int = 100
    base_lr: float = 1.5
    warmup_epochs: int = 10
    schedule_horizon: int = 1000
    optimizer: Literal["sgd_momentum", "lars"] = "lars"
    momentum: float = 0.9
    trust_coefficient: float = 0.001
    loss: Literal["mio", "infonce", "mio_l2"] = "mio_l2"
    tau: float = 0.5
    lam: float = 1.0
    similarity: Literal["cosine", "dot"] = "cosine"
    augment: VectorAugment | AugmentPolicy = field(default_factory=VectorAugment)
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise DomainError("batch_size must be >= 1")
        if self.epochs < 0:
            raise DomainError("epochs must be >= 0")
        if not 0 <= self.warmup_epochs < self.schedule_horizon:
            raise DomainError("need 0 <= warmup_epochs < schedule_horizon")
        if self.epochs > self.schedule_horizon:
            raise DomainError("epochs must not exceed schedule_horizon")
        if self.base_lr < 0:
            raise DomainError("base_lr must be >= 0")
        if self.optimizer not in ("sgd_momentum", "lars"):
            raise DomainError(f"unknown optimizer {self.optimizer!r}")
        if not 0 <= self.momentum < 1:
            raise DomainError("momentum must lie in [0, 1)")
        get_loss(self.loss)
        LossConfig(self.tau, self.lam, self.similarity)

    @property
    def loss_config(self) -> LossConfig:
        return LossConfig(tau=self.tau, lam=self.lam if self.loss == "mio_l2" else 0.0, mode=self.similarity)


def lr_at(config: TrainConfig, epoch: float) -> float:
    """Linear warmup from ``base/warmup`` to ``base``, then cosine decay to 0
    at ``schedule_horizon``. ``epoch`` may be fractional.

    Warmup is ``base * (epoch + 1) / warmup`` capped at ``base``, so the
    last warmup epoch sits at ``base`` and the curve is continuous where
    the cosine starts.
    """
    if not 0 <= epoch <= config.schedule_horizon:
        raise DomainError(f"epoch {epoch} outside [0, {config.schedule_horizon}]")
    base, w, hor = config.base_lr, config.warmup_epochs, config.schedule_horizon
    if epoch < w:
        return base * min(epoch + 1, w) / w
    return base * 0.5 * (1.0 + math.cos(math.pi * (epoch - w) / (hor - w)))


# ---------------------------------------------------------------------------
# optimizers


@dataclass
class OptimizerState:
    velocity: ModelState


def _pairs_of(state: ModelState, grads: ModelState, vel: ModelState):
    for (name, l), (_, g), (_, v) in zip(state.layers(), grads.layers(), vel.layers()):
        if l.W.shape != g.W.shape or l.b.shape != g.b.shape:
            raise DimensionError(f"gradient shape mismatch at {name}")
        yield l, g, v


def sgd_step(state: ModelState, grads: ModelState, lr: float, momentum: float, opt: OptimizerState | None = None):
    """``v <- momentum * v + g``; ``theta <- theta - lr * v``. In place;
    returns ``(state, opt)``."""
    opt = opt or OptimizerState(state.zeros_like())
    for l, g, v in _pairs_of(state, grads, opt.velocity):
        for p, gp, vp in ((l.W, g.W, v.W), (l.b, g.b, v.b)):
            vp *= momentum
            vp += gp
            p -= lr * vp
    return state, opt


def trust_ratio(param: np.ndarray, grad: np.ndarray, trust_coefficient: float) -> float:
    pn = math.sqrt(tree_sum(param.ravel() ** 2))
    gn = math.sqrt(tree_sum(grad.ravel() ** 2))
    if pn == 0 or gn == 0:
        return 1.0
    return trust_coefficient * pn / (gn + 1e-12)


def lars_step(
    state: ModelState,
    grads: ModelState,
    lr: float,
    momentum: float,
    trust_coefficient: float,
    opt: OptimizerState | None = None,
):
    """Layer-wise trust-ratio momentum update.

    Weights: ``v <- momentum * v + lr * local_lr * g`` with
    ``local_lr = trust * ||W|| / (||g|| + 1e-12)``, then ``W <- W - v``.
    Biases skip the trust ratio (``local_lr = 1``), as does any weight
    matrix whose norm is zero. In place; returns ``(state, opt)``.
    """
    opt = opt or OptimizerState(state.zeros_like())
    for l, g, v in _pairs_of(state, grads, opt.velocity):
        local = trust_ratio(l.W, g.W, trust_coefficient)
        for p, gp, vp, scale in ((l.W, g.W, v.W, local), (l.b, g.b, v.b, 1.0)):
            vp *= momentum
            vp += (lr * scale) * gp
            p -= vp
    return state, opt


# ---------------------------------------------------------------------------
# pre-training

METRICS_COLUMNS = ("epoch", "step", "loss", "pos_sim", "neg_sim", "lr", "seconds")


@dataclass(frozen=True)
class MetricsRow:
    epoch: int
    step: int
    loss: float
    pos_sim: float
    neg_sim: float
    lr: float
    seconds: float


class DivergenceError(RuntimeError):
    pass


def _finite(grads: ModelState) -> bool:
    return all(np.all(np.isfinite(a)) for _, a in grads.arrays())


def make_views(x: np.ndarray, idx: np.ndarray, aug, rng: Rng, epoch: int) -> np.ndarray:
    """Interleaved two-view batch: row ``2k`` / ``2k+1`` are views of ``x[idx[k]]``.

    View ``v`` of sample ``i`` in ``epoch`` always uses substream
    ``(epoch, i, v)``, whatever batch it lands in. Image datasets
    (``x`` of shape ``(M, l, l, 3)``) go through :func:`augment_image` with
    an :class:`AugmentPolicy` and are flattened afterwards.
    """
    images = x.ndim == 4
    out = np.empty((2 * len(idx), int(np.prod(x.shape[1:]))))
    for k, i in enumerate(idx):
        for v in (0, 1):
            r = rng.substream(epoch, int(i), v)
            if images:
                out[2 * k + v] = augment_image(ImageSample(x[i]), aug, r).pixels.ravel()
            else:
                out[2 * k + v] = augment_vector(x[i], r, aug.noise_sigma, aug.scale_range, aug.dropout_p)
    return out


def pretrain(
    config: TrainConfig,
    x,
    spec: ModelSpec,
    state: ModelState | None = None,
    on_epoch: Callable[[int, ModelState, MetricsRow], None] | None = None,
) -> tuple[ModelState, list[MetricsRow]]:
    """Self-supervised training on the rows of ``x``.

    Each epoch shuffles with substream ``(1, epoch)`` of the seed, drops the
    ragged last batch, and for every batch runs augment -> forward -> loss
    -> backward -> optimizer step. One :class:`MetricsRow` per epoch holds
    batch averages. A non-finite loss or gradient raises
    :class:`DivergenceError` before any parameter is touched.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim not in (2, 4) or x.shape[0] == 0:
        raise DomainError("dataset must be a non-empty (M, d) or (M, l, l, 3) array")
    if config.batch_size > x.shape[0]:
        raise DomainError(f"batch_size {config.batch_size} exceeds dataset size {x.shape[0]}")
    root = Rng(config.seed)
    if state is None:
        state = init_params(spec, root.substream(0))
    loss_fn = get_loss(config.loss)
    cfg = config.loss_config
    pairs = build_pairs(config.batch_size)
    aug_rng = root.substream(2)
    steps_per_epoch = x.shape[0] // config.batch_size
    opt = OptimizerState(state.zeros_like())
    rows: list[MetricsRow] = []
    step = 0
    t0 = time.perf_counter()

    for epoch in range(config.epochs):
        order = root.substream(1, epoch).permutation(x.shape[0])
        acc = np.zeros(4)
        for b in range(steps_per_epoch):
            idx = order[b * config.batch_size : (b + 1) * config.batch_size]
            views = make_views(x, idx, config.augment, aug_rng, epoch)
            trace = forward(state, spec, views)
            report = loss_fn(trace.z, pairs, cfg)
            if not np.isfinite(report.value) or not np.all(np.isfinite(report.grad_z)):
                raise DivergenceError(
                    f"non-finite loss at epoch {epoch} batch {b}: "
                    f"max |similarity| = {report.diagnostics.get('max_abs_sim')}"
                )
            grads = backward(state, spec, trace, report.grad_z)
            if not _finite(grads):
                raise DivergenceError(f"non-finite parameter gradient at epoch {epoch} batch {b}")
            lr = lr_at(config, epoch + b / steps_per_epoch)
            if config.optimizer == "lars":
                lars_step(state, grads, lr, config.momentum, config.trust_coefficient, opt)
            else:
                sgd_step(state, grads, lr, config.momentum, opt)
            step += 1
            d = report.diagnostics
            acc += (report.value, d["mean_pos_sim"], d["mean_neg_sim"], lr)
        acc /= steps_per_epoch
        row = MetricsRow(epoch, step, float(acc[0]), float(acc[1]), float(acc[2]), float(acc[3]), time.perf_counter() - t0)
        rows.append(row)
        log.debug("epoch %d loss %.5f pos %.3f neg %.3f", epoch, row.loss, row.pos_sim, row.neg_sim)
        if on_epoch is not None:
            on_epoch(epoch, state, row)
    return state, rows


def write_metrics_csv(path, rows, append: bool = False) -> None:
    mode = "a" if append else "w"
    with open(path, mode, newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if not append:
            w.writerow(METRICS_COLUMNS)
        for r in rows:
            d = asdict(r)
            w.writerow([d["epoch"], d["step"]] + [repr(float(d[c])) for c in METRICS_COLUMNS[2:]])
