"""Binary pair-classification (MIO) loss, InfoNCE, the L2 positive-pair
regularizer, their exact gradients with respect to the feature vectors,
and the closed-form projector diagnostics.

Similarity comes in two flavours. ``"cosine"`` normalizes each feature
vector before taking inner products and is what training uses. ``"dot"``
uses raw inner products; the closed-form expressions in this module
(per-anchor displacement, influence-weighted projector gradients) are
written for that case with unit temperature.

All gradients returned in :class:`LossReport.grad_z` are *full*
gradients: every appearance of a vector (as anchor, as positive partner,
as negative partner, and through the normalization in cosine mode) is
accounted for.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Literal

import numpy as np

from .numerics import (
    NORM_FLOOR,
    DegenerateVectorError,
    DimensionError,
    DomainError,
    l1_norm,
    log_sigmoid,
    sigmoid,
    tree_sum,
)
from .pairing import PairIndexSet, partner

__all__ = [
    "LossConfig",
    "LossReport",
    "similarity_matrix",
    "mio_loss",
    "mio_grad_z",
    "infonce_loss",
    "infonce_grad_z",
    "l2_reg",
    "mio_l2_loss",
    "mio_anchor_grad",
    "infonce_displacement_weights",
    "influence_factor",
    "projector_grad_mio",
    "projector_grad_infonce",
    "LOSSES",
    "get_loss",
]

SimilarityMode = Literal["dot", "cosine"]


@dataclass(frozen=True)
class LossConfig:
    tau: float = 0.5
    lam: float = 0.0
    mode: SimilarityMode = "cosine"

    def __post_init__(self):
        if not (np.isfinite(self.tau) and self.tau > 0):
            raise DomainError(f"tau must be > 0, got {self.tau}")
        if not (np.isfinite(self.lam) and self.lam >= 0):
            raise DomainError(f"lambda must be finite and >= 0, got {self.lam}")
        if self.mode not in ("dot", "cosine"):
            raise DomainError(f"unknown similarity mode {self.mode!r}")


@dataclass
class LossReport:
    value: float
    grad_z: np.ndarray | None = None
    diagnostics: dict = field(default_factory=dict)


@dataclass
class _Sim:
    S: np.ndarray
    mode: str
    u: np.ndarray
    norms: np.ndarray


def _check_batch(z, pairs: PairIndexSet) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 2 or z.shape[0] != pairs.n_views:
        raise DimensionError(f"expected ({pairs.n_views}, D) features, got {z.shape}")
    if not np.all(np.isfinite(z)):
        raise DomainError("feature batch has non-finite entries")
    return z


def _similarities(z: np.ndarray, mode: str) -> _Sim:
    norms = np.sqrt(tree_sum(z * z, axis=1))
    if mode == "cosine":
        if np.any(norms <= NORM_FLOOR):
            bad = int(np.argmin(norms))
            raise DegenerateVectorError(f"feature vector {bad} has near-zero norm")
        u = z / norms[:, None]
        S = np.clip(u @ u.T, -1.0, 1.0)
    else:
        u = z
        S = z @ z.T
    return _Sim(S=S, mode=mode, u=u, norms=norms)


def similarity_matrix(z, mode: SimilarityMode = "cosine") -> np.ndarray:
    """All pairwise similarities of the rows of ``z``."""
    z = np.asarray(z, dtype=np.float64)
    return _similarities(z, mode).S


def _grad_from_sim(G: np.ndarray, sim: _Sim, z: np.ndarray) -> np.ndarray:
    """Pull ``dL/dS`` back to ``dL/dz``."""
    M = G + G.T
    if sim.mode == "dot":
        return M @ z
    gu = M @ sim.u
    radial = tree_sum(gu * sim.u, axis=1)
    return (gu - sim.u * radial[:, None]) / sim.norms[:, None]


def _pair_stats(sim: _Sim, pairs: PairIndexSet) -> dict:
    pos = sim.S[pairs.positives[:, 0], pairs.positives[:, 1]]
    neg = sim.S[np.arange(pairs.n_views)[:, None], pairs.negatives_by_anchor]
    return {
        "mean_pos_sim": float(tree_sum(pos) / pos.size),
        "mean_neg_sim": float(tree_sum(neg.ravel()) / neg.size) if neg.size else float("nan"),
        "max_abs_sim": float(np.max(np.abs(sim.S))),
    }


# ---------------------------------------------------------------------------
# MIO


def _mio(z, pairs: PairIndexSet, cfg: LossConfig, want_grad: bool) -> LossReport:
    z = _check_batch(z, pairs)
    sim = _similarities(z, cfg.mode)
    x = sim.S / cfg.tau
    a, b = pairs.positives[:, 0], pairs.positives[:, 1]
    anchors = np.arange(pairs.n_views)[:, None]
    negs = pairs.negatives_by_anchor

    pos_ll = log_sigmoid(x[a, b])
    neg_ll = log_sigmoid(-x[anchors, negs]) if pairs.t_n else np.zeros((pairs.n_views, 0))
    pos_term = -tree_sum(pos_ll) / pairs.t_p
    neg_term = -tree_sum(tree_sum(neg_ll, axis=1)) / pairs.t_n if pairs.t_n else 0.0
    diag = {"pos_term": float(pos_term), "neg_term": float(neg_term), **_pair_stats(sim, pairs)}
    report = LossReport(value=float(pos_term + neg_term), diagnostics=diag)
    if not want_grad:
        return report

    G = np.zeros_like(sim.S)
    # d/dx [-log sig(x)] = -(1 - sig(x));  d/dx [-log sig(-x)] = sig(x)
    G[a, b] = -(1.0 - sigmoid(x[a, b])) / (pairs.t_p * cfg.tau)
    if pairs.t_n:
        G[anchors, negs] = sigmoid(x[anchors, negs]) / (pairs.t_n * cfg.tau)
    report.grad_z = _grad_from_sim(G, sim, z)
    return report


def mio_loss(z, pairs: PairIndexSet, cfg: LossConfig) -> LossReport:
    """Value of the MIO loss (no gradient).

    Positive pairs are scored with ``log sigmoid(C / tau)`` and averaged
    over the ``2n`` ordered positives; negatives with
    ``log(1 - sigmoid(C / tau))`` averaged over the ``4n^2 - 4n`` ordered
    negatives. With ``n == 1`` there are no negatives and that term is 0.
    """
    return _mio(z, pairs, cfg, want_grad=False)


def mio_grad_z(z, pairs: PairIndexSet, cfg: LossConfig) -> LossReport:
    return _mio(z, pairs, cfg, want_grad=True)


# ---------------------------------------------------------------------------
# InfoNCE


def _infonce(z, pairs: PairIndexSet, cfg: LossConfig, want_grad: bool) -> LossReport:
    if pairs.n < 2:
        raise DomainError("InfoNCE needs at least two source samples (n >= 2)")
    z = _check_batch(z, pairs)
    sim = _similarities(z, cfg.mode)
    v = pairs.n_views
    x = sim.S / cfg.tau
    np.fill_diagonal(x, -np.inf)
    idx = np.arange(v)
    m = np.max(x, axis=1)
    e = np.exp(x - m[:, None])
    denom = tree_sum(e, axis=1)
    lse = m + np.log(denom)
    per_anchor = lse - x[idx, partner(idx)]
    diag = {"mean_anchor_loss": float(tree_sum(per_anchor) / v), **_pair_stats(sim, pairs)}
    report = LossReport(value=float(tree_sum(per_anchor) / v), diagnostics=diag)
    if not want_grad:
        return report

    P = e / denom[:, None]
    P[idx, partner(idx)] -= 1.0
    G = P / (v * cfg.tau)
    report.grad_z = _grad_from_sim(G, sim, z)
    return report


def infonce_loss(z, pairs: PairIndexSet, cfg: LossConfig) -> LossReport:
    """InfoNCE with ``2n`` anchors, one positive and ``2n - 2`` negatives each."""
    return _infonce(z, pairs, cfg, want_grad=False)


def infonce_grad_z(z, pairs: PairIndexSet, cfg: LossConfig) -> LossReport:
    return _infonce(z, pairs, cfg, want_grad=True)


# ---------------------------------------------------------------------------
# L2 regularizer


def l2_reg(z, pairs: PairIndexSet, lam: float, reduction: Literal["mean", "sum"] = "mean") -> LossReport:
    """Squared distance between the two views of each source sample.

    ``reduction="mean"`` averages ``||z_a - z_b||^2`` over the ``2n`` ordered
    positive pairs, the same normalization the MIO positive term uses
    (equal to ``1/n`` times the sum over unordered pairs).
    ``reduction="sum"`` is the plain sum over the ``n`` unordered pairs.
    Acts on the raw vectors, independent of the similarity mode.
    """
    if not lam >= 0:
        raise DomainError(f"lambda must be >= 0, got {lam}")
    if reduction not in ("mean", "sum"):
        raise DomainError(f"unknown reduction {reduction!r}")
    z = _check_batch(z, pairs)
    c = lam / pairs.n if reduction == "mean" else lam
    d = z[0::2] - z[1::2]
    value = c * tree_sum(tree_sum(d * d, axis=1))
    grad = np.empty_like(z)
    grad[0::2] = 2.0 * c * d
    grad[1::2] = -2.0 * c * d
    return LossReport(value=float(value), grad_z=grad, diagnostics={"l2_term": float(value)})


def mio_l2_loss(z, pairs: PairIndexSet, cfg: LossConfig) -> LossReport:
    base = mio_grad_z(z, pairs, cfg)
    if cfg.lam == 0:
        return base
    reg = l2_reg(z, pairs, cfg.lam)
    return LossReport(
        value=base.value + reg.value,
        grad_z=base.grad_z + reg.grad_z,
        diagnostics={**base.diagnostics, **reg.diagnostics},
    )


LOSSES: dict[str, Callable[..., LossReport]] = {
    "mio": mio_grad_z,
    "infonce": infonce_grad_z,
    "mio_l2": mio_l2_loss,
}


def get_loss(name: str) -> Callable[..., LossReport]:
    try:
        return LOSSES[name]
    except KeyError:
        raise DomainError(f"unknown loss {name!r}; choose from {sorted(LOSSES)}") from None


# ---------------------------------------------------------------------------
# closed forms for dot similarity at unit temperature


def _require_dot_unit(cfg: LossConfig | None):
    if cfg is not None and (cfg.mode != "dot" or cfg.tau != 1.0):
        raise DomainError("closed-form expressions are defined only for dot similarity with tau = 1")


def mio_anchor_grad(z, pairs: PairIndexSet, cfg: LossConfig | None = None) -> np.ndarray:
    """Per-anchor displacement of each feature vector under the MIO loss.

    Row ``o`` is ``-(1/T_P) [ (1 - p(o, o')) z_o' - 1/(T_P - 2) sum_i p(o, i) z_i ]``
    where ``p = sigmoid(<z_o, z_i>)`` and ``i`` runs over the negatives of
    ``o``. Only the terms with ``o`` as anchor are counted, so the full
    gradient from :func:`mio_grad_z` is exactly twice this.
    """
    _require_dot_unit(cfg)
    z = _check_batch(z, pairs)
    t_p = pairs.t_p
    S = z @ z.T
    idx = np.arange(pairs.n_views)
    out = (1.0 - sigmoid(S[idx, partner(idx)]))[:, None] * z[partner(idx)]
    if pairs.t_n:
        negs = pairs.negatives_by_anchor
        w = sigmoid(S[idx[:, None], negs])
        out = out - np.einsum("an,and->ad", w, z[negs]) / (t_p - 2)
    return -out / t_p


def infonce_displacement_weights(z, pairs: PairIndexSet, cfg: LossConfig | None = None) -> dict:
    """Weights of the InfoNCE gradient written as a combination of vectors.

    With ``P[a, b]`` the softmax probability that ``b`` is ``a``'s positive,
    the gradient for ``z_o`` is

        -(1/2n) [ w_pos[o] * z_o' - sum_j w_neg[o, j] * z_j ]

    with ``w_pos[o] = 2 - P[o, o'] - P[o', o]`` and
    ``w_neg[o, j] = P[o, j] + P[j, o]`` over the negatives ``j`` of ``o``.
    Returns the weights together with the assembled ``grad``.
    """
    _require_dot_unit(cfg)
    if pairs.n < 2:
        raise DomainError("InfoNCE needs n >= 2")
    z = _check_batch(z, pairs)
    v = pairs.n_views
    x = z @ z.T
    np.fill_diagonal(x, -np.inf)
    e = np.exp(x - np.max(x, axis=1, keepdims=True))
    P = e / e.sum(axis=1, keepdims=True)
    idx = np.arange(v)
    p = partner(idx)
    negs = pairs.negatives_by_anchor
    w_pos = 2.0 - P[idx, p] - P[p, idx]
    w_neg = P[idx[:, None], negs] + P[negs, idx[:, None]]
    grad = -(w_pos[:, None] * z[p] - np.einsum("an,and->ad", w_neg, z[negs])) / v
    return {"w_pos": w_pos, "w_neg": w_neg, "grad": grad}


def influence_factor(z_j, z_k, h_j, h_k) -> np.ndarray:
    """``z_j * ||h_k||_1 + z_k * ||h_j||_1`` (symmetric in the pair)."""
    z_j = np.asarray(z_j, dtype=np.float64)
    z_k = np.asarray(z_k, dtype=np.float64)
    if z_j.shape != z_k.shape or z_j.ndim != 1:
        raise DimensionError(f"z shapes differ: {z_j.shape} vs {z_k.shape}")
    h_j = np.asarray(h_j, dtype=np.float64)
    h_k = np.asarray(h_k, dtype=np.float64)
    if h_j.shape != h_k.shape or h_j.ndim != 1:
        raise DimensionError(f"h shapes differ: {h_j.shape} vs {h_k.shape}")
    return z_j * l1_norm(h_k) + z_k * l1_norm(h_j)


def _influence_contract(W: np.ndarray, z: np.ndarray, h1: np.ndarray) -> np.ndarray:
    """``sum_{j,i} W[j, i] * Q(j, i)`` using the bilinear form of ``Q``."""
    return tree_sum(z * (W @ h1)[:, None] + h1[:, None] * (W @ z), axis=0)


def _check_h(h, pairs):
    h = np.asarray(h, dtype=np.float64)
    if h.ndim != 2 or h.shape[0] != pairs.n_views:
        raise DimensionError(f"expected ({pairs.n_views}, F) hidden vectors, got {h.shape}")
    return h


def projector_grad_mio(z, h, pairs: PairIndexSet, cfg: LossConfig | None = None) -> np.ndarray:
    """Influence-weighted projector gradient of the MIO loss.

    ``-(1/T_P) sum_j [ (1 - sig(C_jk)) Q(j, k) - 1/(T_P - 2) sum_i sig(C_ji) Q(j, i) ]``
    with ``k`` the partner of ``j`` and ``i`` over its negatives. A length-D
    diagnostic vector, not the gradient of any single weight matrix.
    """
    _require_dot_unit(cfg)
    z = _check_batch(z, pairs)
    h = _check_h(h, pairs)
    h1 = tree_sum(np.abs(h), axis=1)
    S = z @ z.T
    idx = np.arange(pairs.n_views)
    W = np.zeros_like(S)
    W[idx, partner(idx)] = 1.0 - sigmoid(S[idx, partner(idx)])
    if pairs.t_n:
        negs = pairs.negatives_by_anchor
        W[idx[:, None], negs] = -sigmoid(S[idx[:, None], negs]) / (pairs.t_p - 2)
    return -_influence_contract(W, z, h1) / pairs.t_p


def projector_grad_infonce(z, h, pairs: PairIndexSet, cfg: LossConfig | None = None) -> np.ndarray:
    """Softmax-weighted projector gradient of InfoNCE.

    ``-(1/2n) sum_j [ Q(j, k) - sum_i P[j, i] Q(j, i) ]`` where ``P[j, :]`` is
    the softmax of ``C_j.`` over every ``i != j``.
    """
    _require_dot_unit(cfg)
    if pairs.n < 2:
        raise DomainError("InfoNCE needs n >= 2")
    z = _check_batch(z, pairs)
    h = _check_h(h, pairs)
    h1 = tree_sum(np.abs(h), axis=1)
    x = z @ z.T
    np.fill_diagonal(x, -np.inf)
    e = np.exp(x - np.max(x, axis=1, keepdims=True))
    P = e / e.sum(axis=1, keepdims=True)
    idx = np.arange(pairs.n_views)
    W = -P
    W[idx, partner(idx)] += 1.0
    return -_influence_contract(W, z, h1) / pairs.n_views
