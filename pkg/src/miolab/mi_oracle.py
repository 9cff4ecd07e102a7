"""Exact checks of the MIO-loss / mutual-information inequality on finite
alphabets.

Positive pairs are drawn from a joint ``p(a, b)``; negative pairs from the
product of its row marginals. With the plug-in score
``s(a, b) = p(a, b) / (p(a) p(b))`` the expected MIO loss can be enumerated
cell by cell and compared with ``-I_pos + I_neg`` where ``I_pos`` is the
mutual information of the joint and ``I_neg`` is the same log-ratio
averaged under the product measure (``-KL(p(a)p(b) || p(a, b))``, never
positive).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import DimensionError, DomainError, Rng, tree_sum

__all__ = [
    "DiscreteJoint",
    "BoundReport",
    "mutual_information",
    "plug_in_scores",
    "expected_mio_loss",
    "verify_bound",
    "random_joint",
    "RATIO_FLOOR",
]

RATIO_FLOOR = 1e-300


def _sum2(a) -> float:
    return float(tree_sum(tree_sum(a, axis=1)))


@dataclass(frozen=True)
class DiscreteJoint:
    p_joint: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.p_joint, dtype=np.float64)
        if p.ndim != 2 or p.shape[0] != p.shape[1] or p.shape[0] < 1:
            raise DomainError(f"joint must be a square k x k matrix, got shape {p.shape}")
        if not np.all(np.isfinite(p)) or np.any(p < 0):
            raise DomainError("joint entries must be finite and non-negative")
        if abs(_sum2(p) - 1.0) > 1e-12:
            raise DomainError(f"joint sums to {_sum2(p)!r}, not 1")
        object.__setattr__(self, "p_joint", p)

    @property
    def k(self) -> int:
        return self.p_joint.shape[0]

    @property
    def p_marg(self) -> np.ndarray:
        return tree_sum(self.p_joint, axis=1)

    @property
    def p_product(self) -> np.ndarray:
        m = self.p_marg
        return np.outer(m, m)


@dataclass(frozen=True)
class BoundReport:
    k: int
    loss: float
    i_pos: float
    i_neg_tilde: float
    slack: float


def _xlogy(x, y):
    # 0 * log(anything) := 0
    out = np.zeros_like(x)
    nz = x > 0
    out[nz] = x[nz] * np.log(y[nz])
    return out


def mutual_information(j: DiscreteJoint) -> float:
    """``sum p(a, b) ln(p(a, b) / (p(a) p(b)))`` in nats."""
    prod = j.p_product
    ratio = np.where(prod > 0, j.p_joint / np.where(prod > 0, prod, 1.0), 1.0)
    return _sum2(_xlogy(j.p_joint, ratio))


def plug_in_scores(j: DiscreteJoint) -> np.ndarray:
    """Density-ratio score table; cells with zero joint mass get ``RATIO_FLOOR``."""
    prod = j.p_product
    if np.any(j.p_marg <= 0):
        raise DomainError("plug-in scores need strictly positive marginals")
    s = j.p_joint / prod
    return np.where(j.p_joint > 0, s, RATIO_FLOOR)


def _check_scores(j: DiscreteJoint, s) -> np.ndarray:
    s = np.asarray(s, dtype=np.float64)
    if s.shape != (j.k, j.k):
        raise DimensionError(f"score table shape {s.shape} does not match k={j.k}")
    if np.any(~(s > 0)):
        raise DomainError("scores must be strictly positive")
    return s


def expected_mio_loss(j: DiscreteJoint, s) -> float:
    """Exact expectation of the MIO loss when a pair is scored
    ``P(pos | a, b) = s / (1 + s)``.

    ``-E_joint[ln(s / (1 + s))] - E_product[ln(1 / (1 + s))]``; both terms are
    written with ``log1p`` so that tiny and huge scores stay accurate.
    """
    s = _check_scores(j, s)
    ls = np.log(s)
    # ln(s/(1+s)) = -ln(1 + 1/s);  ln(1/(1+s)) = -ln(1 + s)
    neg_log_pos = np.where(ls > 0, np.log1p(np.exp(-ls)), -ls + np.log1p(s))
    neg_log_neg = np.where(ls > 0, ls + np.log1p(np.exp(-ls)), np.log1p(s))
    pos_part = _sum2(np.where(j.p_joint > 0, j.p_joint * neg_log_pos, 0.0))
    neg_part = _sum2(np.where(j.p_product > 0, j.p_product * neg_log_neg, 0.0))
    return pos_part + neg_part


def verify_bound(j: DiscreteJoint) -> BoundReport:
    """Evaluate both sides of ``L >= -I_pos + I_neg`` under plug-in scores."""
    if np.any(j.p_marg <= 0):
        raise DomainError("bound check needs strictly positive marginals")
    s = plug_in_scores(j)
    loss = expected_mio_loss(j, s)
    i_pos = mutual_information(j)
    i_neg = _sum2(j.p_product * np.log(s))
    return BoundReport(k=j.k, loss=loss, i_pos=i_pos, i_neg_tilde=i_neg, slack=loss - (-i_pos + i_neg))


def random_joint(k: int, rng: Rng, alpha: float = 1.0) -> DiscreteJoint:
    """Flat Dirichlet(alpha) draw over the ``k * k`` cells."""
    if k < 2:
        raise DomainError(f"alphabet size must be >= 2, got {k}")
    p = rng.generator.dirichlet(np.full(k * k, alpha)).reshape(k, k)
    p = p / _sum2(p)
    return DiscreteJoint(p)
