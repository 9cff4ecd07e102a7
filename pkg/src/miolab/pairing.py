"""Ordered positive/negative pair bookkeeping for a two-view batch.

Views are interleaved: rows ``2k`` and ``2k + 1`` are the two augmentations
of source sample ``k``, so ``partner(i) == i ^ 1``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .numerics import DimensionError, DomainError

__all__ = ["PairIndexSet", "build_pairs", "partner", "false_negative_mask"]


def partner(i):
    return np.bitwise_xor(i, 1)


@dataclass(frozen=True)
class PairIndexSet:
    """Pair indices for ``n`` source samples (``2n`` views).

    ``positives`` is a ``(2n, 2)`` array of ordered pairs ``(a, partner(a))``.
    ``negatives_by_anchor`` is ``(2n, 2n - 2)``: row ``a`` lists every view
    except ``a`` and ``partner(a)`` in increasing order.
    """

    n: int
    positives: np.ndarray = field(repr=False)
    negatives_by_anchor: np.ndarray = field(repr=False)

    @property
    def n_views(self) -> int:
        return 2 * self.n

    @property
    def t_p(self) -> int:
        return int(self.positives.shape[0])

    @property
    def t_n(self) -> int:
        return int(self.negatives_by_anchor.size)

    @property
    def negatives(self) -> np.ndarray:
        """All ordered negative pairs as a ``(t_n, 2)`` array, anchor-major."""
        anchors = np.repeat(np.arange(self.n_views), self.negatives_by_anchor.shape[1])
        return np.stack([anchors, self.negatives_by_anchor.ravel()], axis=1)

    def positive_mask(self) -> np.ndarray:
        m = np.zeros((self.n_views, self.n_views), dtype=bool)
        m[self.positives[:, 0], self.positives[:, 1]] = True
        return m

    def negative_mask(self) -> np.ndarray:
        m = ~np.eye(self.n_views, dtype=bool)
        m &= ~self.positive_mask()
        return m


def build_pairs(n: int) -> PairIndexSet:
    n = int(n)
    if n < 1:
        raise DomainError(f"batch size must be >= 1, got {n}")
    v = 2 * n
    idx = np.arange(v)
    positives = np.stack([idx, partner(idx)], axis=1)
    # view j sits in source block j // 2; drop the anchor's own block
    grid = np.broadcast_to(idx, (v, v))
    keep = (grid // 2) != (idx[:, None] // 2)
    negatives = grid[keep].reshape(v, v - 2)
    positives.setflags(write=False)
    negatives.setflags(write=False)
    return PairIndexSet(n=n, positives=positives, negatives_by_anchor=negatives)


def false_negative_mask(pairs: PairIndexSet, labels) -> np.ndarray:
    """Boolean ``(2n, 2n - 2)`` mask aligned with ``negatives_by_anchor``.

    True where the anchor and the negative partner share a class id.
    """
    labels = np.asarray(labels)
    if labels.shape != (pairs.n_views,):
        raise DimensionError(f"expected {pairs.n_views} labels, got shape {labels.shape}")
    return labels[:, None] == labels[pairs.negatives_by_anchor]
