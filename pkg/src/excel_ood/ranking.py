"""Class-rank permutations and their one-hot matrix view.

A logit vector of length C induces a ranking of the C classes from highest
to lowest logit. Ties are broken by ascending class index so that rankings
(and everything built on them) are reproducible.
"""

from __future__ import annotations

import numpy as np

from .errors import NonFiniteValue, ShapeError


def rank_classes(logits: np.ndarray) -> np.ndarray:
    """Return class indices sorted by logit, highest first.

    Entry j of the result is the class occupying rank j+1. Equal logits
    rank lower-index classes first.
    """
    v = np.asarray(logits, dtype=np.float64)
    if v.ndim != 1:
        raise ShapeError(f"expected a 1-D logit vector, got ndim={v.ndim}")
    if v.shape[0] < 2:
        raise ShapeError("ranking needs at least 2 classes")
    if not np.all(np.isfinite(v)):
        raise NonFiniteValue("logit vector contains non-finite entries")
    return rank_classes_matrix(v[None, :])[0]


def rank_classes_matrix(logits: np.ndarray) -> np.ndarray:
    """Row-wise rank_classes for an (N, C) matrix. Returns an (N, C) int array."""
    m = np.asarray(logits, dtype=np.float64)
    # stable sort on the negated logits keeps ties in ascending class order
    return np.argsort(-m, axis=-1, kind="stable")


def to_one_hot(perm: np.ndarray) -> np.ndarray:
    """Expand a rank permutation into its permutation matrix.

    Rows index classes, columns index ranks; entry (i, j) is 1 exactly when
    class i sits at rank j+1.
    """
    p = np.asarray(perm, dtype=np.int64)
    if p.ndim != 1:
        raise ShapeError(f"expected a 1-D permutation, got ndim={p.ndim}")
    c = p.shape[0]
    if not np.array_equal(np.sort(p), np.arange(c)):
        raise ShapeError("input is not a permutation of [0, C)")
    out = np.zeros((c, c), dtype=np.int64)
    out[p, np.arange(c)] = 1
    return out
