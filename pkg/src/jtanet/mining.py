"""Online triplet mining inside a batch of embeddings.

Every ordered same-label pair ``(a, p)`` with ``a != p`` is an anchor-positive
pair.  For each pair a negative ``n`` (different label) is chosen from the
triplet score ``d(a, p) - d(a, n) + margin`` computed on squared distances of
the unit-normalised embeddings:

* ``hard``        the negative with the largest score (lowest index on ties),
                  kept only if that score is > 0;
* ``semi_hard``   uniform among negatives with ``0 < score <= margin``;
* ``random_hard`` uniform among negatives with ``score > 0``.

Pairs without a qualifying negative are dropped.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

STRATEGIES = ("hard", "semi_hard", "random_hard")


@dataclass
class TripletSet:
    anchors: np.ndarray
    positives: np.ndarray
    negatives: np.ndarray
    strategy: str
    margin: float
    single_class: bool = False

    def __len__(self) -> int:
        return len(self.anchors)

    def as_array(self) -> np.ndarray:
        return np.stack([self.anchors, self.positives, self.negatives], axis=1)


def normalize_embeddings(e: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Scale rows to unit length; returns ``(normalised, zero_row_mask)``.

    All-zero rows pass through unchanged and are reported in the mask.
    """
    e = np.asarray(e)
    if e.dtype.kind != "f":
        e = e.astype(np.float64)
    norms = np.sqrt((e * e).sum(axis=1))
    zero = norms == 0
    if zero.any():
        warnings.warn(f"{int(zero.sum())} zero embedding row(s) left unnormalised", RuntimeWarning, stacklevel=2)
    out = e / np.where(zero, 1.0, norms)[:, None]
    return out, zero


def distance_matrix(e: np.ndarray) -> np.ndarray:
    """Symmetric (B, B) matrix of squared Euclidean distances, exact zero diagonal."""
    sq = (e * e).sum(axis=1)
    d = sq[:, None] + sq[None, :] - 2.0 * (e @ e.T)
    d = np.maximum(d, 0.0)
    d = 0.5 * (d + d.T)
    np.fill_diagonal(d, 0.0)
    return d


def anchor_positive_pairs(labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    labels = np.asarray(labels)
    same = labels[:, None] == labels[None, :]
    np.fill_diagonal(same, False)
    a, p = np.nonzero(same)
    return a, p


def mine_triplets(
    e: np.ndarray,
    labels: np.ndarray,
    strategy: str = "semi_hard",
    margin: float = 0.5,
    rng_seed: int | np.random.Generator | None = 0,
    dist: np.ndarray | None = None,
) -> TripletSet:
    """Select one negative per anchor-positive pair.

    ``e`` should already be normalised; ``dist`` may pass a precomputed
    :func:`distance_matrix` of ``e``.
    """
    if strategy not in STRATEGIES:
        raise ValueError(f"strategy must be one of {STRATEGIES}, got {strategy!r}")
    labels = np.asarray(labels)
    empty = np.zeros(0, dtype=np.int64)
    if len(np.unique(labels)) < 2:
        return TripletSet(empty, empty.copy(), empty.copy(), strategy, margin, single_class=True)
    d = distance_matrix(e) if dist is None else dist
    a, p = anchor_positive_pairs(labels)
    if len(a) == 0:
        return TripletSet(empty, empty.copy(), empty.copy(), strategy, margin)

    neg_mask = labels[a][:, None] != labels[None, :]
    scores = d[a, p][:, None] - d[a] + margin

    if strategy == "hard":
        masked = np.where(neg_mask, scores, -np.inf)
        n = masked.argmax(axis=1)
        keep = masked[np.arange(len(a)), n] > 0
    else:
        if strategy == "semi_hard":
            ok = neg_mask & (scores > 0) & (scores <= margin)
        else:
            ok = neg_mask & (scores > 0)
        rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
        # uniform choice among qualifiers: argmax of iid uniform keys
        keys = np.where(ok, rng.random(ok.shape), -1.0)
        n = keys.argmax(axis=1)
        keep = ok.any(axis=1)
    return TripletSet(
        a[keep].astype(np.int64),
        p[keep].astype(np.int64),
        n[keep].astype(np.int64),
        strategy,
        margin,
    )
