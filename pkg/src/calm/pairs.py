"""Pair enumeration, negative sampling and scoring.

The evaluation protocol enumerates positive pairs exhaustively and draws
negative pairs per class at a fixed negative-to-positive ratio (without
replacement, capped at the number of available cross-class pairs).  Every
pair stores the lower index first; a separate anchor_class field carries
the class the pair is attributed to, which for quota-sampled negatives is
the class whose quota drew it (a pair drawn by two different anchors is
kept once per anchor).

Randomness uses numpy's PCG64 generator seeded per (seed, class) through
SeedSequence, so output is reproducible across platforms and independent
of class iteration order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import EmbeddingSet, cos_to_l2
from .errors import IndexOutOfRange, SingleClass

__all__ = [
    "PairList",
    "ScoredPairSet",
    "enumerate_positive_pairs",
    "sample_negative_pairs",
    "exhaustive_pairs",
    "score_pairs",
]


@dataclass
class PairList:
    """Unordered sample pairs with class attribution.

    index_a < index_b within each entry; entries are kept in canonical
    order (anchor_class, index_a, index_b) so downstream reductions are
    deterministic regardless of how the list was produced.
    """

    index_a: np.ndarray
    index_b: np.ndarray
    anchor_class: np.ndarray
    is_positive: np.ndarray

    def __post_init__(self):
        self.index_a = np.ascontiguousarray(self.index_a, dtype=np.int64)
        self.index_b = np.ascontiguousarray(self.index_b, dtype=np.int64)
        self.anchor_class = np.ascontiguousarray(self.anchor_class, dtype=np.int64)
        self.is_positive = np.ascontiguousarray(self.is_positive, dtype=bool)

    def __len__(self) -> int:
        return self.index_a.shape[0]

    def sorted_canonical(self) -> "PairList":
        order = np.lexsort((self.index_b, self.index_a, self.anchor_class))
        return PairList(
            self.index_a[order],
            self.index_b[order],
            self.anchor_class[order],
            self.is_positive[order],
        )

    @staticmethod
    def concatenate(parts: list["PairList"]) -> "PairList":
        if not parts:
            return PairList(
                np.empty(0, np.int64), np.empty(0, np.int64),
                np.empty(0, np.int64), np.empty(0, bool),
            )
        return PairList(
            np.concatenate([p.index_a for p in parts]),
            np.concatenate([p.index_b for p in parts]),
            np.concatenate([p.anchor_class for p in parts]),
            np.concatenate([p.is_positive for p in parts]),
        )


@dataclass
class ScoredPairSet:
    """A PairList with per-entry cosine similarity and sphere distance."""

    pairs: PairList
    similarity: np.ndarray
    distance: np.ndarray

    def __len__(self) -> int:
        return len(self.pairs)

    @property
    def positive_mask(self) -> np.ndarray:
        return self.pairs.is_positive

    @property
    def n_positive(self) -> int:
        return int(np.count_nonzero(self.pairs.is_positive))

    @property
    def n_negative(self) -> int:
        return len(self.pairs) - self.n_positive

    def positive_distances(self, class_id: int | None = None) -> np.ndarray:
        mask = self.pairs.is_positive
        if class_id is not None:
            mask = mask & (self.pairs.anchor_class == class_id)
        return self.distance[mask]

    def negative_distances(self, anchor_class: int | None = None) -> np.ndarray:
        mask = ~self.pairs.is_positive
        if anchor_class is not None:
            mask = mask & (self.pairs.anchor_class == anchor_class)
        return self.distance[mask]


def _class_positive_pairs(members: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    ia, ib = np.triu_indices(members.shape[0], k=1)
    return members[ia], members[ib]


def enumerate_positive_pairs(emb: EmbeddingSet) -> PairList:
    """All same-class unordered pairs; a class of n members yields n(n-1)/2."""
    parts = []
    for class_id in emb.classes():
        members = emb.class_indices(class_id)
        if members.shape[0] < 2:
            continue
        a, b = _class_positive_pairs(members)
        parts.append(
            PairList(a, b, np.full(a.shape[0], class_id, np.int64), np.ones(a.shape[0], bool))
        )
    return PairList.concatenate(parts).sorted_canonical()


def sample_negative_pairs(emb: EmbeddingSet, ratio: int, seed: int) -> PairList:
    """Per-class negatives at `ratio` times that class's positive-pair count.

    For class j with p_j positive pairs, draws min(ratio * p_j, available)
    cross-class pairs anchored at j, uniformly without replacement.
    Deterministic given (emb, ratio, seed).
    """
    if ratio < 1:
        raise ValueError(f"ratio must be >= 1, got {ratio}")
    classes = emb.classes()
    if classes.shape[0] < 2:
        raise SingleClass("need at least two classes to form negative pairs")
    all_idx = np.arange(emb.n, dtype=np.int64)
    seed_u64 = int(seed) & 0xFFFFFFFFFFFFFFFF
    parts = []
    for class_id in classes:
        members = emb.class_indices(class_id)
        n_j = members.shape[0]
        p_j = n_j * (n_j - 1) // 2
        if p_j == 0:
            continue
        others = all_idx[emb.labels != class_id]
        available = n_j * others.shape[0]
        k = min(ratio * p_j, available)
        rng = np.random.default_rng(np.random.SeedSequence((seed_u64, int(class_id))))
        flat = rng.choice(available, size=k, replace=False)
        q, r = np.divmod(flat, others.shape[0])
        a = members[q]
        b = others[r]
        lo = np.minimum(a, b)
        hi = np.maximum(a, b)
        parts.append(
            PairList(lo, hi, np.full(k, class_id, np.int64), np.zeros(k, bool))
        )
    return PairList.concatenate(parts).sorted_canonical()


def exhaustive_pairs(emb: EmbeddingSet) -> PairList:
    """All N(N-1)/2 unordered pairs; negatives anchored at the lower index's class."""
    ia, ib = np.triu_indices(emb.n, k=1)
    ia = ia.astype(np.int64)
    ib = ib.astype(np.int64)
    is_pos = emb.labels[ia] == emb.labels[ib]
    anchor = emb.labels[ia]
    return PairList(ia, ib, anchor, is_pos).sorted_canonical()


def all_negative_pairs(emb: EmbeddingSet) -> PairList:
    """Every cross-class pair once per endpoint class (two entries per pair).

    This is the exhaustive analogue of the per-class quota sampling: class
    j's anchored negatives are all pairs touching it, so every class keeps
    a negative pool regardless of sample ordering.  Pooled statistics are
    unaffected by the duplication (every negative appears exactly twice).
    """
    classes = emb.classes()
    if classes.shape[0] < 2:
        raise SingleClass("need at least two classes to form negative pairs")
    all_idx = np.arange(emb.n, dtype=np.int64)
    parts = []
    for class_id in classes:
        members = emb.class_indices(class_id)
        others = all_idx[emb.labels != class_id]
        a = np.repeat(members, others.shape[0])
        b = np.tile(others, members.shape[0])
        lo = np.minimum(a, b)
        hi = np.maximum(a, b)
        parts.append(
            PairList(lo, hi, np.full(lo.shape[0], class_id, np.int64), np.zeros(lo.shape[0], bool))
        )
    return PairList.concatenate(parts).sorted_canonical()


def score_pairs(emb: EmbeddingSet, pairs: PairList) -> ScoredPairSet:
    """Attach cosine similarity and sphere distance to every pair."""
    if len(pairs) and (
        int(pairs.index_a.min(initial=0)) < 0 or int(pairs.index_b.max(initial=0)) >= emb.n
    ):
        raise IndexOutOfRange(f"pair indices outside [0, {emb.n})")
    va = emb.vectors[pairs.index_a]
    vb = emb.vectors[pairs.index_b]
    s = np.clip(np.einsum("ij,ij->i", va, vb), -1.0, 1.0)
    d = cos_to_l2(s)
    return ScoredPairSet(pairs, s, np.atleast_1d(d))
