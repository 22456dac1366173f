"""Margin losses on scored pair batches and their analytic gradients.

Every loss here is a function of the batch's pairwise cosine similarities,
so each returns the loss value together with dL/ds per scored pair.
:func:`grad_wrt_embeddings` chains those through s = u . v and projects
onto the sphere's tangent space, giving the Riemannian gradient the
trainer steps along.

The margin regularizer penalizes hard positives (similarity at or below
the positive margin) and hard negatives (similarity at or above the
negative margin), each term averaged over the count of selected pairs
only; an empty selection contributes exactly 0.  Selection uses closed
inequalities: a pair sitting exactly on its margin is selected and
contributes 0 value.  The selected-pair counts are treated as constants
under differentiation (they are locally constant almost everywhere).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import EmbeddingSet
from .errors import NoValidTriplets, ShapeMismatch
from .pairs import PairList, ScoredPairSet

__all__ = [
    "CamConfig",
    "LossResult",
    "cam_loss",
    "contrastive_loss",
    "triplet_loss",
    "final_loss",
    "grad_wrt_embeddings",
]


@dataclass(frozen=True)
class CamConfig:
    """Margins and weights of the calibration regularizer.

    m_plus / m_minus are cosine margins in (-1, 1) with m_minus < m_plus:
    negatives must be required to be less similar than positives.
    """

    m_plus: float
    m_minus: float
    lambda_plus: float = 1.0
    lambda_minus: float = 1.0

    def __post_init__(self):
        for name in ("m_plus", "m_minus"):
            v = getattr(self, name)
            if not -1.0 < v < 1.0:
                raise ValueError(f"{name} must lie in (-1, 1), got {v}")
        if not self.m_minus < self.m_plus:
            raise ValueError(
                f"m_minus ({self.m_minus}) must be < m_plus ({self.m_plus})"
            )
        if self.lambda_plus < 0 or self.lambda_minus < 0:
            raise ValueError("lambda weights must be >= 0")


@dataclass
class LossResult:
    """Loss value with per-pair similarity gradient and selection counts.

    dsim is aligned with the entries of the ScoredPairSet the loss was
    evaluated on.  pos_selected / neg_selected count the pairs that were
    active in the positive / negative term (for the hinge losses: the
    violating pairs).
    """

    value: float
    dsim: np.ndarray
    pos_selected: int = 0
    neg_selected: int = 0


def _zero_result(n: int) -> LossResult:
    return LossResult(0.0, np.zeros(n))


def cam_loss(
    scored: ScoredPairSet,
    cfg: CamConfig,
    m_plus_per_class: dict[int, float] | None = None,
) -> LossResult:
    """Hard-pair margin regularizer on a scored batch.

    With `m_plus_per_class` set, each positive pair uses its anchor
    class's margin instead of cfg.m_plus (classes missing from the map
    fall back to cfg.m_plus); the negative margin is always shared.
    """
    s = scored.similarity
    pos = scored.pairs.is_positive
    n = s.shape[0]
    if m_plus_per_class is None:
        m_plus = np.full(n, cfg.m_plus)
    else:
        anchors = scored.pairs.anchor_class
        m_plus = np.array(
            [m_plus_per_class.get(int(a), cfg.m_plus) for a in anchors]
        )
    pos_sel = pos & (s <= m_plus)
    neg_sel = ~pos & (s >= cfg.m_minus)
    n_pos = int(np.count_nonzero(pos_sel))
    n_neg = int(np.count_nonzero(neg_sel))
    value = 0.0
    dsim = np.zeros(n)
    if n_pos > 0:
        value += cfg.lambda_plus * float(np.sum(m_plus[pos_sel] - s[pos_sel])) / n_pos
        dsim[pos_sel] = -cfg.lambda_plus / n_pos
    if n_neg > 0:
        value += cfg.lambda_minus * float(np.sum(s[neg_sel] - cfg.m_minus)) / n_neg
        dsim[neg_sel] = cfg.lambda_minus / n_neg
    return LossResult(value, dsim, n_pos, n_neg)


def contrastive_loss(
    scored: ScoredPairSet,
    pos_margin: float = 0.0,
    neg_margin: float = 0.5,
) -> LossResult:
    """Pull positives toward similarity 1, push negatives below neg_margin.

    Positive term: mean over positive pairs of max(0, (1 - pos_margin) - s).
    Negative term: mean over negative pairs of max(0, s - neg_margin).
    Either term is 0 when the batch has no pairs of that polarity.
    """
    s = scored.similarity
    pos = scored.pairs.is_positive
    n = s.shape[0]
    dsim = np.zeros(n)
    value = 0.0
    n_pos_active = n_neg_active = 0
    n_pos = int(np.count_nonzero(pos))
    if n_pos > 0:
        active = pos & (s < 1.0 - pos_margin)
        n_pos_active = int(np.count_nonzero(active))
        value += float(np.sum((1.0 - pos_margin) - s[active])) / n_pos
        dsim[active] = -1.0 / n_pos
    n_neg = n - n_pos
    if n_neg > 0:
        active = ~pos & (s > neg_margin)
        n_neg_active = int(np.count_nonzero(active))
        value += float(np.sum(s[active] - neg_margin)) / n_neg
        dsim[active] += 1.0 / n_neg
    return LossResult(value, dsim, n_pos_active, n_neg_active)


def triplet_loss(
    scored: ScoredPairSet,
    labels: np.ndarray,
    margin: float = 0.3,
) -> LossResult:
    """Batch-all triplet hinge in similarity space.

    Triplets (a, p, n) are formed from every ordered same-class pair
    (a, p) combined with every sample n of a different class; the hinge
    max(0, s_an - s_ap + margin) is averaged over all formed triplets,
    with subgradient 0 at inactive ones.  Requires the scored set to
    cover all within-batch pairs.
    """
    labels = np.asarray(labels, dtype=np.int64)
    n_samples = labels.shape[0]
    s_lookup: dict[tuple[int, int], int] = {}
    for idx in range(len(scored)):
        a = int(scored.pairs.index_a[idx])
        b = int(scored.pairs.index_b[idx])
        s_lookup[(a, b)] = idx
    sim = np.zeros((n_samples, n_samples))
    for (a, b), idx in s_lookup.items():
        sim[a, b] = sim[b, a] = scored.similarity[idx]

    same = labels[:, None] == labels[None, :]
    np.fill_diagonal(same, False)
    diff = labels[:, None] != labels[None, :]
    count = int(np.sum(same.sum(axis=1) * diff.sum(axis=1)))
    if count == 0:
        raise NoValidTriplets("batch has no (anchor, positive, negative) triplet")

    value = 0.0
    n_active = 0
    dsim = np.zeros(len(scored))
    for a in range(n_samples):
        p_idx = np.flatnonzero(same[a])
        n_idx = np.flatnonzero(diff[a])
        if p_idx.shape[0] == 0 or n_idx.shape[0] == 0:
            continue
        gap = sim[a, n_idx][None, :] - sim[a, p_idx][:, None] + margin
        active = gap > 0.0
        value += float(np.sum(gap[active]))
        n_active += int(np.count_nonzero(active))
        pos_hits = active.sum(axis=1)  # per positive of this anchor
        neg_hits = active.sum(axis=0)  # per negative of this anchor
        for p, hits in zip(p_idx, pos_hits):
            if hits:
                dsim[s_lookup[(min(a, int(p)), max(a, int(p)))]] -= hits / count
        for m, hits in zip(n_idx, neg_hits):
            if hits:
                dsim[s_lookup[(min(a, int(m)), max(a, int(m)))]] += hits / count
    return LossResult(value / count, dsim, n_active, n_active)


def final_loss(base: LossResult, reg: LossResult) -> LossResult:
    """Additive combination: values and per-pair gradients sum elementwise."""
    if base.dsim.shape != reg.dsim.shape:
        raise ShapeMismatch(
            f"gradient shapes differ: {base.dsim.shape} vs {reg.dsim.shape}"
        )
    return LossResult(
        base.value + reg.value,
        base.dsim + reg.dsim,
        base.pos_selected + reg.pos_selected,
        base.neg_selected + reg.neg_selected,
    )


def grad_wrt_embeddings(
    emb: EmbeddingSet,
    pairs: PairList,
    dsim: np.ndarray,
) -> np.ndarray:
    """Chain per-pair dL/ds through s = u . v into a tangent (N, M) gradient.

    The Euclidean gradient of sample u accumulates dL/ds * v over its
    pairs (in index order, so the reduction is deterministic) and is then
    projected onto the tangent space at u: g <- g - (g . u) u.
    """
    dsim = np.asarray(dsim, dtype=np.float64)
    if dsim.shape != (len(pairs),):
        raise ShapeMismatch(f"dsim shape {dsim.shape} != ({len(pairs)},)")
    grad = np.zeros_like(emb.vectors)
    np.add.at(grad, pairs.index_a, dsim[:, None] * emb.vectors[pairs.index_b])
    np.add.at(grad, pairs.index_b, dsim[:, None] * emb.vectors[pairs.index_a])
    radial = np.einsum("ij,ij->i", grad, emb.vectors)
    grad -= radial[:, None] * emb.vectors
    return grad
