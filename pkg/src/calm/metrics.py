"""Calibration-consistency metrics on scored pair sets.

A distance threshold d yields two one-sided rates for each class: the
sensitivity psi (fraction of its positive pairs at distance <= d) and the
specificity phi (fraction of its anchored negative pairs at distance > d).
Both are folded into one utility score

    U = (1 + c^2) * phi * psi / (c^2 * phi + psi),        U(0, 0) := 0,

a weighted harmonic mean that is 0 when either side is perfectly wrong and
1 when both are perfect.  The operating-point-inconsistency score (OPIS)
is the weighted mean squared gap between per-class utility curves and the
pooled curve, averaged over a calibration range [d_min, d_max] derived
from a target false-accept-rate band.  epsilon-OPIS is the analogous gap
between the pooled best and worst epsilon-percent class groups.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .core import EmbeddingSet
from .errors import (
    DegenerateRange,
    EmptyGroup,
    GridMismatch,
    InsufficientPairs,
    OutOfRange,
)
from .pairs import (
    PairList,
    ScoredPairSet,
    all_negative_pairs,
    enumerate_positive_pairs,
    sample_negative_pairs,
    score_pairs,
)

logger = logging.getLogger(__name__)

POOLED = "pooled"

_trapezoid = getattr(np, "trapezoid", None) or np.trapz


@dataclass
class CalibrationRange:
    """Distance interval matched to a false-accept-rate band."""

    d_min: float
    d_max: float
    far_lo: float
    far_hi: float

    def __post_init__(self):
        if not (0.0 <= self.d_min < self.d_max <= 2.0):
            raise DegenerateRange(
                f"need 0 <= d_min < d_max <= 2, got [{self.d_min}, {self.d_max}]"
            )

    @property
    def width(self) -> float:
        return self.d_max - self.d_min


@dataclass
class UtilityCurve:
    """Utility sampled on a uniform distance grid for one class (or pooled)."""

    grid: np.ndarray
    values: np.ndarray
    owner: int | str

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=np.float64)
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.grid.shape[0] < 2 or self.grid.shape != self.values.shape:
            raise GridMismatch("curve needs G >= 2 matching grid/value samples")

    def mean_utility(self) -> float:
        return float(np.mean(self.values))


@dataclass
class OpisReport:
    """OPIS with its per-class decomposition.

    opis equals the w-weighted mean of per_class_contribution, where each
    contribution is the mean squared utility gap of that class over the
    calibration range.
    """

    opis: float
    class_ids: np.ndarray
    per_class_contribution: np.ndarray
    weights: np.ndarray
    epsilon_opis: list[tuple[float, float]] = field(default_factory=list)


def utility(phi, psi, c: float = 1.0):
    """Combined utility of specificity phi and sensitivity psi (scalar or array)."""
    if c <= 0.0:
        raise OutOfRange(f"trade-off weight c must be > 0, got {c}")
    phi = np.asarray(phi, dtype=np.float64)
    psi = np.asarray(psi, dtype=np.float64)
    if np.any(phi < 0) or np.any(phi > 1) or np.any(psi < 0) or np.any(psi > 1):
        raise OutOfRange("rates must lie in [0, 1]")
    den = c * c * phi + psi
    with np.errstate(invalid="ignore", divide="ignore"):
        u = np.where(den > 0.0, (1.0 + c * c) * phi * psi / np.where(den > 0, den, 1.0), 0.0)
    return float(u) if u.ndim == 0 else u


def class_rates(scored: ScoredPairSet, class_id: int, d: float) -> tuple[float, float]:
    """(phi, psi) for one class at a single distance threshold."""
    pos = scored.positive_distances(class_id)
    neg = scored.negative_distances(class_id)
    if pos.shape[0] == 0 or neg.shape[0] == 0:
        raise InsufficientPairs(
            f"class {class_id} has {pos.shape[0]} positive / {neg.shape[0]} negative pairs"
        )
    psi = float(np.count_nonzero(pos <= d)) / pos.shape[0]
    phi = float(np.count_nonzero(neg > d)) / neg.shape[0]
    return phi, psi


def _rates_on_grid(pos_d: np.ndarray, neg_d: np.ndarray, grid: np.ndarray):
    """Vectorized (phi, psi) along a grid; counts are inclusive at the threshold."""
    pos_sorted = np.sort(pos_d)
    neg_sorted = np.sort(neg_d)
    psi = np.searchsorted(pos_sorted, grid, side="right") / pos_sorted.shape[0]
    phi = 1.0 - np.searchsorted(neg_sorted, grid, side="right") / neg_sorted.shape[0]
    return phi, psi


def calibration_range_from_far(
    scored: ScoredPairSet, far_lo: float, far_hi: float
) -> CalibrationRange:
    """Distance interval whose endpoints hit the target FAR band.

    FAR(d) is the fraction of all negative pairs at distance <= d; the
    endpoints are the empirical quantiles of the negative distances at
    levels far_lo and far_hi, linearly interpolated between order
    statistics (so n*far at an integer k lands exactly on the k-th
    smallest distance).
    """
    if not (0.0 < far_lo < far_hi <= 1.0):
        raise OutOfRange(f"need 0 < far_lo < far_hi <= 1, got ({far_lo}, {far_hi})")
    neg = scored.negative_distances()
    if neg.shape[0] == 0:
        raise InsufficientPairs("no negative pairs to derive a calibration range from")
    recommended = math.ceil(1.0 / far_lo)
    if neg.shape[0] < recommended:
        logger.warning(
            "only %d negative pairs; the lower quantile at %g wants >= %d",
            neg.shape[0], far_lo, recommended,
        )
    d_min, d_max = np.quantile(neg, [far_lo, far_hi], method="interpolated_inverted_cdf")
    if not d_min < d_max:
        raise DegenerateRange(
            f"quantiles collapsed: d_min={float(d_min):.6g} >= d_max={float(d_max):.6g}"
        )
    return CalibrationRange(float(d_min), float(d_max), far_lo, far_hi)


def _curve_inputs(scored: ScoredPairSet, owner) -> tuple[np.ndarray, np.ndarray]:
    if owner == POOLED:
        pos = scored.positive_distances()
        neg = scored.negative_distances()
    else:
        pos = scored.positive_distances(owner)
        neg = scored.negative_distances(owner)
    if pos.shape[0] == 0 or neg.shape[0] == 0:
        raise InsufficientPairs(
            f"owner {owner!r} has {pos.shape[0]} positive / {neg.shape[0]} negative pairs"
        )
    return pos, neg


def utility_curve(
    scored: ScoredPairSet,
    owner,
    crange: CalibrationRange,
    grid_size: int = 512,
    c: float = 1.0,
) -> UtilityCurve:
    """Utility along a uniform grid over the calibration range.

    owner is a class id, or the string "pooled" for all pairs of all
    classes combined.
    """
    if grid_size < 2:
        raise OutOfRange(f"grid_size must be >= 2, got {grid_size}")
    pos, neg = _curve_inputs(scored, owner)
    grid = np.linspace(crange.d_min, crange.d_max, grid_size)
    phi, psi = _rates_on_grid(pos, neg, grid)
    return UtilityCurve(grid, utility(phi, psi, c), owner)


def opis(
    class_curves: list[UtilityCurve],
    pooled: UtilityCurve,
    weights: np.ndarray | None = None,
) -> OpisReport:
    """Weighted mean squared gap between class curves and the pooled curve.

    The integral over the calibration range uses the composite trapezoid
    rule on the shared grid and is normalized by the range width, so each
    per-class contribution is a range-averaged squared gap in [0, 1].
    """
    if not class_curves:
        raise EmptyGroup("no class curves supplied")
    grid = pooled.grid
    for curve in class_curves:
        if curve.grid.shape != grid.shape or not np.array_equal(curve.grid, grid):
            raise GridMismatch(f"curve {curve.owner!r} is not on the pooled grid")
    if weights is None:
        weights = np.ones(len(class_curves))
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (len(class_curves),) or np.any(weights <= 0):
        raise OutOfRange("weights must be positive, one per class curve")
    width = float(grid[-1] - grid[0])
    contributions = np.array(
        [float(_trapezoid((c.values - pooled.values) ** 2, grid)) / width for c in class_curves]
    )
    value = float(np.sum(weights * contributions) / np.sum(weights))
    class_ids = np.array([c.owner for c in class_curves], dtype=np.int64)
    return OpisReport(value, class_ids, contributions, weights)


def _group_curve(
    scored: ScoredPairSet,
    group: list[int],
    grid: np.ndarray,
    c: float,
) -> np.ndarray:
    pos = np.concatenate([scored.positive_distances(j) for j in group])
    neg = np.concatenate([scored.negative_distances(j) for j in group])
    phi, psi = _rates_on_grid(pos, neg, grid)
    return utility(phi, psi, c)


def epsilon_opis(
    scored: ScoredPairSet,
    class_curves: list[UtilityCurve],
    epsilon: float,
    crange: CalibrationRange,
    c: float = 1.0,
) -> float:
    """Squared utility gap between the pooled worst and best epsilon% classes.

    Classes are ranked by mean utility over the calibration grid; the top
    and bottom ceil(epsilon% * T) classes are pooled (their pairs merged)
    before the group utilities are compared, so epsilon = 100 compares a
    group with itself and is exactly 0.
    """
    if not class_curves:
        raise EmptyGroup("no class curves supplied")
    if not (0.0 < epsilon <= 100.0):
        raise EmptyGroup(f"epsilon must lie in (0, 100], got {epsilon}")
    grid = class_curves[0].grid
    for curve in class_curves[1:]:
        if not np.array_equal(curve.grid, grid):
            raise GridMismatch("class curves are not on one shared grid")
    t = len(class_curves)
    n_sel = max(1, math.ceil(epsilon / 100.0 * t))
    mean_u = np.array([c_.mean_utility() for c_ in class_curves])
    ids = np.array([c_.owner for c_ in class_curves], dtype=np.int64)
    # ascending utility, ties broken by class id for determinism
    order = np.lexsort((ids, mean_u))
    worst = [int(ids[i]) for i in order[:n_sel]]
    best = [int(ids[i]) for i in order[::-1][:n_sel]]
    if n_sel >= t:
        return 0.0
    u_worst = _group_curve(scored, worst, grid, c)
    u_best = _group_curve(scored, best, grid, c)
    width = float(grid[-1] - grid[0])
    return float(_trapezoid((u_worst - u_best) ** 2, grid)) / width


def recall_at_k(emb: EmbeddingSet, k: int) -> float:
    """Fraction of samples whose k cosine-nearest neighbors hit their class.

    Each sample is excluded from its own neighbor list; ties are broken by
    sample index so the result is deterministic.
    """
    if not (1 <= k < emb.n):
        raise OutOfRange(f"need 1 <= k < N={emb.n}, got k={k}")
    sims = emb.vectors @ emb.vectors.T
    np.fill_diagonal(sims, -np.inf)
    # stable argsort on -sims: descending similarity, index-ascending ties
    neighbors = np.argsort(-sims, axis=1, kind="stable")[:, :k]
    hits = np.any(emb.labels[neighbors] == emb.labels[:, None], axis=1)
    return float(np.mean(hits))


def evaluate_scored(
    scored: ScoredPairSet,
    *,
    far_lo: float = 1e-2,
    far_hi: float = 1e-1,
    grid_size: int = 512,
    c: float = 1.0,
    epsilons: tuple[float, ...] = (10.0, 20.0, 50.0),
    weights: np.ndarray | None = None,
) -> tuple[OpisReport, CalibrationRange, list[UtilityCurve], UtilityCurve, list[int]]:
    """OPIS + epsilon-OPIS pipeline on an already scored pair set.

    Classes lacking positive or anchored negative pairs are excluded from
    the per-class curves (and hence from OPIS) with a warning.
    """
    crange = calibration_range_from_far(scored, far_lo, far_hi)
    curves = []
    excluded = []
    for class_id in np.unique(scored.pairs.anchor_class):
        try:
            curves.append(utility_curve(scored, int(class_id), crange, grid_size, c))
        except InsufficientPairs:
            excluded.append(int(class_id))
    if excluded:
        logger.warning("excluding %d class(es) without both pair kinds: %s", len(excluded), excluded)
    if not curves:
        raise InsufficientPairs("no class has both positive and negative pairs")
    pooled = utility_curve(scored, POOLED, crange, grid_size, c)
    report = opis(curves, pooled, weights)
    report.epsilon_opis = [
        (float(eps), epsilon_opis(scored, curves, float(eps), crange, c)) for eps in epsilons
    ]
    return report, crange, curves, pooled, excluded


@dataclass
class EvaluationResult:
    """Full evaluation of one embedding set: OPIS report, curves, recalls."""

    report: OpisReport
    crange: CalibrationRange
    class_curves: list[UtilityCurve]
    pooled_curve: UtilityCurve
    recalls: dict[int, float]
    excluded_classes: list[int]
    n_positive: int
    n_negative: int


def evaluate_embeddings(
    emb: EmbeddingSet,
    *,
    far_lo: float = 1e-2,
    far_hi: float = 1e-1,
    grid_size: int = 512,
    c: float = 1.0,
    epsilons: tuple[float, ...] = (10.0, 20.0, 50.0),
    ratio: int = 10,
    seed: int = 0,
    exhaustive: bool = False,
    recall_ks: tuple[int, ...] = (1, 2, 4, 8),
) -> EvaluationResult:
    """Build pairs, score them and run the full metric pipeline.

    Positive pairs are always exhaustive; negatives are either exhaustive
    (all cross-class pairs, each anchored at both endpoint classes) or
    sampled per class at `ratio` negatives per positive.  recall@k entries
    with k >= N are silently dropped.
    """
    if exhaustive:
        negatives = all_negative_pairs(emb)
    else:
        negatives = sample_negative_pairs(emb, ratio, seed)
    plist = PairList.concatenate(
        [enumerate_positive_pairs(emb), negatives]
    ).sorted_canonical()
    scored = score_pairs(emb, plist)
    report, crange, curves, pooled, excluded = evaluate_scored(
        scored,
        far_lo=far_lo,
        far_hi=far_hi,
        grid_size=grid_size,
        c=c,
        epsilons=epsilons,
    )
    recalls = {int(k): recall_at_k(emb, int(k)) for k in recall_ks if 1 <= k < emb.n}
    return EvaluationResult(
        report,
        crange,
        curves,
        pooled,
        recalls,
        excluded,
        scored.n_positive,
        scored.n_negative,
    )
