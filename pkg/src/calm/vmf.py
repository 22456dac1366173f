"""Per-class concentration estimation and adaptive positive margins.

Class compactness on the sphere is summarized by the concentration
parameter kappa of a von Mises-Fisher fit, estimated in closed form from
the mean resultant length r = ||sum of embeddings|| / n:

    kappa = r * (M - r^2) / (1 - r^2)

Per epoch, kappas are normalized against their 5th/95th percentiles into
a compactness score z in [-1, 1] (clamped outside the window), mapped
through a falling sigmoid w = 1 / (1 + e^z), and converted into per-class
positive margins m_j = m_plus * w_j / mean(w): compact classes get
smaller margins, and the margins always average back to m_plus.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .core import EmbeddingSet
from .errors import (
    Degenerate,
    EmptyInput,
    InsufficientSamples,
    InvalidBounds,
    OutOfRange,
)

logger = logging.getLogger(__name__)

R_BAR_CAP = 1.0 - 1e-9


def estimate_kappa(r_bar: float, dim: int, clamp: bool = False) -> float:
    """Closed-form concentration estimate from the mean resultant length.

    With clamp=True, r_bar is capped at 1 - 1e-9 before the formula, so
    identical duplicate embeddings yield a large finite kappa of roughly
    (dim - 1) * 5e8 instead of an error.
    """
    if dim < 2:
        raise OutOfRange(f"dimension must be >= 2, got {dim}")
    if r_bar < 0.0:
        raise OutOfRange(f"mean resultant length must be >= 0, got {r_bar}")
    if clamp:
        r_bar = min(r_bar, R_BAR_CAP)
    elif r_bar >= R_BAR_CAP:
        raise Degenerate(f"r_bar={r_bar} is within 1e-9 of 1; samples are (near-)identical")
    return r_bar * (dim - r_bar * r_bar) / (1.0 - r_bar * r_bar)


def compactness_score(kappa: float, kappa_min: float, kappa_max: float) -> float:
    """Kappa rescaled into [-1, 1] against a percentile window, clamped outside."""
    if not kappa_min < kappa_max:
        raise InvalidBounds(f"need kappa_min < kappa_max, got {kappa_min} >= {kappa_max}")
    z = (2.0 * kappa - kappa_min - kappa_max) / (kappa_max - kappa_min)
    return float(np.clip(z, -1.0, 1.0))


def vmf_weight(z: float) -> float:
    """Falling sigmoid 1 / (1 + e^z); higher compactness gives smaller weight."""
    return float(1.0 / (1.0 + np.exp(z)))


def adaptive_margins(weights: np.ndarray, m_plus: float) -> np.ndarray:
    """Per-class positive margins m_plus * w / mean(w); their mean is m_plus."""
    weights = np.asarray(weights, dtype=np.float64)
    if weights.size == 0:
        raise EmptyInput("no class weights supplied")
    if np.any(weights <= 0):
        raise OutOfRange("weights must be strictly positive")
    return m_plus * weights / np.mean(weights)


@dataclass
class ClassMeanTable:
    """Running per-class embedding sums for one epoch.

    Additivity of the vector sums means any batching of a sample stream
    produces the same per-class mean resultant length.
    """

    dim: int
    sums: dict[int, np.ndarray] = field(default_factory=dict)
    counts: dict[int, int] = field(default_factory=dict)

    def update(self, vectors: np.ndarray, labels: np.ndarray) -> None:
        labels = np.asarray(labels, dtype=np.int64)
        for class_id in np.unique(labels):
            rows = vectors[labels == class_id]
            j = int(class_id)
            if j not in self.sums:
                self.sums[j] = np.zeros(self.dim)
                self.counts[j] = 0
            self.sums[j] += rows.sum(axis=0)
            self.counts[j] += rows.shape[0]

    def resultant_length(self, class_id: int) -> float:
        n = self.counts[class_id]
        if n == 0:
            return 0.0
        return float(np.linalg.norm(self.sums[class_id])) / n

    def reset(self) -> None:
        self.sums.clear()
        self.counts.clear()


def update_class_means(table: ClassMeanTable, batch: EmbeddingSet) -> ClassMeanTable:
    """Accumulate one batch of unit embeddings into the table (in place)."""
    table.update(batch.vectors, batch.labels)
    return table


@dataclass
class VmfState:
    """Per-class concentration snapshot taken at an epoch boundary."""

    kappa: dict[int, float]
    z: dict[int, float]
    weight: dict[int, float]
    margin: dict[int, float]
    kappa_min: float
    kappa_max: float

    def to_json_dict(self) -> dict:
        return {
            "kappa_min": self.kappa_min,
            "kappa_max": self.kappa_max,
            "classes": {
                str(j): {
                    "kappa": self.kappa.get(j),
                    "z": self.z.get(j),
                    "w": self.weight.get(j),
                    "m_plus": self.margin[j],
                }
                for j in sorted(self.margin)
            },
        }


def epoch_refresh(
    table: ClassMeanTable,
    m_plus: float,
    percentile_lo: float = 5.0,
    percentile_hi: float = 95.0,
    previous: VmfState | None = None,
) -> VmfState:
    """Recompute kappa, compactness and per-class margins from one epoch's table.

    Classes seen fewer than twice keep their previous margin (or m_plus if
    they never had one) and are logged; if no class qualifies the refresh
    fails.  The table is reset for the next epoch.
    """
    eligible = sorted(j for j, n in table.counts.items() if n >= 2)
    if not eligible:
        raise InsufficientSamples("no class accumulated >= 2 samples this epoch")
    kappas = {
        j: estimate_kappa(table.resultant_length(j), table.dim, clamp=True)
        for j in eligible
    }
    values = np.array([kappas[j] for j in eligible])
    kappa_min, kappa_max = np.percentile(values, [percentile_lo, percentile_hi])
    if kappa_max - kappa_min > 1e-12:
        z = {j: compactness_score(kappas[j], float(kappa_min), float(kappa_max)) for j in eligible}
    else:
        # homogeneous concentrations: a degenerate window scores everyone 0
        z = {j: 0.0 for j in eligible}
    weights = {j: vmf_weight(z[j]) for j in eligible}
    margins_arr = adaptive_margins(np.array([weights[j] for j in eligible]), m_plus)
    margin = {j: float(m) for j, m in zip(eligible, margins_arr)}

    skipped = sorted(j for j, n in table.counts.items() if 0 < n < 2)
    for j in skipped:
        margin[j] = previous.margin[j] if previous and j in previous.margin else m_plus
    if skipped:
        logger.warning("classes %s had < 2 samples; keeping previous margins", skipped)
    if previous is not None:
        for j, m in previous.margin.items():
            margin.setdefault(j, m)
    table.reset()
    return VmfState(kappas, z, weights, margin, float(kappa_min), float(kappa_max))
