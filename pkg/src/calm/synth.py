"""Synthetic hypersphere datasets with controlled per-class compactness.

Classes are von Mises-Fisher clusters around placed centroids; drawing
their concentrations from a wide range produces the heterogeneous
compactness that makes per-class operating characteristics diverge.
Sampling uses the standard tangent-radial decomposition with Wood's
rejection envelope for the radial component, which is exact.  All
randomness derives from numpy PCG64 generators seeded per (seed, class),
so datasets are bit-reproducible and per-class generation could run in
parallel.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import EmbeddingSet, normalize, normalize_rows
from .errors import OutOfRange

PLACEMENTS = ("uniform", "antipodal", "clustered")

# concentration of the centroid cloud in "clustered" placement, chosen so
# centroids crowd into one cap of the sphere
CLUSTER_PLACEMENT_KAPPA = 30.0

# perturbation scale applied to the mirrored centroid in "antipodal" mode
ANTIPODAL_JITTER = 0.1


@dataclass
class SynthConfig:
    """Recipe for one synthetic dataset.

    Exactly one of kappa_range (uniform draw per class) or kappa_values
    (explicit per-class list) must be given.
    """

    n_classes: int
    dim: int
    samples_per_class: int
    seed: int
    kappa_range: tuple[float, float] | None = None
    kappa_values: list[float] | None = None
    placement: str = "uniform"

    def __post_init__(self):
        if self.n_classes < 2:
            raise OutOfRange(f"need >= 2 classes, got {self.n_classes}")
        if self.dim < 2:
            raise OutOfRange(f"need dimension >= 2, got {self.dim}")
        if self.samples_per_class < 1:
            raise OutOfRange("need >= 1 sample per class")
        if (self.kappa_range is None) == (self.kappa_values is None):
            raise OutOfRange("give exactly one of kappa_range or kappa_values")
        if self.kappa_range is not None:
            lo, hi = self.kappa_range
            if lo < 0 or hi < lo:
                raise OutOfRange(f"bad kappa_range {self.kappa_range}")
        if self.kappa_values is not None:
            if len(self.kappa_values) != self.n_classes:
                raise OutOfRange("kappa_values must list one kappa per class")
            if any(k < 0 for k in self.kappa_values):
                raise OutOfRange("kappa must be >= 0")
        if self.placement not in PLACEMENTS:
            raise OutOfRange(f"placement must be one of {PLACEMENTS}")


def _as_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def _uniform_sphere(n: int, dim: int, rng: np.random.Generator) -> np.ndarray:
    x = rng.standard_normal((n, dim))
    return normalize_rows(x)


def _radial_components(kappa: float, dim: int, n: int, rng: np.random.Generator) -> np.ndarray:
    """Wood's rejection sampler for the cosine between sample and mean direction."""
    d = dim - 1
    b = d / (np.sqrt(4.0 * kappa * kappa + d * d) + 2.0 * kappa)
    x0 = (1.0 - b) / (1.0 + b)
    c = kappa * x0 + d * np.log(1.0 - x0 * x0)
    out = np.empty(n)
    filled = 0
    while filled < n:
        m = n - filled
        z = rng.beta(d / 2.0, d / 2.0, size=m)
        w = (1.0 - (1.0 + b) * z) / (1.0 - (1.0 - b) * z)
        u = rng.uniform(size=m)
        accept = kappa * w + d * np.log(1.0 - x0 * w) - c >= np.log(u)
        got = w[accept]
        out[filled : filled + got.shape[0]] = got
        filled += got.shape[0]
    return out


def sample_vmf(mu: np.ndarray, kappa: float, n: int, seed) -> np.ndarray:
    """Draw n unit vectors from a von Mises-Fisher cluster around mu.

    kappa = 0 is the uniform distribution on the sphere.  `seed` may be an
    integer or an existing numpy Generator.
    """
    if kappa < 0:
        raise OutOfRange(f"kappa must be >= 0, got {kappa}")
    mu = normalize(np.asarray(mu, dtype=np.float64))
    dim = mu.shape[0]
    if dim < 2:
        raise OutOfRange("dimension must be >= 2")
    rng = _as_rng(seed)
    if n == 0:
        return np.empty((0, dim))
    if kappa == 0.0:
        return _uniform_sphere(n, dim, rng)
    w = _radial_components(kappa, dim, n, rng)
    g = rng.standard_normal((n, dim))
    g -= (g @ mu)[:, None] * mu
    v = normalize_rows(g)
    samples = w[:, None] * mu + np.sqrt(np.maximum(0.0, 1.0 - w * w))[:, None] * v
    return normalize_rows(samples)


def _place_centroids(cfg: SynthConfig, rng: np.random.Generator) -> np.ndarray:
    t, m = cfg.n_classes, cfg.dim
    if cfg.placement == "uniform":
        return _uniform_sphere(t, m, rng)
    if cfg.placement == "antipodal":
        base = _uniform_sphere((t + 1) // 2, m, rng)
        centroids = np.empty((t, m))
        centroids[0::2] = base
        mirrored = -base[: t // 2] + ANTIPODAL_JITTER * rng.standard_normal((t // 2, m))
        centroids[1::2] = normalize_rows(mirrored)
        return centroids
    # clustered: crowd the centroids into one cap
    center = _uniform_sphere(1, m, rng)[0]
    return sample_vmf(center, CLUSTER_PLACEMENT_KAPPA, t, rng)


def make_dataset(cfg: SynthConfig) -> tuple[EmbeddingSet, np.ndarray]:
    """Generate the labeled dataset plus its ground-truth per-class kappas."""
    seed_u64 = int(cfg.seed) & 0xFFFFFFFFFFFFFFFF
    master = np.random.default_rng(np.random.SeedSequence((seed_u64, 0xC0DE)))
    centroids = _place_centroids(cfg, master)
    if cfg.kappa_values is not None:
        kappas = np.asarray(cfg.kappa_values, dtype=np.float64)
    else:
        lo, hi = cfg.kappa_range
        kappas = master.uniform(lo, hi, size=cfg.n_classes)
    blocks = []
    for j in range(cfg.n_classes):
        rng_j = np.random.default_rng(np.random.SeedSequence((seed_u64, j)))
        blocks.append(sample_vmf(centroids[j], float(kappas[j]), cfg.samples_per_class, rng_j))
    vectors = np.vstack(blocks)
    labels = np.repeat(np.arange(cfg.n_classes, dtype=np.int64), cfg.samples_per_class)
    return EmbeddingSet(vectors, labels), kappas
