"""Calibration-consistency auditing and margin-regularized metric learning.

The library evaluates how consistently a single distance threshold works
across the classes of a hypersphere embedding (OPIS and its percentile
variant), and trains embeddings with a hard-pair margin regularizer that
narrows that inconsistency, optionally with per-class adaptive positive
margins derived from von Mises-Fisher concentration estimates.
"""

from .core import EmbeddingSet, cos_to_l2, cosine, l2_to_cos, normalize
from .losses import CamConfig, cam_loss, contrastive_loss, final_loss, triplet_loss
from .metrics import (
    CalibrationRange,
    OpisReport,
    UtilityCurve,
    calibration_range_from_far,
    epsilon_opis,
    evaluate_embeddings,
    opis,
    recall_at_k,
    utility,
    utility_curve,
)
from .pairs import (
    PairList,
    ScoredPairSet,
    enumerate_positive_pairs,
    exhaustive_pairs,
    sample_negative_pairs,
    score_pairs,
)
from .synth import SynthConfig, make_dataset, sample_vmf
from .trainer import (
    AdaCamConfig,
    ContrastiveConfig,
    EvalSettings,
    TrainConfig,
    TripletConfig,
    build_batches,
    finetune_adacam,
    train,
)
from .vmf import (
    ClassMeanTable,
    VmfState,
    adaptive_margins,
    compactness_score,
    epoch_refresh,
    estimate_kappa,
    update_class_means,
    vmf_weight,
)

__version__ = "0.1.0"
