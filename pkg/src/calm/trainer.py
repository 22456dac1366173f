"""Desk-scale training loop for embeddings on the unit sphere.

Two parameterizations are supported: "free" mode treats the embedding
rows themselves as the parameters, and "linear" mode trains a single
bias-free input->output matrix whose (renormalized) projections are the
embeddings.  Batches take a fixed number of samples per class from a
fixed number of classes; within a batch, all unordered pairs feed the
losses.  Optimization is plain gradient descent with a constant learning
rate on the tangent-projected gradient, followed by row renormalization,
which keeps determinism trivial: identical config and seed reproduce the
run bitwise.

The adaptive fine-tuning stage starts from a margin-regularized
checkpoint, accumulates per-class mean embeddings during each epoch,
refreshes per-class positive margins at every epoch boundary, and keeps
the negative margin fixed.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .core import EmbeddingSet, normalize_rows
from .errors import (
    DegenerateRange,
    InsufficientPairs,
    NonFiniteLoss,
    OutOfRange,
    SingleClass,
    ZeroVector,
)
from .losses import (
    CamConfig,
    LossResult,
    cam_loss,
    contrastive_loss,
    final_loss,
    grad_wrt_embeddings,
    triplet_loss,
)
from .metrics import evaluate_scored, recall_at_k
from .pairs import (
    PairList,
    enumerate_positive_pairs,
    exhaustive_pairs,
    sample_negative_pairs,
    score_pairs,
)
from .vmf import ClassMeanTable, VmfState, epoch_refresh

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ContrastiveConfig:
    pos_margin: float = 0.0
    neg_margin: float = 0.5


@dataclass(frozen=True)
class TripletConfig:
    margin: float = 0.3


@dataclass(frozen=True)
class AdaCamConfig:
    """Adaptive fine-tuning stage settings.

    The stage runs at lr * lr_scale; lr_scale defaults to 1 and any other
    value is recorded in the history metadata (free-embedding runs need a
    larger effective rate than backbone fine-tuning conventions suggest).
    """

    finetune_epochs: int = 30
    lr: float = 1e-6
    lr_scale: float = 1.0
    percentile_lo: float = 5.0
    percentile_hi: float = 95.0


@dataclass(frozen=True)
class EvalSettings:
    """Metric settings used for history rows and final reports."""

    far_lo: float = 1e-2
    far_hi: float = 1e-1
    grid_size: int = 512
    c: float = 1.0
    ratio: int = 10
    seed: int = 0
    epsilons: tuple[float, ...] = (10.0, 20.0, 50.0)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int
    lr: float
    base_loss: ContrastiveConfig | TripletConfig | None = field(
        default_factory=ContrastiveConfig
    )
    cam: CamConfig | None = None
    adacam: AdaCamConfig | None = None
    mode: str = "free"
    encoder_dim: int | None = None
    classes_per_batch: int = 8
    samples_per_class: int = 4
    seed: int = 0
    eval_every: int = 1
    eval: EvalSettings = field(default_factory=EvalSettings)

    def __post_init__(self):
        if self.epochs < 0:
            raise OutOfRange(f"epochs must be >= 0, got {self.epochs}")
        if self.lr < 0:
            raise OutOfRange(f"lr must be >= 0, got {self.lr}")
        if self.mode not in ("free", "linear"):
            raise OutOfRange(f"mode must be 'free' or 'linear', got {self.mode!r}")
        if self.classes_per_batch < 2:
            raise OutOfRange("need >= 2 classes per batch to form negative pairs")
        if self.samples_per_class < 1:
            raise OutOfRange("need >= 1 sample per class per batch")
        if self.base_loss is None and self.cam is None:
            raise OutOfRange("at least one of base_loss or cam must be set")
        if self.eval_every < 1:
            raise OutOfRange("eval_every must be >= 1")


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    recall1: float
    opis: float
    pos_selected: int
    neg_selected: int
    m_plus_mean: float = float("nan")
    m_plus_min: float = float("nan")
    m_plus_max: float = float("nan")


@dataclass
class TrainHistory:
    records: list[EpochRecord] = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def last_epoch(self) -> int:
        return self.records[-1].epoch if self.records else 0


def build_batches(
    emb: EmbeddingSet,
    classes_per_batch: int,
    samples_per_class: int,
    seed: int,
    epoch: int,
) -> list[np.ndarray]:
    """Deterministic per-epoch batch index lists.

    Classes are shuffled and chunked; each contributes samples_per_class
    samples per batch, drawn without replacement when it has enough
    members and with replacement otherwise.  A trailing chunk with fewer
    than two classes is dropped (it could not form negative pairs).
    """
    seed_u64 = int(seed) & 0xFFFFFFFFFFFFFFFF
    rng = np.random.default_rng(np.random.SeedSequence((seed_u64, int(epoch), 0xBA7C)))
    classes = emb.classes()
    order = rng.permutation(classes.shape[0])
    batches = []
    for start in range(0, classes.shape[0], classes_per_batch):
        chunk = classes[order[start : start + classes_per_batch]]
        if chunk.shape[0] < 2:
            continue
        slots = []
        for class_id in chunk:
            members = emb.class_indices(int(class_id))
            replace_draw = members.shape[0] < samples_per_class
            pick = rng.choice(members.shape[0], size=samples_per_class, replace=replace_draw)
            slots.append(members[pick])
        batches.append(np.concatenate(slots))
    return batches


def _base_loss(scored, labels, cfg: TrainConfig) -> LossResult:
    if isinstance(cfg.base_loss, ContrastiveConfig):
        return contrastive_loss(scored, cfg.base_loss.pos_margin, cfg.base_loss.neg_margin)
    if isinstance(cfg.base_loss, TripletConfig):
        return triplet_loss(scored, labels, cfg.base_loss.margin)
    return LossResult(0.0, np.zeros(len(scored)))


def _eval_pairs(emb: EmbeddingSet, ev: EvalSettings) -> PairList:
    return PairList.concatenate(
        [enumerate_positive_pairs(emb), sample_negative_pairs(emb, ev.ratio, ev.seed)]
    ).sorted_canonical()


def _eval_metrics(emb: EmbeddingSet, eval_pairs: PairList, ev: EvalSettings):
    scored = score_pairs(emb, eval_pairs)
    try:
        report, _, _, _, _ = evaluate_scored(
            scored,
            far_lo=ev.far_lo,
            far_hi=ev.far_hi,
            grid_size=ev.grid_size,
            c=ev.c,
            epsilons=(),
        )
        opis_value = report.opis
    except (DegenerateRange, InsufficientPairs) as exc:
        logger.warning("history eval skipped: %s", exc)
        opis_value = float("nan")
    recall1 = recall_at_k(emb, 1) if emb.n > 1 else float("nan")
    return recall1, opis_value


class _FreeParams:
    """Parameters are the embedding rows themselves."""

    def __init__(self, data: EmbeddingSet):
        self.x = data.vectors.copy()
        self.labels = data.labels

    def embeddings(self) -> np.ndarray:
        return self.x

    def step(self, batch_idx: np.ndarray, slot_grad: np.ndarray, lr: float) -> None:
        grad = np.zeros_like(self.x)
        np.add.at(grad, batch_idx, slot_grad)
        touched = np.unique(batch_idx)
        self.x[touched] -= lr * grad[touched]
        with np.errstate(over="ignore"):
            norms = np.linalg.norm(self.x[touched], axis=1)
        if not np.all(np.isfinite(self.x[touched])) or not np.all(np.isfinite(norms)):
            raise ZeroVector("update produced non-finite embedding rows")
        self.x[touched] = normalize_rows(self.x[touched])


class _LinearParams:
    """Parameters are one input->output matrix; embeddings are its projections."""

    def __init__(self, data: EmbeddingSet, out_dim: int, seed: int):
        rng = np.random.default_rng(
            np.random.SeedSequence((int(seed) & 0xFFFFFFFFFFFFFFFF, 0x11EA))
        )
        self.features = data.vectors
        self.labels = data.labels
        self.w = rng.standard_normal((data.dim, out_dim)) / math.sqrt(data.dim)
        self._refresh()

    def _refresh(self) -> None:
        z = self.features @ self.w
        self.norms = np.linalg.norm(z, axis=1)
        if np.any(self.norms <= 1e-12):
            raise NonFiniteLoss("encoder projected a sample to the origin")
        self.y = z / self.norms[:, None]

    def embeddings(self) -> np.ndarray:
        return self.y

    def step(self, batch_idx: np.ndarray, slot_grad: np.ndarray, lr: float) -> None:
        # tangent gradient at y maps back through z = F w: dL/dz = g_y / ||z||
        dz = slot_grad / self.norms[batch_idx][:, None]
        grad_w = self.features[batch_idx].T @ dz
        self.w -= lr * grad_w
        if not np.all(np.isfinite(self.w)):
            raise ZeroVector("update produced a non-finite encoder matrix")
        self._refresh()


def _run_loop(
    params,
    cfg: TrainConfig,
    epochs: int,
    lr: float,
    start_epoch: int,
    history: TrainHistory,
    adaptive: bool,
) -> None:
    labels = params.labels
    eval_pairs = _eval_pairs(EmbeddingSet(params.embeddings(), labels), cfg.eval)
    table = ClassMeanTable(params.embeddings().shape[1]) if adaptive else None
    state: VmfState | None = None
    margins: dict[int, float] | None = None
    base_m_plus = cfg.cam.m_plus if cfg.cam is not None else 0.0

    for epoch_offset in range(epochs):
        epoch = start_epoch + epoch_offset + 1
        batches = build_batches(
            EmbeddingSet(params.embeddings(), labels),
            cfg.classes_per_batch,
            cfg.samples_per_class,
            cfg.seed,
            epoch,
        )
        losses = []
        pos_sel = neg_sel = 0
        for batch_idx in batches:
            x = params.embeddings()
            batch = EmbeddingSet(x[batch_idx], labels[batch_idx])
            plist = exhaustive_pairs(batch)
            scored = score_pairs(batch, plist)
            total = _base_loss(scored, batch.labels, cfg)
            if cfg.cam is not None:
                reg = cam_loss(scored, cfg.cam, margins if adaptive else None)
                total = final_loss(total, reg)
                pos_sel += reg.pos_selected
                neg_sel += reg.neg_selected
            if not np.isfinite(total.value) or not np.all(np.isfinite(total.dsim)):
                raise NonFiniteLoss(
                    f"non-finite loss at epoch {epoch}",
                    dump={"epoch": epoch, "batch": batch_idx.tolist(), "value": total.value},
                )
            slot_grad = grad_wrt_embeddings(batch, plist, total.dsim)
            try:
                params.step(batch_idx, slot_grad, lr)
            except ZeroVector as exc:
                raise NonFiniteLoss(
                    f"update collapsed a row at epoch {epoch}: {exc}",
                    dump={"epoch": epoch, "batch": batch_idx.tolist()},
                ) from exc
            losses.append(total.value)
            if adaptive:
                table.update(batch.vectors, batch.labels)
        if adaptive:
            state = epoch_refresh(
                table,
                base_m_plus,
                cfg.adacam.percentile_lo,
                cfg.adacam.percentile_hi,
                previous=state,
            )
            margins = state.margin
            history.metadata.setdefault("vmf_states", []).append(state.to_json_dict())
        current = EmbeddingSet(params.embeddings(), labels)
        is_eval_epoch = epoch_offset == epochs - 1 or epoch % cfg.eval_every == 0
        if is_eval_epoch:
            recall1, opis_value = _eval_metrics(current, eval_pairs, cfg.eval)
        else:
            recall1 = opis_value = float("nan")
        record = EpochRecord(
            epoch=epoch,
            loss=float(np.mean(losses)) if losses else float("nan"),
            recall1=recall1,
            opis=opis_value,
            pos_selected=pos_sel,
            neg_selected=neg_sel,
        )
        if margins is not None:
            values = np.array(sorted(margins.values()))
            record.m_plus_mean = float(np.mean(values))
            record.m_plus_min = float(values[0])
            record.m_plus_max = float(values[-1])
        history.records.append(record)


def train(
    data: EmbeddingSet, cfg: TrainConfig, start_epoch: int = 0
) -> tuple[EmbeddingSet, TrainHistory]:
    """Optimize embeddings under base loss plus optional margin regularizer.

    Returns the trained embedding set and a per-epoch history.  With
    epochs = 0 the output equals the input and the history is empty.
    start_epoch > 0 continues epoch numbering (and batch shuffling) from a
    resumed run; cfg.epochs is the total epoch budget, not an increment.
    """
    if data.classes().shape[0] < 2:
        raise SingleClass("training requires at least two classes")
    params = _make_params(data, cfg)
    history = TrainHistory(metadata={"mode": cfg.mode, "lr": cfg.lr, "seed": cfg.seed})
    epochs_to_run = max(0, cfg.epochs - start_epoch)
    _run_loop(params, cfg, epochs_to_run, cfg.lr, start_epoch, history, adaptive=False)
    if isinstance(params, _LinearParams):
        history.metadata["encoder_matrix"] = params.w.tolist()
    return EmbeddingSet(params.embeddings().copy(), data.labels.copy()), history


def finetune_adacam(
    data: EmbeddingSet,
    cfg: TrainConfig,
    start_epoch: int = 0,
) -> tuple[EmbeddingSet, TrainHistory]:
    """Adaptive-margin fine-tuning of an already regularized checkpoint.

    Runs cfg.adacam.finetune_epochs epochs at lr * lr_scale with per-class
    positive margins refreshed at every epoch boundary; the negative
    margin stays fixed.  Only meaningful on a checkpoint trained with the
    margin regularizer enabled.
    """
    if cfg.cam is None or cfg.adacam is None:
        raise OutOfRange("fine-tuning requires both cam and adacam settings")
    if data.classes().shape[0] < 2:
        raise SingleClass("training requires at least two classes")
    lr = cfg.adacam.lr * cfg.adacam.lr_scale
    if lr < 0:
        raise OutOfRange("fine-tune learning rate must be >= 0")
    params = _make_params(data, cfg)
    history = TrainHistory(
        metadata={
            "mode": cfg.mode,
            "lr": lr,
            "lr_scale": cfg.adacam.lr_scale,
            "seed": cfg.seed,
            "stage": "adacam",
        }
    )
    _run_loop(params, cfg, cfg.adacam.finetune_epochs, lr, start_epoch, history, adaptive=True)
    if isinstance(params, _LinearParams):
        history.metadata["encoder_matrix"] = params.w.tolist()
    return EmbeddingSet(params.embeddings().copy(), data.labels.copy()), history


def _make_params(data: EmbeddingSet, cfg: TrainConfig):
    if cfg.mode == "linear":
        out_dim = cfg.encoder_dim or data.dim
        return _LinearParams(data, out_dim, cfg.seed)
    return _FreeParams(data)
