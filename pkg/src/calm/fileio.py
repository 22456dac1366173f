"""File formats: embedding files, reports, curves, history and sweeps.

Binary embedding layout (all little-endian):

    magic   4 bytes  b"CALM"
    version u16      currently 1
    N       u64      sample count
    M       u32      embedding dimension
    data    N*M f32  row-major vectors
    labels  N  u32   class ids

The CSV alternative has the header ``label,v0,...,v{M-1}``.  Loaders widen
to float64, re-normalize every row and report the worst pre-normalization
norm deviation, rejecting files beyond 1e-3.

Report JSON documents carry ``schema_version`` (currently 1); CSV outputs
format floats with 9 significant digits and no locale dependence.  Primary
outputs never embed timestamps, so reruns with identical inputs are
byte-identical; wall-clock data belongs in the separate metadata file.
"""

from __future__ import annotations

import csv
import json
import struct
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .core import EmbeddingSet
from .errors import ConfigError, FormatError
from .losses import CamConfig
from .metrics import EvaluationResult, UtilityCurve
from .synth import SynthConfig
from .trainer import (
    AdaCamConfig,
    ContrastiveConfig,
    EvalSettings,
    TrainConfig,
    TrainHistory,
    TripletConfig,
)

MAGIC = b"CALM"
BINARY_VERSION = 1
SCHEMA_VERSION = 1
MAX_NORM_DEVIATION = 1e-3

CURVES_HEADER = ["class_id", "d", "utility"]
HISTORY_HEADER = [
    "epoch",
    "loss",
    "recall1",
    "opis",
    "pos_selected",
    "neg_selected",
    "m_plus_mean",
    "m_plus_min",
    "m_plus_max",
]
SWEEP_HEADER = ["label", "m_plus", "m_minus", "recall1", "opis"]


def fmt(x) -> str:
    """9-significant-digit float formatting shared by every CSV writer."""
    return format(float(x), ".9g")


# -- embedding files ---------------------------------------------------------


def _f32_stable_payload(vectors: np.ndarray) -> np.ndarray:
    """float32 image that survives the load-renormalize-save cycle unchanged.

    Casting unit float64 rows to float32 perturbs row norms by ~1e-8, and
    the loader's renormalization can then flip the last mantissa bit of a
    value on the next save.  Iterating cast -> renormalize -> cast to a
    fixed point keeps checkpoint chains byte-identical.
    """
    v32 = np.ascontiguousarray(vectors, dtype="<f4")
    for _ in range(8):
        wide = v32.astype(np.float64)
        norms = np.linalg.norm(wide, axis=1, keepdims=True)
        new32 = np.ascontiguousarray(wide / norms, dtype="<f4")
        if np.array_equal(new32.view(np.uint32), v32.view(np.uint32)):
            return v32
        v32 = new32
    return v32


def save_embeddings_binary(path, emb: EmbeddingSet) -> None:
    path = Path(path)
    with path.open("wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<HQI", BINARY_VERSION, emb.n, emb.dim))
        fh.write(_f32_stable_payload(emb.vectors).tobytes(order="C"))
        fh.write(emb.labels.astype("<u4").tobytes(order="C"))


def load_embeddings_binary(path) -> tuple[EmbeddingSet, float]:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < 18 or raw[:4] != MAGIC:
        raise FormatError(f"{path}: not an embedding file (bad magic)")
    version, n, m = struct.unpack_from("<HQI", raw, 4)
    if version != BINARY_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    offset = 4 + 14
    need = offset + 4 * n * m + 4 * n
    if len(raw) != need:
        raise FormatError(f"{path}: expected {need} bytes, found {len(raw)}")
    vectors = np.frombuffer(raw, dtype="<f4", count=n * m, offset=offset)
    vectors = vectors.reshape(n, m).astype(np.float64)
    labels = np.frombuffer(raw, dtype="<u4", count=n, offset=offset + 4 * n * m)
    return _finish_load(path, vectors, labels.astype(np.int64))


def save_embeddings_csv(path, emb: EmbeddingSet) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["label"] + [f"v{i}" for i in range(emb.dim)])
        for label, row in zip(emb.labels, emb.vectors):
            writer.writerow([int(label)] + [fmt(v) for v in row])


def load_embeddings_csv(path) -> tuple[EmbeddingSet, float]:
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError(f"{path}: empty file") from None
        dim = len(header) - 1
        if dim < 2 or header != ["label"] + [f"v{i}" for i in range(dim)]:
            raise FormatError(f"{path}: bad embedding CSV header")
        labels, rows = [], []
        for line in reader:
            if len(line) != dim + 1:
                raise FormatError(f"{path}: row with {len(line)} fields, expected {dim + 1}")
            labels.append(int(line[0]))
            rows.append([float(v) for v in line[1:]])
    if not rows:
        raise FormatError(f"{path}: no samples")
    return _finish_load(path, np.array(rows, dtype=np.float64), np.array(labels, np.int64))


def _finish_load(path, vectors, labels) -> tuple[EmbeddingSet, float]:
    norms = np.linalg.norm(vectors, axis=1)
    if np.any(norms <= 0):
        raise FormatError(f"{path}: contains a zero vector")
    deviation = float(np.max(np.abs(norms - 1.0)))
    if deviation > MAX_NORM_DEVIATION:
        raise FormatError(
            f"{path}: worst norm deviation {deviation:.3e} exceeds {MAX_NORM_DEVIATION}"
        )
    return EmbeddingSet(vectors / norms[:, None], labels), deviation


def load_embeddings(path) -> tuple[EmbeddingSet, float]:
    """Dispatch on extension: .csv is text, anything else is binary."""
    if str(path).endswith(".csv"):
        return load_embeddings_csv(path)
    return load_embeddings_binary(path)


# -- report and curve outputs -------------------------------------------------


def report_to_dict(result: EvaluationResult, settings: dict) -> dict:
    report = result.report
    return {
        "schema_version": SCHEMA_VERSION,
        "opis": report.opis,
        "epsilon_opis": [
            {"epsilon": eps, "value": value} for eps, value in report.epsilon_opis
        ],
        "range": {
            "d_min": result.crange.d_min,
            "d_max": result.crange.d_max,
            "far_lo": result.crange.far_lo,
            "far_hi": result.crange.far_hi,
        },
        "recall": {str(k): v for k, v in sorted(result.recalls.items())},
        "pair_counts": {"positive": result.n_positive, "negative": result.n_negative},
        "per_class": [
            {
                "class_id": int(cid),
                "contribution": float(contrib),
                "weight": float(w),
            }
            for cid, contrib, w in zip(
                report.class_ids, report.per_class_contribution, report.weights
            )
        ],
        "excluded_classes": result.excluded_classes,
        "settings": settings,
    }


def write_json(path, payload: dict) -> None:
    Path(path).write_text(json.dumps(payload, indent=2) + "\n")


def write_curves_csv(path, curves: list[UtilityCurve], pooled: UtilityCurve | None = None) -> None:
    all_curves = list(curves) + ([pooled] if pooled is not None else [])
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CURVES_HEADER)
        for curve in all_curves:
            owner = str(curve.owner)
            for d, u in zip(curve.grid, curve.values):
                writer.writerow([owner, fmt(d), fmt(u)])


def write_history_csv(path, history: TrainHistory) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(HISTORY_HEADER)
        for r in history.records:
            writer.writerow(
                [
                    r.epoch,
                    fmt(r.loss),
                    fmt(r.recall1),
                    fmt(r.opis),
                    r.pos_selected,
                    r.neg_selected,
                    fmt(r.m_plus_mean),
                    fmt(r.m_plus_min),
                    fmt(r.m_plus_max),
                ]
            )


def read_history_csv(path) -> TrainHistory:
    from .trainer import EpochRecord

    history = TrainHistory()
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != HISTORY_HEADER:
            raise FormatError(f"{path}: bad history header {header}")
        for line in reader:
            history.records.append(
                EpochRecord(
                    epoch=int(line[0]),
                    loss=float(line[1]),
                    recall1=float(line[2]),
                    opis=float(line[3]),
                    pos_selected=int(line[4]),
                    neg_selected=int(line[5]),
                    m_plus_mean=float(line[6]),
                    m_plus_min=float(line[7]),
                    m_plus_max=float(line[8]),
                )
            )
    return history


def write_sweep_csv(path, rows: list[dict]) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SWEEP_HEADER)
        for row in rows:
            writer.writerow(
                [
                    row["label"],
                    "" if row.get("m_plus") is None else fmt(row["m_plus"]),
                    "" if row.get("m_minus") is None else fmt(row["m_minus"]),
                    fmt(row["recall1"]),
                    fmt(row["opis"]),
                ]
            )


# -- strict config parsing -----------------------------------------------------


def _require_keys(obj: dict, allowed: set[str], where: str) -> None:
    unknown = set(obj) - allowed
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {sorted(unknown)}")


def _get(obj: dict, key: str, typ, where: str, default=None, required=False):
    if key not in obj:
        if required:
            raise ConfigError(f"{where}: missing required key {key!r}")
        return default
    value = obj[key]
    if typ is float and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    if not isinstance(value, typ) or isinstance(value, bool) and typ is not bool:
        raise ConfigError(f"{where}.{key}: expected {typ.__name__}, got {type(value).__name__}")
    return value


def parse_synth_config(obj: dict, where: str = "synth") -> SynthConfig:
    _require_keys(
        obj,
        {"n_classes", "dim", "samples_per_class", "seed", "kappa_range", "kappa_values", "placement"},
        where,
    )
    kappa_range = obj.get("kappa_range")
    if kappa_range is not None:
        if not (isinstance(kappa_range, list) and len(kappa_range) == 2):
            raise ConfigError(f"{where}.kappa_range: expected [lo, hi]")
        kappa_range = (float(kappa_range[0]), float(kappa_range[1]))
    kappa_values = obj.get("kappa_values")
    if kappa_values is not None:
        if not isinstance(kappa_values, list):
            raise ConfigError(f"{where}.kappa_values: expected a list")
        kappa_values = [float(v) for v in kappa_values]
    try:
        return SynthConfig(
            n_classes=_get(obj, "n_classes", int, where, required=True),
            dim=_get(obj, "dim", int, where, required=True),
            samples_per_class=_get(obj, "samples_per_class", int, where, required=True),
            seed=_get(obj, "seed", int, where, required=True),
            kappa_range=kappa_range,
            kappa_values=kappa_values,
            placement=_get(obj, "placement", str, where, default="uniform"),
        )
    except Exception as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def parse_eval_settings(obj: dict, where: str = "eval") -> EvalSettings:
    _require_keys(
        obj, {"far_lo", "far_hi", "grid", "c", "ratio", "seed", "epsilon"}, where
    )
    epsilons = obj.get("epsilon", [10.0, 20.0, 50.0])
    if not isinstance(epsilons, list):
        raise ConfigError(f"{where}.epsilon: expected a list")
    return EvalSettings(
        far_lo=_get(obj, "far_lo", float, where, default=1e-2),
        far_hi=_get(obj, "far_hi", float, where, default=1e-1),
        grid_size=_get(obj, "grid", int, where, default=512),
        c=_get(obj, "c", float, where, default=1.0),
        ratio=_get(obj, "ratio", int, where, default=10),
        seed=_get(obj, "seed", int, where, default=0),
        epsilons=tuple(float(e) for e in epsilons),
    )


def _parse_base_loss(obj, where: str):
    if obj is None:
        return None
    kind = _get(obj, "kind", str, where, required=True)
    if kind == "contrastive":
        _require_keys(obj, {"kind", "pos_margin", "neg_margin"}, where)
        return ContrastiveConfig(
            pos_margin=_get(obj, "pos_margin", float, where, default=0.0),
            neg_margin=_get(obj, "neg_margin", float, where, default=0.5),
        )
    if kind == "triplet":
        _require_keys(obj, {"kind", "margin"}, where)
        return TripletConfig(margin=_get(obj, "margin", float, where, default=0.3))
    if kind == "none":
        _require_keys(obj, {"kind"}, where)
        return None
    raise ConfigError(f"{where}.kind: unknown base loss {kind!r}")


def _parse_cam(obj, where: str):
    if obj is None:
        return None
    _require_keys(obj, {"m_plus", "m_minus", "lambda_plus", "lambda_minus"}, where)
    try:
        return CamConfig(
            m_plus=_get(obj, "m_plus", float, where, required=True),
            m_minus=_get(obj, "m_minus", float, where, required=True),
            lambda_plus=_get(obj, "lambda_plus", float, where, default=1.0),
            lambda_minus=_get(obj, "lambda_minus", float, where, default=1.0),
        )
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def _parse_adacam(obj, where: str):
    if obj is None:
        return None
    _require_keys(
        obj, {"finetune_epochs", "lr", "lr_scale", "percentile_lo", "percentile_hi"}, where
    )
    return AdaCamConfig(
        finetune_epochs=_get(obj, "finetune_epochs", int, where, default=30),
        lr=_get(obj, "lr", float, where, default=1e-6),
        lr_scale=_get(obj, "lr_scale", float, where, default=1.0),
        percentile_lo=_get(obj, "percentile_lo", float, where, default=5.0),
        percentile_hi=_get(obj, "percentile_hi", float, where, default=95.0),
    )


def parse_train_config(obj: dict, where: str = "train") -> TrainConfig:
    _require_keys(
        obj,
        {
            "mode",
            "encoder_dim",
            "epochs",
            "lr",
            "classes_per_batch",
            "samples_per_class",
            "seed",
            "eval_every",
            "base_loss",
            "cam",
            "adacam",
            "eval",
        },
        where,
    )
    try:
        return TrainConfig(
            epochs=_get(obj, "epochs", int, where, required=True),
            lr=_get(obj, "lr", float, where, required=True),
            base_loss=_parse_base_loss(obj.get("base_loss"), f"{where}.base_loss"),
            cam=_parse_cam(obj.get("cam"), f"{where}.cam"),
            adacam=_parse_adacam(obj.get("adacam"), f"{where}.adacam"),
            mode=_get(obj, "mode", str, where, default="free"),
            encoder_dim=_get(obj, "encoder_dim", int, where),
            classes_per_batch=_get(obj, "classes_per_batch", int, where, default=8),
            samples_per_class=_get(obj, "samples_per_class", int, where, default=4),
            seed=_get(obj, "seed", int, where, default=0),
            eval_every=_get(obj, "eval_every", int, where, default=1),
            eval=parse_eval_settings(obj.get("eval", {}), f"{where}.eval"),
        )
    except ConfigError:
        raise
    except Exception as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def parse_run_config(obj: dict) -> tuple[dict, TrainConfig]:
    """Top-level run document: a data source plus the training settings.

    The data source is either {"path": <embedding file>} or
    {"synth": <synth config>}.
    """
    _require_keys(obj, {"schema_version", "data", "train"}, "run")
    version = _get(obj, "schema_version", int, "run", default=SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"run.schema_version: unsupported version {version}")
    data = obj.get("data")
    if not isinstance(data, dict):
        raise ConfigError("run.data: expected an object")
    _require_keys(data, {"path", "synth"}, "run.data")
    if ("path" in data) == ("synth" in data):
        raise ConfigError("run.data: give exactly one of 'path' or 'synth'")
    if "synth" in data:
        data = {"synth": parse_synth_config(data["synth"], "run.data.synth")}
    train_obj = obj.get("train")
    if not isinstance(train_obj, dict):
        raise ConfigError("run.train: expected an object")
    return data, parse_train_config(train_obj, "run.train")


def synth_config_to_dict(cfg: SynthConfig) -> dict:
    out = asdict(cfg)
    if out.get("kappa_range") is not None:
        out["kappa_range"] = list(out["kappa_range"])
    return {k: v for k, v in out.items() if v is not None}
