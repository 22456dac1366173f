"""Command-line surface: gen, eval, train, sweep.

Every command is deterministic given its config and seeds; primary
outputs (embedding files, reports, CSVs) are byte-identical across
reruns, while wall-clock information goes to a separate ``*.meta.json``.
Failures print a single-line machine-readable JSON object to stderr and
exit non-zero: 2 for config errors, 3 for I/O or file-format errors, 4
for metric preconditions (insufficient pairs, degenerate range, single
class), 5 for a non-finite loss.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
import time
from pathlib import Path

from . import fileio
from .errors import (
    CalmError,
    ConfigError,
    DegenerateRange,
    EmptyGroup,
    FormatError,
    InsufficientPairs,
    NonFiniteLoss,
    OutOfRange,
    SingleClass,
)
from .losses import CamConfig
from .metrics import evaluate_embeddings
from .synth import make_dataset
from .trainer import TrainConfig, TrainHistory, finetune_adacam, train

EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_METRIC = 4
EXIT_NONFINITE = 5


def _error_json(name: str, message: str, **extra) -> str:
    payload = {"error": name, "message": message}
    payload.update(extra)
    return json.dumps(payload)


class _JsonArgumentParser(argparse.ArgumentParser):
    """Argument errors follow the same single-line JSON stderr convention."""

    def error(self, message):
        print(_error_json("UsageError", f"{self.prog}: {message}"), file=sys.stderr)
        raise SystemExit(EXIT_CONFIG)


def _load_json(path) -> dict:
    text = Path(path).read_text()
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(
            f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}"
        ) from exc


def _write_meta(path, payload: dict) -> None:
    payload = dict(payload)
    payload["generated_at"] = time.strftime("%Y-%m-%dT%H:%M:%S%z")
    fileio.write_json(path, payload)


def _parse_float_list(text: str, flag: str) -> list[float]:
    try:
        values = [float(v) for v in text.split(",") if v.strip() != ""]
    except ValueError as exc:
        raise ConfigError(f"{flag}: {exc}") from exc
    if not values:
        raise ConfigError(f"{flag}: empty list")
    return values


def _parse_far(text: str) -> tuple[float, float]:
    parts = text.split(":")
    if len(parts) != 2:
        raise ConfigError(f"--far expects LO:HI, got {text!r}")
    try:
        return float(parts[0]), float(parts[1])
    except ValueError as exc:
        raise ConfigError(f"--far: {exc}") from exc


# -- commands ------------------------------------------------------------------


def cmd_gen(args) -> int:
    cfg = fileio.parse_synth_config(_load_json(args.config))
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    emb, kappas = make_dataset(cfg)
    out = Path(args.out)
    if out.suffix == ".csv":
        fileio.save_embeddings_csv(out, emb)
    else:
        fileio.save_embeddings_binary(out, emb)
    fileio.write_json(
        str(out) + ".kappa.json",
        {
            "schema_version": fileio.SCHEMA_VERSION,
            "kappa": {str(j): float(k) for j, k in enumerate(kappas)},
            "config": fileio.synth_config_to_dict(cfg),
        },
    )
    _write_meta(str(out) + ".meta.json", {"command": "gen", "config": str(args.config)})
    print(json.dumps({"out": str(out), "n": emb.n, "dim": emb.dim, "classes": int(cfg.n_classes)}))
    return 0


def _eval_result_files(emb, args, out_path, curves_path):
    far_lo, far_hi = _parse_far(args.far)
    if args.ratio < 1:
        raise ConfigError(f"--ratio must be >= 1, got {args.ratio}")
    epsilons = tuple(_parse_float_list(args.epsilon, "--epsilon"))
    result = evaluate_embeddings(
        emb,
        far_lo=far_lo,
        far_hi=far_hi,
        grid_size=args.grid,
        c=args.c,
        epsilons=epsilons,
        ratio=args.ratio,
        seed=args.seed,
        exhaustive=args.exhaustive,
    )
    settings = {
        "far_lo": far_lo,
        "far_hi": far_hi,
        "grid": args.grid,
        "c": args.c,
        "epsilon": list(epsilons),
        "ratio": args.ratio,
        "seed": args.seed,
        "exhaustive": bool(args.exhaustive),
    }
    payload = fileio.report_to_dict(result, settings)
    if out_path:
        fileio.write_json(out_path, payload)
    if curves_path:
        fileio.write_curves_csv(curves_path, result.class_curves, result.pooled_curve)
    return payload


def cmd_eval(args) -> int:
    emb, deviation = fileio.load_embeddings(args.embeddings)
    payload = _eval_result_files(emb, args, args.out, args.curves)
    summary = {
        "opis": payload["opis"],
        "recall1": payload["recall"].get("1"),
        "n": emb.n,
        "norm_deviation": deviation,
    }
    if args.out:
        summary["report"] = str(args.out)
    print(json.dumps(summary))
    return 0


def _resolve_data(data_source):
    """Returns (embeddings, max pre-normalization norm deviation or None)."""
    if "synth" in data_source:
        emb, _ = make_dataset(data_source["synth"])
        return emb, None
    return fileio.load_embeddings(data_source["path"])


def _final_report(emb, cfg: TrainConfig) -> dict:
    ev = cfg.eval
    result = evaluate_embeddings(
        emb,
        far_lo=ev.far_lo,
        far_hi=ev.far_hi,
        grid_size=ev.grid_size,
        c=ev.c,
        epsilons=ev.epsilons,
        ratio=ev.ratio,
        seed=ev.seed,
    )
    settings = {
        "far_lo": ev.far_lo,
        "far_hi": ev.far_hi,
        "grid": ev.grid_size,
        "c": ev.c,
        "epsilon": list(ev.epsilons),
        "ratio": ev.ratio,
        "seed": ev.seed,
        "exhaustive": False,
    }
    return fileio.report_to_dict(result, settings)


def cmd_train(args) -> int:
    data_source, cfg = fileio.parse_run_config(_load_json(args.config))
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    history = TrainHistory()
    start_epoch = 0
    source_file = None
    if args.resume:
        resume_dir = Path(args.resume)
        source_file = resume_dir / "checkpoint.calm"
        emb, deviation = fileio.load_embeddings(source_file)
        history = fileio.read_history_csv(resume_dir / "history.csv")
        start_epoch = history.last_epoch()
    else:
        if "path" in data_source and not str(data_source["path"]).endswith(".csv"):
            source_file = Path(data_source["path"])
        emb, deviation = _resolve_data(data_source)

    try:
        if cfg.epochs > start_epoch:
            emb, stage_history = train(emb, cfg, start_epoch=start_epoch)
            history.records.extend(stage_history.records)
            history.metadata.update(stage_history.metadata)
        if cfg.adacam is not None and cfg.adacam.finetune_epochs > 0:
            emb, ft_history = finetune_adacam(
                emb, cfg, start_epoch=max(cfg.epochs, start_epoch)
            )
            history.records.extend(ft_history.records)
            states = ft_history.metadata.pop("vmf_states", None)
            if states:
                fileio.write_json(
                    out_dir / "vmf_states.json",
                    {"schema_version": fileio.SCHEMA_VERSION, "epochs": states},
                )
            history.metadata["adacam"] = ft_history.metadata
    except NonFiniteLoss as exc:
        dump_path = out_dir / "nonfinite_dump.json"
        fileio.write_json(dump_path, {"error": str(exc), "detail": exc.dump})
        exc.dump = str(dump_path)
        raise

    ran_epochs = history.last_epoch() > start_epoch or (
        cfg.adacam is not None and cfg.adacam.finetune_epochs > 0
    )
    if not ran_epochs and source_file is not None:
        # no optimization happened: the checkpoint is the input, verbatim
        (out_dir / "checkpoint.calm").write_bytes(Path(source_file).read_bytes())
    else:
        fileio.save_embeddings_binary(out_dir / "checkpoint.calm", emb)
    fileio.write_history_csv(out_dir / "history.csv", history)
    report = _final_report(emb, cfg)
    fileio.write_json(out_dir / "report.json", report)
    _write_meta(
        out_dir / "meta.json",
        {
            "command": "train",
            "config": str(args.config),
            "threads": args.threads,
            "metadata": history.metadata,
            "resumed_from_epoch": start_epoch or None,
            "input_norm_deviation": deviation,
        },
    )
    print(
        json.dumps(
            {
                "opis": report["opis"],
                "recall1": report["recall"].get("1"),
                "epochs": history.last_epoch(),
                "out_dir": str(out_dir),
            }
        )
    )
    return 0


def cmd_sweep(args) -> int:
    data_source, cfg = fileio.parse_run_config(_load_json(args.config))
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    m_plus_list = sorted(_parse_float_list(args.m_plus, "--m-plus"))
    m_minus_list = sorted(_parse_float_list(args.m_minus, "--m-minus"))
    for m in m_plus_list + m_minus_list:
        if not -1.0 < m < 1.0:
            raise ConfigError(f"margin {m} outside (-1, 1)")
    if max(m_minus_list) >= min(m_plus_list):
        raise ConfigError("every m_minus must be smaller than every m_plus")
    base_cam = cfg.cam or CamConfig(m_plus=max(m_plus_list), m_minus=min(m_minus_list))

    emb0, _ = _resolve_data(data_source)
    rows = []

    def run_one(label, cam):
        run_cfg = dataclasses.replace(cfg, cam=cam, adacam=None)
        trained, _ = train(emb0, run_cfg)
        report = _final_report(trained, run_cfg)
        rows.append(
            {
                "label": label,
                "m_plus": cam.m_plus if cam else None,
                "m_minus": cam.m_minus if cam else None,
                "recall1": report["recall"].get("1", float("nan")),
                "opis": report["opis"],
            }
        )

    run_one("baseline", None)
    for m_plus in m_plus_list:
        for m_minus in m_minus_list:
            cam = dataclasses.replace(base_cam, m_plus=m_plus, m_minus=m_minus)
            run_one("cam", cam)
    fileio.write_sweep_csv(args.out, rows)
    _write_meta(
        str(args.out) + ".meta.json",
        {"command": "sweep", "config": str(args.config), "threads": args.threads},
    )
    print(json.dumps({"rows": len(rows), "out": str(args.out)}))
    return 0


# -- entry point ----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _JsonArgumentParser(
        prog="calm",
        description="Calibration-consistency auditing and margin-regularized training "
        "for hypersphere embeddings.",
    )
    parser.add_argument(
        "--threads",
        type=int,
        default=os.cpu_count() or 1,
        help="parallelism bound (never changes numeric results)",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_gen = sub.add_parser("gen", help="generate a synthetic dataset")
    p_gen.add_argument("--config", required=True, help="synth config JSON")
    p_gen.add_argument("--out", required=True, help="output embedding file (.csv for text)")
    p_gen.add_argument("--seed", type=int, default=None, help="override the config seed")
    p_gen.set_defaults(func=cmd_gen)

    p_eval = sub.add_parser("eval", help="evaluate an embedding file")
    p_eval.add_argument("embeddings", help="embedding file (binary or .csv)")
    p_eval.add_argument("--far", default="1e-2:1e-1", help="FAR band LO:HI")
    p_eval.add_argument("--grid", type=int, default=512)
    p_eval.add_argument("--c", type=float, default=1.0)
    p_eval.add_argument("--epsilon", default="10,20,50", help="percentile list")
    p_eval.add_argument("--ratio", type=int, default=10)
    p_eval.add_argument("--seed", type=int, default=0)
    p_eval.add_argument("--exhaustive", action="store_true", help="score all pairs")
    p_eval.add_argument("--out", help="report JSON path")
    p_eval.add_argument("--curves", help="per-class curve CSV path")
    p_eval.set_defaults(func=cmd_eval)

    p_train = sub.add_parser("train", help="train embeddings per a run config")
    p_train.add_argument("--config", required=True, help="run config JSON")
    p_train.add_argument("--out-dir", required=True)
    p_train.add_argument("--resume", help="continue from a previous output directory")
    p_train.add_argument("--seed", type=int, default=None, help="override the training seed")
    p_train.set_defaults(func=cmd_train)

    p_sweep = sub.add_parser("sweep", help="grid-sweep the regularizer margins")
    p_sweep.add_argument("--config", required=True, help="run config JSON")
    p_sweep.add_argument("--m-plus", required=True, help="comma list of positive margins")
    p_sweep.add_argument("--m-minus", required=True, help="comma list of negative margins")
    p_sweep.add_argument("--out", required=True, help="sweep CSV path")
    p_sweep.add_argument("--seed", type=int, default=None, help="override the training seed")
    p_sweep.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(_error_json("ConfigError", str(exc)), file=sys.stderr)
        return EXIT_CONFIG
    except (FormatError, OSError) as exc:
        print(_error_json(type(exc).__name__, str(exc)), file=sys.stderr)
        return EXIT_IO
    except (InsufficientPairs, DegenerateRange, SingleClass, EmptyGroup, OutOfRange) as exc:
        print(_error_json(type(exc).__name__, str(exc)), file=sys.stderr)
        return EXIT_METRIC
    except NonFiniteLoss as exc:
        print(_error_json("NonFiniteLoss", str(exc), dump=exc.dump), file=sys.stderr)
        return EXIT_NONFINITE
    except CalmError as exc:
        print(_error_json(type(exc).__name__, str(exc)), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
