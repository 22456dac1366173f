#!/usr/bin/env python3
"""Baseline vs margin-regularized vs adaptive fine-tune, across seeds.

Reproduces the headline desk-scale comparison on the shipped heterogeneous
fixture and writes per-run history CSVs (plottable with the frontend's
pareto renderer) plus a summary table to stdout.

Usage:
    python scripts/cam_study.py [--seeds 5] [--out-dir out/cam_study]
"""

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

REPO = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(REPO / "src"))

from calm.fileio import parse_run_config, write_history_csv, write_json  # noqa: E402
from calm.metrics import evaluate_embeddings  # noqa: E402
from calm.synth import make_dataset  # noqa: E402
from calm.trainer import finetune_adacam, train  # noqa: E402


def load_cfg(name):
    doc = json.loads((REPO / "configs" / name).read_text())
    source, cfg = parse_run_config(doc)
    return source["synth"], cfg


def final_metrics(emb, cfg):
    ev = cfg.eval
    result = evaluate_embeddings(
        emb, far_lo=ev.far_lo, far_hi=ev.far_hi, grid_size=ev.grid_size,
        c=ev.c, epsilons=ev.epsilons, ratio=ev.ratio, seed=ev.seed,
    )
    return result.report.opis, result.recalls[1]


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seeds", type=int, default=5)
    parser.add_argument("--out-dir", default="out/cam_study")
    args = parser.parse_args()
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    synth_base, base_cfg = load_cfg("train_base.json")
    _, cam_cfg = load_cfg("train_cam.json")
    _, ada_cfg = load_cfg("train_adacam.json")

    rows = []
    print(f"{'seed':>4} {'base opis':>10} {'base r@1':>9} {'cam opis':>10} "
          f"{'cam r@1':>9} {'ada opis':>10} {'ada r@1':>9}")
    for i in range(args.seeds):
        synth = dataclasses.replace(synth_base, seed=synth_base.seed + i)
        emb, _ = make_dataset(synth)

        base_out, base_hist = train(emb, dataclasses.replace(base_cfg, seed=i))
        cam_out, cam_hist = train(emb, dataclasses.replace(cam_cfg, seed=i))
        ada_run_cfg = dataclasses.replace(ada_cfg, seed=i)
        ada_out, ada_hist = finetune_adacam(cam_out, ada_run_cfg, start_epoch=ada_cfg.epochs)

        write_history_csv(out_dir / f"history_base_s{i}.csv", base_hist)
        write_history_csv(out_dir / f"history_cam_s{i}.csv", cam_hist)
        write_history_csv(out_dir / f"history_adacam_s{i}.csv", ada_hist)

        ob, rb = final_metrics(base_out, base_cfg)
        oc, rc = final_metrics(cam_out, cam_cfg)
        oa, ra = final_metrics(ada_out, ada_cfg)
        rows.append({"seed": i, "base": [ob, rb], "cam": [oc, rc], "adacam": [oa, ra]})
        print(f"{i:>4} {ob:>10.5f} {rb:>9.4f} {oc:>10.5f} {rc:>9.4f} {oa:>10.5f} {ra:>9.4f}")

    reductions = [(r["base"][0] - r["cam"][0]) / r["base"][0] for r in rows]
    deltas = [r["cam"][1] - r["base"][1] for r in rows]
    print(f"\nmedian opis reduction from regularizer: {np.median(reductions) * 100:+.1f}%")
    print(f"median recall@1 change:                 {np.median(deltas) * 100:+.2f}pp")
    write_json(out_dir / "summary.json", {"runs": rows})
    print(f"artifacts in {out_dir}/")


if __name__ == "__main__":
    main()
