#!/usr/bin/env python3
"""Regenerate the small sample outputs the plot frontend tests against.

Writes frontend/testdata/{curves.csv,sweep.csv,history_base.csv,
history_cam.csv,bad_header.csv} from a reduced run of the demo pipeline.
Deterministic: rerunning reproduces identical files.
"""

import dataclasses
import sys
from pathlib import Path

REPO = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(REPO / "src"))

from calm.fileio import write_curves_csv, write_history_csv, write_sweep_csv  # noqa: E402
from calm.losses import CamConfig  # noqa: E402
from calm.metrics import evaluate_embeddings  # noqa: E402
from calm.synth import SynthConfig, make_dataset  # noqa: E402
from calm.trainer import ContrastiveConfig, EvalSettings, TrainConfig, train  # noqa: E402


def main():
    out = REPO / "frontend" / "testdata"
    out.mkdir(parents=True, exist_ok=True)
    synth = SynthConfig(8, 12, 20, seed=100, kappa_range=(5.0, 100.0))
    emb, _ = make_dataset(synth)

    result = evaluate_embeddings(emb, grid_size=96, seed=17)
    write_curves_csv(out / "curves.csv", result.class_curves, result.pooled_curve)

    cfg = TrainConfig(
        epochs=15,
        lr=0.5,
        base_loss=ContrastiveConfig(neg_margin=0.4),
        cam=None,
        classes_per_batch=4,
        seed=0,
        eval_every=1,
        eval=EvalSettings(grid_size=96, ratio=5, seed=17),
    )
    _, hist_base = train(emb, cfg)
    write_history_csv(out / "history_base.csv", hist_base)
    cam_cfg = dataclasses.replace(cfg, cam=CamConfig(0.7, 0.3))
    _, hist_cam = train(emb, cam_cfg)
    write_history_csv(out / "history_cam.csv", hist_cam)

    rows = []
    base_out, _ = train(emb, dataclasses.replace(cfg, eval_every=10**9))
    base_res = evaluate_embeddings(base_out, grid_size=96, seed=17)
    rows.append(
        {
            "label": "baseline",
            "m_plus": None,
            "m_minus": None,
            "recall1": base_res.recalls[1],
            "opis": base_res.report.opis,
        }
    )
    for m_plus in (0.6, 0.7, 0.8):
        for m_minus in (0.2, 0.3, 0.4):
            run_cfg = dataclasses.replace(
                cfg, cam=CamConfig(m_plus, m_minus), eval_every=10**9
            )
            cam_out, _ = train(emb, run_cfg)
            res = evaluate_embeddings(cam_out, grid_size=96, seed=17)
            rows.append(
                {
                    "label": "cam",
                    "m_plus": m_plus,
                    "m_minus": m_minus,
                    "recall1": res.recalls[1],
                    "opis": res.report.opis,
                }
            )
    write_sweep_csv(out / "sweep.csv", rows)

    (out / "bad_header.csv").write_text("class,dist,util\n0,0.5,0.9\n")
    print(f"wrote samples to {out}/")


if __name__ == "__main__":
    main()
