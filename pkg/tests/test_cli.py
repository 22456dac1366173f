import json

import numpy as np
import pytest

from calm.cli import main
from calm.fileio import (
    load_embeddings,
    load_embeddings_binary,
    read_history_csv,
    save_embeddings_binary,
    save_embeddings_csv,
)
from calm.core import EmbeddingSet, normalize_rows


def write_json(path, obj):
    path.write_text(json.dumps(obj, indent=1))
    return str(path)


def synth_cfg(tmp_path, **overrides):
    cfg = {
        "n_classes": 4,
        "dim": 8,
        "samples_per_class": 12,
        "seed": 5,
        "kappa_range": [5, 100],
        "placement": "uniform",
    }
    cfg.update(overrides)
    return write_json(tmp_path / "synth.json", cfg)


def run_cfg(tmp_path, data_path, **train_overrides):
    train = {
        "epochs": 6,
        "lr": 0.4,
        "classes_per_batch": 2,
        "seed": 3,
        "eval_every": 3,
        "base_loss": {"kind": "contrastive", "neg_margin": 0.4},
        "cam": {"m_plus": 0.7, "m_minus": 0.3},
        "eval": {"grid": 64, "ratio": 5, "seed": 1},
    }
    train.update(train_overrides)
    doc = {"schema_version": 1, "data": {"path": str(data_path)}, "train": train}
    return write_json(tmp_path / "run.json", doc)


class TestGen:
    def test_creates_files_and_round_trips(self, tmp_path, capsys):
        cfg = synth_cfg(tmp_path)
        out = tmp_path / "data.calm"
        assert main(["gen", "--config", cfg, "--out", str(out)]) == 0
        summary = json.loads(capsys.readouterr().out)
        assert summary["n"] == 48 and summary["dim"] == 8
        emb, deviation = load_embeddings_binary(out)
        assert emb.n == 48 and deviation < 1e-6
        sidecar = json.loads((tmp_path / "data.calm.kappa.json").read_text())
        assert len(sidecar["kappa"]) == 4
        assert (tmp_path / "data.calm.meta.json").exists()

    def test_rerun_is_byte_identical(self, tmp_path):
        cfg = synth_cfg(tmp_path)
        out1 = tmp_path / "a.calm"
        out2 = tmp_path / "b.calm"
        assert main(["gen", "--config", cfg, "--out", str(out1)]) == 0
        assert main(["gen", "--config", cfg, "--out", str(out2)]) == 0
        assert out1.read_bytes() == out2.read_bytes()
        assert (tmp_path / "a.calm.kappa.json").read_text() == (
            tmp_path / "b.calm.kappa.json"
        ).read_text()

    def test_csv_output(self, tmp_path):
        cfg = synth_cfg(tmp_path)
        out = tmp_path / "data.csv"
        assert main(["gen", "--config", cfg, "--out", str(out)]) == 0
        emb, deviation = load_embeddings(out)
        assert emb.n == 48 and deviation < 1e-6

    def test_malformed_json_exit_2(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text('{"n_classes": 4,\n  "dim": }')
        assert main(["gen", "--config", str(bad), "--out", str(tmp_path / "x.calm")]) == 2
        err = json.loads(capsys.readouterr().err)
        assert err["error"] == "ConfigError"
        assert "line 2" in err["message"]

    def test_unknown_key_exit_2(self, tmp_path, capsys):
        cfg = synth_cfg(tmp_path, extra_knob=1)
        assert main(["gen", "--config", cfg, "--out", str(tmp_path / "x.calm")]) == 2
        err = json.loads(capsys.readouterr().err)
        assert "extra_knob" in err["message"]


class TestEval:
    def easy_dataset(self, tmp_path):
        cfg = synth_cfg(
            tmp_path,
            n_classes=2,
            samples_per_class=30,
            kappa_values=[300.0, 300.0],
            placement="antipodal",
        )
        del_range = json.loads((tmp_path / "synth.json").read_text())
        del_range.pop("kappa_range")
        write_json(tmp_path / "synth.json", del_range)
        out = tmp_path / "easy.calm"
        assert main(["gen", "--config", str(tmp_path / "synth.json"), "--out", str(out)]) == 0
        return out

    def test_easy_case_report(self, tmp_path, capsys):
        data = self.easy_dataset(tmp_path)
        report_path = tmp_path / "report.json"
        curves_path = tmp_path / "curves.csv"
        code = main(
            [
                "eval",
                str(data),
                "--grid",
                "128",
                "--epsilon",
                "10,50,100",
                "--out",
                str(report_path),
                "--curves",
                str(curves_path),
            ]
        )
        assert code == 0
        report = json.loads(report_path.read_text())
        assert report["schema_version"] == 1
        assert report["recall"]["1"] == 1.0
        assert report["opis"] < 1e-4
        eps_by_value = {e["epsilon"]: e["value"] for e in report["epsilon_opis"]}
        assert eps_by_value[100.0] == 0.0
        header = curves_path.read_text().splitlines()[0]
        assert header == "class_id,d,utility"

    def test_rerun_byte_identical(self, tmp_path):
        data = self.easy_dataset(tmp_path)
        r1, r2 = tmp_path / "r1.json", tmp_path / "r2.json"
        for rp in (r1, r2):
            assert main(["eval", str(data), "--grid", "64", "--out", str(rp)]) == 0
        assert r1.read_bytes() == r2.read_bytes()

    def test_exhaustive_flag(self, tmp_path, capsys):
        data = self.easy_dataset(tmp_path)
        assert main(["eval", str(data), "--grid", "64", "--exhaustive"]) == 0
        summary = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
        assert summary["recall1"] == 1.0

    def test_single_class_exit_4(self, tmp_path, capsys):
        vecs = normalize_rows(np.random.default_rng(0).standard_normal((5, 4)))
        es = EmbeddingSet(vecs, [1] * 5)
        path = tmp_path / "single.csv"
        save_embeddings_csv(path, es)
        assert main(["eval", str(path), "--grid", "64"]) == 4
        err = json.loads(capsys.readouterr().err)
        assert err["error"] == "SingleClass"

    def test_missing_file_exit_3(self, tmp_path, capsys):
        assert main(["eval", str(tmp_path / "nope.calm")]) == 3

    def test_corrupt_magic_exit_3(self, tmp_path, capsys):
        bad = tmp_path / "bad.calm"
        bad.write_bytes(b"NOPE" + b"\x00" * 32)
        assert main(["eval", str(bad)]) == 3
        err = json.loads(capsys.readouterr().err)
        assert err["error"] == "FormatError"


class TestTrain:
    def dataset(self, tmp_path):
        cfg = synth_cfg(tmp_path)
        out = tmp_path / "data.calm"
        assert main(["gen", "--config", cfg, "--out", str(out)]) == 0
        return out

    def test_zero_epochs_checkpoint_equals_input(self, tmp_path):
        data = self.dataset(tmp_path)
        cfg = run_cfg(tmp_path, data, epochs=0)
        out_dir = tmp_path / "run0"
        assert main(["train", "--config", cfg, "--out-dir", str(out_dir)]) == 0
        assert (out_dir / "checkpoint.calm").read_bytes() == data.read_bytes()
        history = read_history_csv(out_dir / "history.csv")
        assert history.records == []

    def test_summary_and_artifacts(self, tmp_path, capsys):
        data = self.dataset(tmp_path)
        cfg = run_cfg(tmp_path, data)
        out_dir = tmp_path / "run1"
        assert main(["train", "--config", cfg, "--out-dir", str(out_dir)]) == 0
        summary = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
        assert summary["epochs"] == 6
        assert set(summary) >= {"opis", "recall1", "out_dir"}
        for name in ("checkpoint.calm", "history.csv", "report.json", "meta.json"):
            assert (out_dir / name).exists()

    def test_rerun_byte_identical(self, tmp_path):
        data = self.dataset(tmp_path)
        cfg = run_cfg(tmp_path, data)
        d1, d2 = tmp_path / "r1", tmp_path / "r2"
        for d in (d1, d2):
            assert main(["train", "--config", cfg, "--out-dir", str(d)]) == 0
        for name in ("checkpoint.calm", "history.csv", "report.json"):
            assert (d1 / name).read_bytes() == (d2 / name).read_bytes()

    def test_resume_continues_history(self, tmp_path):
        data = self.dataset(tmp_path)
        first = run_cfg(tmp_path, data, epochs=4)
        out_dir = tmp_path / "stage1"
        assert main(["train", "--config", first, "--out-dir", str(out_dir)]) == 0
        full = run_cfg(tmp_path, data, epochs=8)
        resumed = tmp_path / "stage2"
        assert (
            main(
                [
                    "train",
                    "--config",
                    full,
                    "--out-dir",
                    str(resumed),
                    "--resume",
                    str(out_dir),
                ]
            )
            == 0
        )
        history = read_history_csv(resumed / "history.csv")
        assert [r.epoch for r in history.records] == list(range(1, 9))

    def test_adacam_stage_writes_states(self, tmp_path):
        data = self.dataset(tmp_path)
        cfg = run_cfg(
            tmp_path,
            data,
            epochs=3,
            adacam={"finetune_epochs": 2, "lr": 0.001, "lr_scale": 1.0},
        )
        out_dir = tmp_path / "ada"
        assert main(["train", "--config", cfg, "--out-dir", str(out_dir)]) == 0
        states = json.loads((out_dir / "vmf_states.json").read_text())
        assert len(states["epochs"]) == 2
        history = read_history_csv(out_dir / "history.csv")
        assert [r.epoch for r in history.records] == [1, 2, 3, 4, 5]

    def test_nonfinite_exit_5(self, tmp_path, capsys):
        data = self.dataset(tmp_path)
        cfg = run_cfg(tmp_path, data, lr=1e180, epochs=3)
        out_dir = tmp_path / "boom"
        assert main(["train", "--config", cfg, "--out-dir", str(out_dir)]) == 5
        err = json.loads(capsys.readouterr().err)
        assert err["error"] == "NonFiniteLoss"
        assert (out_dir / "nonfinite_dump.json").exists()


class TestSweep:
    def test_one_by_one_grid_matches_train(self, tmp_path, capsys):
        cfg_path = synth_cfg(tmp_path)
        data = tmp_path / "data.calm"
        assert main(["gen", "--config", cfg_path, "--out", str(data)]) == 0
        cfg = run_cfg(tmp_path, data)
        out_dir = tmp_path / "ref"
        assert main(["train", "--config", cfg, "--out-dir", str(out_dir)]) == 0
        train_summary = json.loads(capsys.readouterr().out.strip().splitlines()[-1])

        sweep_path = tmp_path / "sweep.csv"
        assert (
            main(
                [
                    "sweep",
                    "--config",
                    cfg,
                    "--m-plus",
                    "0.7",
                    "--m-minus",
                    "0.3",
                    "--out",
                    str(sweep_path),
                ]
            )
            == 0
        )
        lines = sweep_path.read_text().splitlines()
        assert lines[0] == "label,m_plus,m_minus,recall1,opis"
        assert lines[1].startswith("baseline,,")
        label, m_plus, m_minus, recall1, opis_value = lines[2].split(",")
        assert label == "cam"
        assert float(opis_value) == pytest.approx(train_summary["opis"], rel=1e-9)
        assert float(recall1) == pytest.approx(train_summary["recall1"], rel=1e-9)

    def test_margin_validation(self, tmp_path, capsys):
        cfg_path = synth_cfg(tmp_path)
        data = tmp_path / "data.calm"
        assert main(["gen", "--config", cfg_path, "--out", str(data)]) == 0
        cfg = run_cfg(tmp_path, data)
        code = main(
            [
                "sweep",
                "--config",
                cfg,
                "--m-plus",
                "0.4",
                "--m-minus",
                "0.5",
                "--out",
                str(tmp_path / "s.csv"),
            ]
        )
        assert code == 2
