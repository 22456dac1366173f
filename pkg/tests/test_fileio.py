import json

import numpy as np
import pytest

from calm.core import EmbeddingSet, normalize_rows
from calm.errors import ConfigError, FormatError
from calm.fileio import (
    fmt,
    load_embeddings_binary,
    load_embeddings_csv,
    parse_run_config,
    parse_synth_config,
    save_embeddings_binary,
    save_embeddings_csv,
    write_curves_csv,
)
from calm.metrics import UtilityCurve


def sample_set(n=10, dim=5, seed=0):
    rng = np.random.default_rng(seed)
    vectors = normalize_rows(rng.standard_normal((n, dim)))
    labels = rng.integers(0, 3, n)
    return EmbeddingSet(vectors, labels)


class TestBinaryFormat:
    def test_payload_survives_exactly(self, tmp_path):
        es = sample_set()
        path = tmp_path / "e.calm"
        save_embeddings_binary(path, es)
        raw = path.read_bytes()
        assert raw[:4] == b"CALM"
        loaded, deviation = load_embeddings_binary(path)
        assert deviation < 1e-6
        np.testing.assert_array_equal(loaded.labels, es.labels)
        # container carries the f32 payload bit-for-bit
        payload = np.frombuffer(raw, dtype="<f4", count=es.n * es.dim, offset=18)
        save_embeddings_binary(tmp_path / "e2.calm", loaded)
        payload2 = np.frombuffer(
            (tmp_path / "e2.calm").read_bytes(), dtype="<f4", count=es.n * es.dim, offset=18
        )
        np.testing.assert_array_equal(payload, payload2)

    def test_rejects_truncated(self, tmp_path):
        es = sample_set()
        path = tmp_path / "e.calm"
        save_embeddings_binary(path, es)
        path.write_bytes(path.read_bytes()[:-3])
        with pytest.raises(FormatError):
            load_embeddings_binary(path)

    def test_rejects_bad_magic(self, tmp_path):
        path = tmp_path / "e.calm"
        path.write_bytes(b"XXXX" + b"\x00" * 20)
        with pytest.raises(FormatError):
            load_embeddings_binary(path)

    def test_rejects_large_norm_deviation(self, tmp_path):
        es = sample_set()
        path = tmp_path / "e.calm"
        save_embeddings_binary(path, es)
        raw = bytearray(path.read_bytes())
        # scale one row far away from unit norm
        bad = np.frombuffer(bytes(raw[18 : 18 + 4 * es.dim]), dtype="<f4") * 1.01
        raw[18 : 18 + 4 * es.dim] = bad.astype("<f4").tobytes()
        path.write_bytes(bytes(raw))
        with pytest.raises(FormatError):
            load_embeddings_binary(path)


class TestCsvFormat:
    def test_round_trip(self, tmp_path):
        es = sample_set()
        path = tmp_path / "e.csv"
        save_embeddings_csv(path, es)
        loaded, deviation = load_embeddings_csv(path)
        assert deviation < 1e-7  # 9 significant digits
        np.testing.assert_array_equal(loaded.labels, es.labels)
        np.testing.assert_allclose(loaded.vectors, es.vectors, atol=1e-7)

    def test_rejects_bad_header(self, tmp_path):
        path = tmp_path / "e.csv"
        path.write_text("label,x0,x1\n0,1.0,0.0\n")
        with pytest.raises(FormatError):
            load_embeddings_csv(path)

    def test_rejects_ragged_rows(self, tmp_path):
        path = tmp_path / "e.csv"
        path.write_text("label,v0,v1\n0,1.0,0.0\n1,0.0\n")
        with pytest.raises(FormatError):
            load_embeddings_csv(path)


class TestWriters:
    def test_fmt_nine_significant_digits(self):
        assert fmt(1 / 3) == "0.333333333"
        assert fmt(1234567.891) == "1234567.89"
        assert fmt(1e-7) == "1e-07"

    def test_curves_csv_layout(self, tmp_path):
        grid = np.linspace(0.5, 1.5, 3)
        curves = [UtilityCurve(grid, np.array([0.1, 0.2, 0.3]), 0)]
        pooled = UtilityCurve(grid, np.array([0.2, 0.3, 0.4]), "pooled")
        path = tmp_path / "curves.csv"
        write_curves_csv(path, curves, pooled)
        lines = path.read_text().splitlines()
        assert lines[0] == "class_id,d,utility"
        assert lines[1] == "0,0.5,0.1"
        assert lines[-1] == "pooled,1.5,0.4"


class TestConfigParsing:
    def test_unknown_key_path_reported(self):
        with pytest.raises(ConfigError) as exc:
            parse_synth_config({"n_classes": 2, "dim": 4, "samples_per_class": 3,
                                "seed": 0, "kappa_range": [1, 2], "bogus": True})
        assert "bogus" in str(exc.value)

    def test_type_errors_reported(self):
        with pytest.raises(ConfigError):
            parse_synth_config({"n_classes": "four", "dim": 4,
                                "samples_per_class": 3, "seed": 0, "kappa_range": [1, 2]})

    def test_run_config_requires_one_source(self):
        with pytest.raises(ConfigError):
            parse_run_config({"data": {}, "train": {"epochs": 1, "lr": 0.1}})
        with pytest.raises(ConfigError):
            parse_run_config(
                {
                    "data": {"path": "x.calm", "synth": {}},
                    "train": {"epochs": 1, "lr": 0.1},
                }
            )

    def test_schema_version_checked(self):
        with pytest.raises(ConfigError):
            parse_run_config(
                {
                    "schema_version": 99,
                    "data": {"path": "x.calm"},
                    "train": {"epochs": 1, "lr": 0.1},
                }
            )

    def test_nested_defaults(self):
        _, cfg = parse_run_config(
            {
                "data": {"path": "x.calm"},
                "train": {"epochs": 2, "lr": 0.1, "cam": {"m_plus": 0.7, "m_minus": 0.2}},
            }
        )
        assert cfg.cam.lambda_plus == 1.0
        assert cfg.eval.far_lo == 1e-2 and cfg.eval.far_hi == 1e-1
        assert cfg.samples_per_class == 4

    def test_bad_cam_margins_rejected(self):
        with pytest.raises(ConfigError):
            parse_run_config(
                {
                    "data": {"path": "x.calm"},
                    "train": {
                        "epochs": 2,
                        "lr": 0.1,
                        "cam": {"m_plus": 0.2, "m_minus": 0.7},
                    },
                }
            )
