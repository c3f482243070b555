"""Baseline trainers, deterministic split and the result-block interface."""

from __future__ import annotations

import io
import json
import math

import numpy as np
import pytest

from trainer_toolkit.cli import main
from trainer_toolkit.request import RequestError, TrainerRequest, load_request
from trainer_toolkit.trainers import (
    RESULT_BEGIN,
    RESULT_END,
    TrainingError,
    run_request,
    split_mask,
    train_and_report,
)


def regression_request(**kwargs):
    defaults = dict(
        label="target",
        features=("x1", "x2"),
        formulation="regression",
        seed=7,
        test_fraction=0.25,
    )
    defaults.update(kwargs)
    return TrainerRequest(**defaults)


class TestSplit:
    def test_deterministic(self):
        a = split_mask(200, 7, 0.25)
        b = split_mask(200, 7, 0.25)
        assert np.array_equal(a, b)

    def test_seed_changes_mask(self):
        assert not np.array_equal(split_mask(200, 7, 0.25), split_mask(200, 8, 0.25))

    def test_fraction_roughly_honored(self):
        mask = split_mask(2000, 7, 0.25)
        assert 0.18 < mask.mean() < 0.32


class TestRegression:
    def test_recovers_linear_signal(self, regression_csv, tmp_path, monkeypatch):
        monkeypatch.setenv("ALEKS_DATASET", str(regression_csv))
        payload = train_and_report(regression_request(), workdir=tmp_path)
        assert payload["metrics"]["r_square"] >= 0.9
        assert payload["metrics"]["split"] == "test"
        assert payload["features_used"] == ["x1", "x2"]

    def test_derived_feature_participates(self, regression_csv, tmp_path, monkeypatch):
        monkeypatch.setenv("ALEKS_DATASET", str(regression_csv))
        request = regression_request(
            features=("x1",),
            derived=(("x2_scaled", "x2 * 1"),),
        )
        payload = train_and_report(request, workdir=tmp_path)
        assert payload["features_used"] == ["x1", "x2_scaled"]
        assert payload["metrics"]["r_square"] >= 0.9

    def test_predictions_match_emitted_metrics(self, regression_csv, tmp_path, monkeypatch):
        monkeypatch.setenv("ALEKS_DATASET", str(regression_csv))
        payload = train_and_report(regression_request(), workdir=tmp_path)
        rows = (tmp_path / "predictions.csv").read_text().strip().splitlines()[1:]
        y_true, y_pred = [], []
        for row in rows:
            _, t, p = row.split(",")
            y_true.append(float(t))
            y_pred.append(float(p))
        mean = sum(y_true) / len(y_true)
        ss_tot = sum((v - mean) ** 2 for v in y_true)
        ss_res = sum((a - b) ** 2 for a, b in zip(y_true, y_pred))
        assert 1 - ss_res / ss_tot == pytest.approx(payload["metrics"]["r_square"], abs=1e-9)
        rmse = math.sqrt(sum((a - b) ** 2 for a, b in zip(y_true, y_pred)) / len(y_true))
        assert rmse == pytest.approx(payload["metrics"]["rmse"], abs=1e-9)


class TestClassification:
    def test_separable_blobs(self, classification_csv, tmp_path, monkeypatch):
        monkeypatch.setenv("ALEKS_DATASET", str(classification_csv))
        request = TrainerRequest(
            label="label", features=("f1", "f2"), formulation="classification"
        )
        payload = train_and_report(request, workdir=tmp_path)
        assert payload["metrics"]["accuracy"] >= 0.95
        assert payload["metrics"]["weighted_f1"] >= 0.95
        matrix = payload["metrics"]["confusion"]
        assert len(matrix) == 2 and len(matrix[0]) == 2

    def test_count_label_binarized_with_note(self, tmp_path, monkeypatch):
        import csv
        import random

        rng = random.Random(9)
        path = tmp_path / "counts.csv"
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["f1", "cnt"])
            for _ in range(200):
                infected = rng.random() < 0.5
                writer.writerow([rng.gauss(3 if infected else -3, 0.5), rng.randint(1, 5) if infected else 0])
        monkeypatch.setenv("ALEKS_DATASET", str(path))
        request = TrainerRequest(label="cnt", features=("f1",), formulation="classification")
        payload = train_and_report(request, workdir=tmp_path)
        assert "binarized" in payload["notes"]
        assert payload["metrics"]["accuracy"] >= 0.95


class TestDeterminismAndErrors:
    def test_same_request_same_bytes(self, regression_csv, tmp_path, monkeypatch):
        monkeypatch.setenv("ALEKS_DATASET", str(regression_csv))
        blocks = []
        for _ in range(2):
            out = io.StringIO()
            run_request(regression_request(), workdir=tmp_path, out=out)
            blocks.append(out.getvalue())
        assert blocks[0] == blocks[1]
        assert blocks[0].startswith(RESULT_BEGIN)
        assert blocks[0].strip().endswith(RESULT_END)

    def test_unknown_column_names_column(self, regression_csv, tmp_path, monkeypatch):
        monkeypatch.setenv("ALEKS_DATASET", str(regression_csv))
        request = regression_request(features=("x1", "ghost_column"))
        with pytest.raises(Exception, match="ghost_column"):
            train_and_report(request, workdir=tmp_path)

    def test_cli_exit_codes(self, regression_csv, tmp_path, monkeypatch, capsys):
        monkeypatch.setenv("ALEKS_DATASET", str(regression_csv))
        monkeypatch.chdir(tmp_path)
        good = tmp_path / "request.json"
        good.write_text(
            json.dumps(
                {
                    "label": "target",
                    "features": ["x1", "x2"],
                    "formulation": "regression",
                    "seed": 7,
                    "test_fraction": 0.25,
                }
            )
        )
        assert main(["run", "--request", str(good)]) == 0
        out = capsys.readouterr().out
        assert RESULT_BEGIN in out and RESULT_END in out
        assert (tmp_path / "predictions.csv").exists()

        bad = tmp_path / "bad.json"
        bad.write_text(
            json.dumps({"label": "target", "features": ["nope"], "formulation": "regression"})
        )
        assert main(["run", "--request", str(bad)]) == 2
        assert "nope" in capsys.readouterr().err

    def test_missing_dataset_rejected(self, tmp_path):
        request = regression_request(dataset_path=str(tmp_path / "absent.csv"))
        with pytest.raises(RequestError):
            train_and_report(request, workdir=tmp_path)

    def test_invalid_test_fraction(self):
        with pytest.raises(RequestError):
            regression_request(test_fraction=1.5)

    def test_zero_variance_label_rejected(self, tmp_path, monkeypatch):
        path = tmp_path / "flat.csv"
        path.write_text("a,b\n" + "\n".join(f"{i},5" for i in range(40)) + "\n")
        monkeypatch.setenv("ALEKS_DATASET", str(path))
        request = TrainerRequest(label="b", features=("a",), formulation="regression")
        with pytest.raises(TrainingError):
            train_and_report(request, workdir=tmp_path)

    def test_request_file_round_trip(self, tmp_path):
        payload = {
            "label": "target",
            "features": ["x1"],
            "formulation": "regression",
            "derived": [["d1", "x1 * 2"]],
            "seed": 3,
            "test_fraction": 0.5,
            "coordinates": ["x", "y"],
        }
        path = tmp_path / "request.json"
        path.write_text(json.dumps(payload))
        request = load_request(path)
        assert request.derived == (("d1", "x1 * 2"),)
        assert request.coordinates == ("x", "y")
        assert request.seed == 3
