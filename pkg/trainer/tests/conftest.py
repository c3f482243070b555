"""Synthetic dataset generators for the trainer suite."""

from __future__ import annotations

import csv
import random
from pathlib import Path

import pytest


def write_regression_csv(path: Path, n: int = 500, sigma: float = 0.1, seed: int = 3) -> Path:
    """y = 2*x1 - x2 + N(0, sigma); plus coordinates for spatial recipes."""
    rng = random.Random(seed)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x", "y", "x1", "x2", "target"])
        for i in range(n):
            x1 = rng.gauss(0, 1)
            x2 = rng.gauss(0, 1)
            target = 2 * x1 - x2 + rng.gauss(0, sigma)
            writer.writerow([(i % 20) * 10, (i // 20) * 10, x1, x2, target])
    return path


def write_classification_csv(path: Path, n: int = 400, seed: int = 4) -> Path:
    """Two well-separated blobs labelled 0/1."""
    rng = random.Random(seed)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["f1", "f2", "label"])
        for _ in range(n):
            cls = rng.random() < 0.5
            cx = 2.0 if cls else -2.0
            writer.writerow(
                [rng.gauss(cx, 0.5), rng.gauss(cx, 0.5), int(cls)]
            )
    return path


def write_two_year_csv(path: Path, n: int = 400, seed: int = 5) -> Path:
    """Both years share one generating process: g[t+1] = 2*evi[t] + 0.8*g[t] + eps."""
    rng = random.Random(seed)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x", "y", "evi_2022", "evi_2023", "grbd_2022", "grbd_2023", "grbd_2024"])
        for i in range(n):
            evi22 = rng.gauss(0, 1)
            evi23 = rng.gauss(0, 1)
            g22 = rng.gauss(0, 1)
            g23 = 2 * evi22 + 0.8 * g22 + rng.gauss(0, 0.1)
            g24 = 2 * evi23 + 0.8 * g23 + rng.gauss(0, 0.1)
            writer.writerow(
                [(i % 20) * 10, (i // 20) * 10, f"{evi22:.6f}", f"{evi23:.6f}",
                 f"{g22:.6f}", f"{g23:.6f}", f"{g24:.6f}"]
            )
    return path


@pytest.fixture
def regression_csv(tmp_path):
    return write_regression_csv(tmp_path / "reg.csv")


@pytest.fixture
def classification_csv(tmp_path):
    return write_classification_csv(tmp_path / "clf.csv")


@pytest.fixture
def two_year_csv(tmp_path):
    return write_two_year_csv(tmp_path / "years.csv")
