"""Trainer request parsing and the dataset table loader."""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

DATASET_ENV = "ALEKS_DATASET"

MISSING = {"", "na", "nan", "null", "none"}


class ToolkitError(Exception):
    pass


class RequestError(ToolkitError):
    pass


@dataclass(frozen=True)
class TrainerRequest:
    label: str
    features: tuple[str, ...]
    formulation: str  # "classification" | "regression"
    derived: tuple[tuple[str, str], ...] = ()  # (name, recipe)
    seed: int = 7
    test_fraction: float = 0.25
    coordinates: tuple[str, str] | None = None
    dataset_path: str | None = None

    def __post_init__(self) -> None:
        if self.formulation not in ("classification", "regression"):
            raise RequestError(f"unknown formulation {self.formulation!r}")
        if not 0 < self.test_fraction < 1:
            raise RequestError(f"test_fraction must be in (0, 1), got {self.test_fraction}")
        if not self.label:
            raise RequestError("request needs a label column")
        if not self.features and not self.derived:
            raise RequestError("request needs at least one feature")

    def resolve_dataset(self) -> str:
        path = self.dataset_path or os.environ.get(DATASET_ENV)
        if not path:
            raise RequestError(
                f"no dataset path: set {DATASET_ENV} or put dataset_path in the request"
            )
        if not Path(path).exists():
            raise RequestError(f"dataset file not found: {path}")
        return path


def load_request(path: str | Path) -> TrainerRequest:
    try:
        payload = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise RequestError(f"request file not found: {path}") from None
    except ValueError as exc:
        raise RequestError(f"request file is not valid JSON: {exc}") from exc
    try:
        coordinates = payload.get("coordinates")
        return TrainerRequest(
            label=payload["label"],
            features=tuple(payload.get("features", ())),
            formulation=payload["formulation"],
            derived=tuple((n, r) for n, r in payload.get("derived", ())),
            seed=int(payload.get("seed", 7)),
            test_fraction=float(payload.get("test_fraction", 0.25)),
            coordinates=tuple(coordinates) if coordinates else None,
            dataset_path=payload.get("dataset_path"),
        )
    except KeyError as exc:
        raise RequestError(f"request missing key {exc}") from exc


def load_table(path: str | Path) -> dict[str, np.ndarray]:
    """Columns as float arrays; unparseable or missing values become NaN."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise RequestError(f"dataset file is empty: {path}")
    header, data = rows[0], rows[1:]
    table: dict[str, np.ndarray] = {}
    for j, name in enumerate(header):
        values = np.empty(len(data))
        for i, row in enumerate(data):
            cell = row[j].strip() if j < len(row) else ""
            if cell.lower() in MISSING:
                values[i] = np.nan
            else:
                try:
                    values[i] = float(cell)
                except ValueError:
                    values[i] = np.nan
        table[name] = values
    return table
