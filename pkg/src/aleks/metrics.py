"""Deterministic metric computation and result-consistency checking.

Conventions fixed here and relied on everywhere else:

* Confusion matrices are row = true class, column = predicted class.
* Weighted F1 averages per-class F1 scores with true-class supports
  (row sums) as weights; classes with zero support are excluded from
  the weighting, and a class whose precision and recall are both zero
  contributes an F1 of 0.
* Regression quality is the coefficient of determination about the
  mean of the observed values; error is root-mean-square in label units.

Everything in this module is a pure function; nothing touches the
filesystem except the two CSV exporters at the bottom.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence, Union

import numpy as np

from .errors import AleksError

logger = logging.getLogger(__name__)

SPLIT_VALUES = ("train", "test")


class MetricError(AleksError):
    """Degenerate input to a metric computation."""


@dataclass(frozen=True)
class ClassificationMetrics:
    """Classification outcome: accuracy, weighted F1 and the confusion matrix."""

    accuracy: float
    weighted_f1: float
    confusion: tuple[tuple[int, ...], ...]
    split: str

    def __post_init__(self) -> None:
        if self.split not in SPLIT_VALUES:
            raise MetricError(f"split must be one of {SPLIT_VALUES}, got {self.split!r}")


@dataclass(frozen=True)
class RegressionMetrics:
    """Regression outcome: coefficient of determination and RMSE."""

    r_square: float
    rmse: float
    split: str

    def __post_init__(self) -> None:
        if self.split not in SPLIT_VALUES:
            raise MetricError(f"split must be one of {SPLIT_VALUES}, got {self.split!r}")
        if self.rmse < 0:
            raise MetricError(f"rmse must be non-negative, got {self.rmse}")


MLMetrics = Union[ClassificationMetrics, RegressionMetrics]


@dataclass(frozen=True)
class FrequencyRow:
    feature: str
    kind: str  # "raw" | "derived"
    frequency: float


@dataclass(frozen=True)
class FeatureFrequencyTable:
    """Per-feature fraction of runs whose final selection included it."""

    rows: tuple[FrequencyRow, ...]

    def filtered(self, threshold: float) -> tuple[FrequencyRow, ...]:
        """Rows at or above a frequency threshold (e.g. 0.6)."""
        return tuple(r for r in self.rows if r.frequency >= threshold)


@dataclass(frozen=True)
class SelectionHeatmap:
    """Iteration-by-feature selection booleans.

    ``feature_order`` lists every dataset column in schema order first,
    then non-schema (derived) features in the order they were first
    proposed.  ``kinds`` tags each column ``raw``/``derived`` (``unknown``
    for raw names that never existed in the schema).
    """

    feature_order: tuple[str, ...]
    kinds: tuple[str, ...]
    cells: tuple[tuple[bool, ...], ...]  # cells[iteration][feature]


def _as_matrix(matrix: Sequence[Sequence[float]]) -> np.ndarray:
    m = np.asarray(matrix, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1] or m.size == 0:
        raise MetricError(f"confusion matrix must be square and non-empty, got shape {m.shape}")
    if (m < 0).any():
        raise MetricError("confusion matrix must be non-negative")
    if m.sum() == 0:
        raise MetricError("confusion matrix is all-zero")
    return m


def accuracy_from_confusion(matrix: Sequence[Sequence[float]]) -> float:
    """Trace over total count of a (rows = true, columns = predicted) matrix."""
    m = _as_matrix(matrix)
    return float(np.trace(m) / m.sum())


def weighted_f1_from_confusion(matrix: Sequence[Sequence[float]]) -> float:
    """Support-weighted mean of per-class F1 scores.

    Per-class precision comes from the column sum, recall from the row
    sum, F1 = 2PR/(P+R).  Weights are the true-class supports (row sums);
    zero-support classes do not participate in the weighting.
    """
    m = _as_matrix(matrix)
    supports = m.sum(axis=1)
    predicted = m.sum(axis=0)
    diag = np.diag(m)

    weighted = 0.0
    total_support = supports.sum()
    for k in range(m.shape[0]):
        if supports[k] == 0:
            continue
        precision = diag[k] / predicted[k] if predicted[k] > 0 else 0.0
        recall = diag[k] / supports[k]
        f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
        weighted += supports[k] * f1
    return float(weighted / total_support)


def _as_vectors(y: Sequence[float], yhat: Sequence[float]) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(y, dtype=float)
    b = np.asarray(yhat, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise MetricError(f"length mismatch: {a.shape} vs {b.shape}")
    return a, b


def r_square(y: Sequence[float], yhat: Sequence[float]) -> float:
    """1 - SS_res/SS_tot with SS_tot taken about the mean of ``y``."""
    a, b = _as_vectors(y, yhat)
    if a.size < 2:
        raise MetricError("r_square needs at least 2 points")
    ss_tot = float(np.sum((a - a.mean()) ** 2))
    if ss_tot == 0:
        raise MetricError("r_square undefined for zero-variance y")
    ss_res = float(np.sum((a - b) ** 2))
    return 1.0 - ss_res / ss_tot


def rmse(y: Sequence[float], yhat: Sequence[float]) -> float:
    """Root of the mean squared error, in label units."""
    a, b = _as_vectors(y, yhat)
    if a.size == 0:
        raise MetricError("rmse needs at least 1 point")
    return float(np.sqrt(np.mean((a - b) ** 2)))


def primary_metric_value(metrics: MLMetrics) -> float:
    """Ranking metric: weighted F1 for classification, R-square for regression."""
    if isinstance(metrics, ClassificationMetrics):
        return metrics.weighted_f1
    return metrics.r_square


def feature_frequency(
    final_selections: Sequence[tuple[Sequence[str], Sequence[str]]],
) -> FeatureFrequencyTable:
    """Fraction of runs whose final model selected each feature.

    ``final_selections`` holds one ``(raw_names, derived_names)`` pair per
    run.  Output rows are sorted by descending frequency, ties broken by
    feature name.
    """
    if not final_selections:
        raise MetricError("feature_frequency needs at least one run")
    counts: dict[str, int] = {}
    kinds: dict[str, str] = {}
    for raw_names, derived_names in final_selections:
        seen = set()
        for name in raw_names:
            kinds.setdefault(name, "raw")
            seen.add(name)
        for name in derived_names:
            kinds.setdefault(name, "derived")
            seen.add(name)
        for name in seen:
            counts[name] = counts.get(name, 0) + 1
    n_runs = len(final_selections)
    rows = [
        FrequencyRow(feature=name, kind=kinds[name], frequency=counts[name] / n_runs)
        for name in counts
    ]
    rows.sort(key=lambda r: (-r.frequency, r.feature))
    return FeatureFrequencyTable(rows=tuple(rows))


def selection_heatmap(
    iteration_selections: Sequence[tuple[Sequence[str], Sequence[str]]],
    schema_columns: Sequence[str],
) -> SelectionHeatmap:
    """Boolean selection matrix over (iteration, feature).

    ``iteration_selections`` holds one ``(raw_names, derived_names)`` pair
    per iteration, in iteration order.  All schema columns appear first in
    schema order; derived features follow in first-appearance order.  A raw
    name absent from the schema is kept as a trailing ``unknown`` column
    and a warning is emitted.
    """
    if not iteration_selections:
        raise MetricError("selection_heatmap needs a non-empty ledger")
    order: list[str] = list(schema_columns)
    kinds: list[str] = ["raw"] * len(order)
    known = set(order)
    for raw_names, derived_names in iteration_selections:
        for name in derived_names:
            if name not in known:
                order.append(name)
                kinds.append("derived")
                known.add(name)
        for name in raw_names:
            if name not in known:
                logger.warning("selection heatmap: unknown raw column %r", name)
                order.append(name)
                kinds.append("unknown")
                known.add(name)

    cells = []
    for raw_names, derived_names in iteration_selections:
        selected = set(raw_names) | set(derived_names)
        cells.append(tuple(name in selected for name in order))
    return SelectionHeatmap(feature_order=tuple(order), kinds=tuple(kinds), cells=tuple(cells))


def verify_reported_consistency(
    reported: ClassificationMetrics, tolerance: float = 0.01
) -> bool:
    """Recompute accuracy and weighted F1 from the confusion matrix.

    Consistent iff both recomputed values sit within ``tolerance`` of the
    reported ones (the default matches 2-decimal reporting).
    """
    acc = accuracy_from_confusion(reported.confusion)
    f1 = weighted_f1_from_confusion(reported.confusion)
    return abs(acc - reported.accuracy) <= tolerance and abs(f1 - reported.weighted_f1) <= tolerance


def write_heatmap_csv(heatmap: SelectionHeatmap, path: str | Path) -> None:
    """Feature-name header, kind header, then one 0/1 row per iteration."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(heatmap.feature_order)
        writer.writerow(heatmap.kinds)
        for row in heatmap.cells:
            writer.writerow([int(v) for v in row])


def write_frequency_csv(table: FeatureFrequencyTable, path: str | Path) -> None:
    """Columns: feature, kind, frequency."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["feature", "kind", "frequency"])
        for row in table.rows:
            writer.writerow([row.feature, row.kind, f"{row.frequency:.6g}"])
