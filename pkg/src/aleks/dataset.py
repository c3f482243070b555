"""Tabular dataset ingestion, previewing, leakage guarding and year shifting.

Datasets are delimiter-separated text files with a header row.  Loading
infers a per-column schema only; rows are re-streamed on demand so the
dataset object stays cheap to pass around.  Column names ending in a
4-digit year group (``_YYYY``, 1900-2100) are year-tagged, which drives
both the temporal leakage rules and cross-year feature shifting.
"""

from __future__ import annotations

import csv
import math
import re
from dataclasses import dataclass, replace
from pathlib import Path
from typing import TYPE_CHECKING, Iterator

from .errors import AleksError

if TYPE_CHECKING:  # circular at runtime only
    from .agents import ModelingSuggestion

YEAR_PATTERN = re.compile(r"_(\d{4})$")
YEAR_MIN, YEAR_MAX = 1900, 2100

# Values treated as missing after strip/lower; imputation is never done here.
MISSING_MARKERS = frozenset({"", "na", "nan", "null", "none"})

# Non-numeric columns with at most this many distinct values are categorical.
CATEGORICAL_MAX_DISTINCT = 20

_IDENTIFIER = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")


class DatasetError(AleksError):
    """Problem reading or interpreting a dataset file."""


class MissingFileError(DatasetError):
    pass


class EmptyFileError(DatasetError):
    pass


class RaggedRowsError(DatasetError):
    pass


class UnknownColumnError(DatasetError):
    """A referenced feature is neither a schema column nor a declared derivation."""


class MissingShiftedColumnError(DatasetError):
    """A year-shifted column name does not exist in the schema."""


@dataclass(frozen=True)
class ColumnInfo:
    name: str
    dtype: str  # "numeric" | "integer" | "categorical" | "text"
    year_tag: int | None
    missing_count: int


@dataclass(frozen=True)
class TabularDataset:
    path: str
    schema: tuple[ColumnInfo, ...]
    n_rows: int
    delimiter: str = ","

    def column_names(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.schema)

    def column(self, name: str) -> ColumnInfo:
        for c in self.schema:
            if c.name == name:
                return c
        raise UnknownColumnError(f"no column named {name!r}")


@dataclass(frozen=True)
class DatasetPreview:
    """Rows 0, k, 2k, ... for sampling interval k, capped at a maximum count."""

    schema: tuple[ColumnInfo, ...]
    sample_rows: tuple[tuple[str, ...], ...]
    sampling_interval: int


@dataclass(frozen=True)
class LeakageReport:
    ok: bool
    violations: tuple[str, ...]


def year_tag(name: str, pattern: re.Pattern[str] = YEAR_PATTERN) -> int | None:
    """Year parsed from a trailing ``_YYYY`` group, if within bounds."""
    m = pattern.search(name)
    if not m:
        return None
    year = int(m.group(1))
    if YEAR_MIN <= year <= YEAR_MAX:
        return year
    return None


def _is_missing(value: str) -> bool:
    return value.strip().lower() in MISSING_MARKERS


def _infer_dtype(values: list[str]) -> str:
    present = [v for v in values if not _is_missing(v)]
    if not present:
        return "text"

    def parses(fn) -> bool:
        for v in present:
            try:
                fn(v.strip())
            except ValueError:
                return False
        return True

    if parses(int):
        return "integer"
    if parses(float):
        return "numeric"
    if len(set(present)) <= CATEGORICAL_MAX_DISTINCT:
        return "categorical"
    return "text"


def _read_rows(path: str, delimiter: str) -> Iterator[list[str]]:
    with open(path, newline="") as fh:
        yield from csv.reader(fh, delimiter=delimiter)


def load_schema(
    path: str | Path,
    delimiter: str = ",",
    year_pattern: re.Pattern[str] = YEAR_PATTERN,
) -> TabularDataset:
    """Infer the column schema and count data rows.

    A column is integer if every non-missing value parses as an int,
    numeric if every one parses as a float, categorical if it has few
    distinct values, text otherwise.
    """
    path = Path(path)
    if not path.exists():
        raise MissingFileError(f"dataset file not found: {path}")

    rows = _read_rows(str(path), delimiter)
    try:
        header = next(rows)
    except StopIteration:
        raise EmptyFileError(f"dataset file is empty: {path}") from None
    if not any(h.strip() for h in header):
        raise EmptyFileError(f"dataset file has a blank header: {path}")
    if len(set(header)) != len(header):
        raise DatasetError(f"duplicate column names in {path}")

    columns: list[list[str]] = [[] for _ in header]
    n_rows = 0
    for i, row in enumerate(rows, start=2):
        if not row:  # blank line: a row with every value missing
            row = [""] * len(header)
        if len(row) != len(header):
            raise RaggedRowsError(
                f"row {i} has {len(row)} fields, header has {len(header)}"
            )
        for col, value in zip(columns, row):
            col.append(value)
        n_rows += 1

    schema = tuple(
        ColumnInfo(
            name=name,
            dtype=_infer_dtype(values),
            year_tag=year_tag(name, year_pattern),
            missing_count=sum(1 for v in values if _is_missing(v)),
        )
        for name, values in zip(header, columns)
    )
    return TabularDataset(path=str(path), schema=schema, n_rows=n_rows, delimiter=delimiter)


def auto_interval(n_rows: int, max_rows: int = 50) -> int:
    """Smallest sampling interval that yields at most ``max_rows`` samples."""
    if n_rows <= max_rows:
        return 1
    return math.ceil(n_rows / max_rows)


def preview(dataset: TabularDataset, interval: int, max_rows: int = 50) -> DatasetPreview:
    """Sample rows at indices 0, interval, 2*interval, ... up to ``max_rows``."""
    if interval < 1:
        raise DatasetError(f"sampling interval must be >= 1, got {interval}")
    rows = _read_rows(dataset.path, dataset.delimiter)
    next(rows)  # header
    sampled = []
    for i, row in enumerate(rows):
        if i % interval == 0:
            if not row:
                row = [""] * len(dataset.schema)
            sampled.append(tuple(row))
            if len(sampled) >= max_rows:
                break
    return DatasetPreview(
        schema=dataset.schema,
        sample_rows=tuple(sampled),
        sampling_interval=interval,
    )


def format_preview(pv: DatasetPreview) -> str:
    """Plain-text rendering used as a prompt context block."""
    lines = ["columns:"]
    for col in pv.schema:
        tag = f", year={col.year_tag}" if col.year_tag is not None else ""
        lines.append(f"  {col.name} ({col.dtype}{tag}, missing={col.missing_count})")
    lines.append(f"sample rows (every {pv.sampling_interval}):")
    lines.append("  " + " | ".join(c.name for c in pv.schema))
    for row in pv.sample_rows:
        lines.append("  " + " | ".join(row))
    return "\n".join(lines)


def _recipe_tokens(recipe: str) -> list[str]:
    return _IDENTIFIER.findall(recipe)


def validate_no_leakage(
    dataset: TabularDataset,
    suggestion: "ModelingSuggestion",
    label_column: str,
    target_year: int | None,
) -> LeakageReport:
    """Check a suggestion for label and future-information leakage.

    Violations: the label column among the predictors; any raw feature
    whose year tag is not strictly before ``target_year``; any derived
    feature whose recipe references such a column.  Raw features that are
    neither schema columns nor declared derivations raise
    ``UnknownColumnError``.
    """
    names = set(dataset.column_names())
    if label_column not in names:
        raise UnknownColumnError(f"label column {label_column!r} not in schema")

    derived_names = {name for name, _ in suggestion.derived_features}
    tainted: dict[str, str] = {label_column: "label"}
    if target_year is not None:
        for col in dataset.schema:
            if col.year_tag is not None and col.year_tag >= target_year:
                tainted.setdefault(col.name, f"year {col.year_tag}")

    violations: list[str] = []
    for feature in suggestion.raw_features:
        if feature not in names and feature not in derived_names:
            raise UnknownColumnError(f"feature {feature!r} not in schema")
        if feature == label_column:
            violations.append(f"label column {feature!r} used as a predictor")
        elif feature in tainted:
            violations.append(
                f"feature {feature!r} ({tainted[feature]}) is not prior to target year {target_year}"
            )
    for name, recipe in suggestion.derived_features:
        for token in _recipe_tokens(recipe):
            if token in tainted:
                reason = tainted[token]
                what = "the label column" if reason == "label" else f"{reason} column"
                violations.append(
                    f"derived feature {name!r} references {what} {token!r}"
                )
    return LeakageReport(ok=not violations, violations=tuple(violations))


def _shift_name(name: str, delta: int) -> str | None:
    """Shift a trailing year tag by delta; None when the name is untagged."""
    tag = year_tag(name)
    if tag is None:
        return None
    shifted = tag + delta
    if not (YEAR_MIN <= shifted <= YEAR_MAX):
        raise DatasetError(
            f"shifting {name!r} by {delta:+d} leaves the supported year range"
        )
    return YEAR_PATTERN.sub(f"_{shifted}", name)


def shift_features_by_year(
    dataset: TabularDataset,
    suggestion: "ModelingSuggestion",
    delta: int,
) -> "ModelingSuggestion":
    """Rewrite every year-tagged name in the suggestion by ``delta`` years.

    Raw features, the label column and schema columns referenced inside
    derived-feature recipes must still exist after shifting; derived
    feature names are rewritten without an existence check.  Untagged
    names are untouched.  ``delta=0`` returns the suggestion unchanged.
    """
    if delta == 0:
        return suggestion
    names = set(dataset.column_names())

    def shift_column(name: str) -> str:
        shifted = _shift_name(name, delta)
        if shifted is None:
            return name
        if shifted not in names:
            raise MissingShiftedColumnError(
                f"shifting {name!r} by {delta:+d} needs column {shifted!r}, which does not exist"
            )
        return shifted

    derived_names = {name for name, _ in suggestion.derived_features}

    def shift_recipe(recipe: str) -> str:
        def repl(m: re.Match[str]) -> str:
            token = m.group(0)
            if token in names:
                return shift_column(token)
            if token in derived_names:
                return _shift_name(token, delta) or token
            return token

        return _IDENTIFIER.sub(repl, recipe)

    raw = tuple(shift_column(f) for f in suggestion.raw_features)
    derived = tuple(
        (_shift_name(name, delta) or name, shift_recipe(recipe))
        for name, recipe in suggestion.derived_features
    )
    label = shift_column(suggestion.label_column) if suggestion.label_column else suggestion.label_column
    return replace(suggestion, raw_features=raw, derived_features=derived, label_column=label)
