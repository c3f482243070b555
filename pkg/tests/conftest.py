"""Shared fixtures: synthetic datasets, scripted-run builders, normalizers."""

from __future__ import annotations

import csv
import json
import random
from pathlib import Path

import pytest

from aleks.dataset import load_schema

# --- completion builders -----------------------------------------------------


def suggestion_completion(
    formulation: str = "regression",
    label: str = "grbd_2023",
    features: tuple[str, ...] = ("evi_2022", "grbd_2022"),
    derived: tuple[tuple[str, str], ...] = (),
    preprocess: tuple[str, ...] = (),
    rationale: str = "baseline",
    stop: bool = False,
    recommend: int | None = None,
    prose: str = "Let me look at the data.",
) -> str:
    lines = [f"formulation: {formulation}"]
    if label:
        lines.append(f"label: {label}")
    if features:
        lines.append(f"features: {', '.join(features)}")
    for name, recipe in derived:
        lines.append(f"derive: {name} = {recipe}")
    for note in preprocess:
        lines.append(f"preprocess: {note}")
    lines.append(f"rationale: {rationale}")
    lines.append(f"stop: {'true' if stop else 'false'}")
    if recommend is not None:
        lines.append(f"recommend: {recommend}")
    body = "\n".join(lines)
    return f"{prose}\n\n```aleks\n{body}\n```\n"


def feedback_completion(
    verdict: str = "accept",
    critique: str = "sound approach",
    improvements: tuple[str, ...] = (),
    parsimony: str | None = None,
    error_cost: str | None = None,
) -> str:
    lines = [f"verdict: {verdict}", f"critique: {critique}"]
    for item in improvements:
        lines.append(f"improvement: {item}")
    if parsimony:
        lines.append(f"parsimony: {parsimony}")
    if error_cost:
        lines.append(f"error_cost: {error_cost}")
    body = "\n".join(lines)
    return f"Reviewing the result.\n\n```aleks\n{body}\n```\n"


def knowledge_completion(summary: str = "vector pressure drives spread") -> str:
    return (
        "```aleks\n"
        "variable: prior-year infection counts\n"
        "causal: infected neighbours raise next-year risk\n"
        f"summary: {summary}\n"
        "```\n"
    )


def result_script(
    formulation: str = "regression",
    metrics: dict | None = None,
    features: tuple[str, ...] = ("evi_2022", "grbd_2022"),
    notes: str = "",
) -> str:
    """An inert analysis script that prints a canned result block."""
    if metrics is None:
        metrics = {"r_square": 0.7, "rmse": 0.9, "split": "test"}
    payload = {
        "formulation": formulation,
        "metrics": metrics,
        "features_used": list(features),
        "notes": notes,
    }
    return (
        "import json\n"
        f"payload = {payload!r}\n"
        'print("ALEKS_RESULT_BEGIN")\n'
        "print(json.dumps(payload))\n"
        'print("ALEKS_RESULT_END")\n'
    )


def script_completion(script: str, prose: str = "Here is the script.") -> str:
    return f"{prose}\n\n```python\n{script}```\n"


def regression_metrics_for(i: int) -> dict:
    return {"r_square": round(0.5 + 0.02 * i, 4), "rmse": round(1.0 - 0.01 * i, 4), "split": "test"}


def scripted_run(
    n_iterations: int,
    stop_after: bool = True,
    ds: bool = True,
    label: str = "grbd_2023",
    features: tuple[str, ...] = ("evi_2022", "grbd_2022"),
    recommend: int | None = None,
    derived_at: dict[int, tuple[tuple[str, str], ...]] | None = None,
    feature_overrides: dict[int, tuple[str, ...]] | None = None,
    metric_overrides: dict[int, dict] | None = None,
) -> dict[tuple[str, int, int], str]:
    """Responses for a full run: analyst, engineer and scientist per iteration.

    When ``stop_after`` is set the analyst's proposal for iteration n+1
    carries the stop flag (recommending ``recommend`` or the last
    iteration).
    """
    responses: dict[tuple[str, int, int], str] = {}
    derived_at = derived_at or {}
    feature_overrides = feature_overrides or {}
    metric_overrides = metric_overrides or {}
    for i in range(1, n_iterations + 1):
        feats = feature_overrides.get(i, features)
        metrics = metric_overrides.get(i, regression_metrics_for(i))
        formulation = "classification" if "confusion" in metrics else "regression"
        responses[("data-analyst", i, 1)] = suggestion_completion(
            formulation=formulation,
            label=label,
            features=feats,
            derived=derived_at.get(i, ()),
            rationale=f"iteration {i} rationale",
        )
        used = feats + tuple(name for name, _ in derived_at.get(i, ()))
        responses[("ml-engineer", i, 1)] = script_completion(
            result_script(formulation=formulation, metrics=metrics, features=used)
        )
        if ds:
            responses[("domain-scientist", i, 1)] = feedback_completion(
                critique=f"iteration {i} looks reasonable"
            )
    if stop_after:
        responses[("data-analyst", n_iterations + 1, 1)] = suggestion_completion(
            stop=True,
            features=(),
            label=label,
            rationale="performance satisfactory",
            recommend=recommend if recommend is not None else n_iterations,
        )
    return responses


# --- datasets ----------------------------------------------------------------

VINEYARD_COLUMNS = [
    "id",
    "x",
    "y",
    "canopy_area",
    "evi_2021",
    "evi_2022",
    "evi_2023",
    "grbd_2021",
    "grbd_2022",
    "grbd_2023",
    "grbd_2024",
]


def write_vineyard_csv(path: Path, n_rows: int = 40, seed: int = 11) -> Path:
    rng = random.Random(seed)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(VINEYARD_COLUMNS)
        for i in range(n_rows):
            evi = {y: round(rng.uniform(0.1, 0.9), 3) for y in (2021, 2022, 2023)}
            grbd = {y: rng.randint(0, 9) for y in (2021, 2022, 2023, 2024)}
            writer.writerow(
                [
                    i,
                    (i % 8) * 10,
                    (i // 8) * 10,
                    round(rng.uniform(1.0, 4.0), 2),
                    evi[2021],
                    evi[2022],
                    evi[2023],
                    grbd[2021],
                    grbd[2022],
                    grbd[2023],
                    grbd[2024],
                ]
            )
    return path


@pytest.fixture
def vineyard_csv(tmp_path: Path) -> Path:
    return write_vineyard_csv(tmp_path / "vineyard.csv")


@pytest.fixture
def vineyard(vineyard_csv: Path):
    return load_schema(vineyard_csv)


# --- normalization helpers ----------------------------------------------------


def normalize_ledger_text(text: str) -> str:
    """Ledger bytes with every timestamp pinned, for determinism compares."""
    lines = []
    for line in text.splitlines():
        if not line.strip():
            continue
        payload = json.loads(line)
        payload["timestamp"] = 0.0
        lines.append(json.dumps(payload, sort_keys=True))
    return "\n".join(lines)


def normalized_ledger_file(path: Path) -> str:
    return normalize_ledger_text(Path(path).read_text())
