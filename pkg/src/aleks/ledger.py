"""Append-only shared experiment memory with role-scoped views.

One loop cycle produces one ``IterationRecord`` holding the four elements
every record must carry: the 1-based iteration index, the modeling
suggestion, the machine-learning result (or an execution-failure marker)
and the domain feedback (or the explicit ds-disabled marker).  Records are
immutable and indexes increase strictly by one.

Each agent role sees its own slice of the ledger: the data analyst the
full history (or just the latest record under the single-iteration
ablation), the machine-learning engineer only the current suggestion, and
the domain scientist the task plus the latest record.

Persistence is line-delimited JSON, one record per line, flushed after
every append, with deterministic key ordering so that a persisted ledger
re-serializes byte-identically.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import TYPE_CHECKING, Iterable, Union

from .agents import ROLE_DA, ROLE_DS, ROLE_MLE, DomainFeedback, ModelingSuggestion
from .errors import AleksError
from .executor import MLResult
from .metrics import ClassificationMetrics, MLMetrics, RegressionMetrics, primary_metric_value

if TYPE_CHECKING:
    from .orchestrator import ResearchTask

logger = logging.getLogger(__name__)

MODE_FULL_HISTORY = "full-history"
MODE_SINGLE_ITERATION = "single-iteration"
MODE_CURRENT_SCOPE = "current-scope"

DEFAULT_LEADERBOARD_CAPACITY = 5
RATIONALE_LIMIT = 280  # characters kept of a suggestion rationale

FORMULATIONS = ("classification", "regression")


class LedgerError(AleksError):
    pass


class IndexMismatchError(LedgerError):
    """Appended record index is not len(records) + 1 — an orchestrator bug."""


class DuplicateIndexError(IndexMismatchError):
    """Appended record index already exists in the ledger."""


@dataclass(frozen=True)
class DsDisabled:
    """Explicit feedback marker used when the domain-scientist agent is off."""


@dataclass(frozen=True)
class ExecutionFailure:
    """Result marker for an iteration whose execution never succeeded."""

    status: str
    attempt: int
    error_summary: str


Feedback = Union[DomainFeedback, DsDisabled]
Result = Union[MLResult, ExecutionFailure]


@dataclass(frozen=True)
class IterationRecord:
    index: int
    suggestion: ModelingSuggestion
    result: Result
    feedback: Feedback
    leakage_flags: tuple[str, ...] = ()
    timestamp: float = field(default_factory=time.time)


@dataclass(frozen=True)
class LeaderboardEntry:
    index: int
    formulation: str
    metric_value: float
    rationale: str


@dataclass(frozen=True)
class Leaderboard:
    """Bounded best-first digest of successful iterations.

    Classification and regression entries are ranked in separate
    sub-lists because their primary metrics (weighted F1 vs R-square) are
    not comparable; the capacity bounds each sub-list.
    """

    capacity: int = DEFAULT_LEADERBOARD_CAPACITY
    entries: tuple[LeaderboardEntry, ...] = ()

    def for_formulation(self, formulation: str) -> tuple[LeaderboardEntry, ...]:
        return tuple(e for e in self.entries if e.formulation == formulation)


@dataclass(frozen=True)
class ExperimentLedger:
    task: "ResearchTask"
    records: tuple[IterationRecord, ...] = ()
    leaderboard: Leaderboard | None = None
    created_at: float = field(default_factory=time.time)

    def latest(self) -> IterationRecord | None:
        return self.records[-1] if self.records else None

    def with_leaderboard(self, board: Leaderboard) -> "ExperimentLedger":
        return replace(self, leaderboard=board)


@dataclass(frozen=True)
class MemoryView:
    mode: str
    task_summary: str
    visible_records: tuple[IterationRecord, ...]
    current_suggestion: ModelingSuggestion | None = None


@dataclass(frozen=True)
class EpisodicEntry:
    timestamp: float
    origin: str
    text: str


@dataclass
class AgentMemory:
    """Per-agent semantic knowledge plus an append-only runtime log."""

    semantic: list[tuple[str, str]] = field(default_factory=list)
    episodic: list[EpisodicEntry] = field(default_factory=list)

    def add_semantic(self, source_id: str, text: str) -> None:
        if any(sid == source_id for sid, _ in self.semantic):
            raise LedgerError(f"semantic entry {source_id!r} already exists")
        self.semantic.append((source_id, text))

    def append_episodic(self, origin: str, text: str) -> EpisodicEntry:
        ts = time.time()
        if self.episodic and ts < self.episodic[-1].timestamp:
            ts = self.episodic[-1].timestamp
        entry = EpisodicEntry(timestamp=ts, origin=origin, text=text)
        self.episodic.append(entry)
        return entry


def append_record(ledger: ExperimentLedger, record: IterationRecord) -> ExperimentLedger:
    """Extend the ledger by exactly one record; prior records are untouched."""
    expected = len(ledger.records) + 1
    if record.index != expected:
        if record.index <= len(ledger.records):
            raise DuplicateIndexError(
                f"record index {record.index} already exists (next is {expected})"
            )
        raise IndexMismatchError(f"record index {record.index} but next is {expected}")
    return replace(ledger, records=ledger.records + (record,))


def append_episodic(memory: AgentMemory, origin: str, text: str) -> AgentMemory:
    """Append a runtime message with a monotone timestamp."""
    memory.append_episodic(origin, text)
    return memory


def view_for_role(
    ledger: ExperimentLedger,
    role: str,
    memory_mode: str = MODE_FULL_HISTORY,
    current_suggestion: ModelingSuggestion | None = None,
) -> MemoryView:
    """The role-scoped slice of the ledger an agent is allowed to see."""
    question = ledger.task.question
    if role == ROLE_DA:
        if memory_mode == MODE_FULL_HISTORY:
            return MemoryView(MODE_FULL_HISTORY, question, ledger.records)
        if memory_mode == MODE_SINGLE_ITERATION:
            latest = ledger.latest()
            visible = (latest,) if latest is not None else ()
            return MemoryView(MODE_SINGLE_ITERATION, question, visible)
        raise ValueError(f"unknown memory mode {memory_mode!r}")
    if role == ROLE_MLE:
        if current_suggestion is None:
            raise LedgerError("ml-engineer view requires the current suggestion")
        return MemoryView(MODE_CURRENT_SCOPE, question, (), current_suggestion)
    if role == ROLE_DS:
        latest = ledger.latest()
        visible = (latest,) if latest is not None else ()
        return MemoryView(MODE_SINGLE_ITERATION, question, visible)
    raise ValueError(f"unknown role {role!r}")


def update_leaderboard(board: Leaderboard, record: IterationRecord) -> Leaderboard:
    """Insert a successful test-split record at its sorted position.

    Records without a usable primary metric (execution failures, or
    metrics computed on the train split) are skipped and logged, never
    raised: the board is a digest, not a gatekeeper.
    """
    result = record.result
    if not isinstance(result, MLResult):
        logger.info("leaderboard: iteration %d skipped (no result)", record.index)
        return board
    if result.metrics.split != "test":
        logger.warning(
            "leaderboard: iteration %d skipped (split=%s is not eligible)",
            record.index,
            result.metrics.split,
        )
        return board
    try:
        value = float(primary_metric_value(result.metrics))
    except (TypeError, ValueError):
        logger.warning("leaderboard: iteration %d skipped (unparseable metric)", record.index)
        return board

    entry = LeaderboardEntry(
        index=record.index,
        formulation=result.formulation,
        metric_value=value,
        rationale=record.suggestion.rationale[:RATIONALE_LIMIT],
    )
    groups: dict[str, list[LeaderboardEntry]] = {f: [] for f in FORMULATIONS}
    for e in board.entries:
        groups.setdefault(e.formulation, []).append(e)
    group = groups.setdefault(entry.formulation, [])
    group.append(entry)
    group.sort(key=lambda e: (-e.metric_value, e.index))
    del group[board.capacity :]
    merged = tuple(e for f in FORMULATIONS for e in groups.get(f, ()))
    extra = tuple(e for f in groups for e in groups[f] if f not in FORMULATIONS)
    return replace(board, entries=merged + extra)


def final_selection(record: IterationRecord) -> tuple[tuple[str, ...], tuple[str, ...]]:
    """(raw names, derived names) selected by one iteration's suggestion."""
    raw = tuple(record.suggestion.raw_features)
    derived = tuple(name for name, _ in record.suggestion.derived_features)
    return raw, derived


def iteration_selections(
    records: Iterable[IterationRecord],
) -> list[tuple[tuple[str, ...], tuple[str, ...]]]:
    return [final_selection(r) for r in records]


# --- persistence -----------------------------------------------------------


def _suggestion_to_dict(s: ModelingSuggestion) -> dict:
    payload = {
        "formulation": s.formulation,
        "raw_features": list(s.raw_features),
        "derived_features": [[name, recipe] for name, recipe in s.derived_features],
        "preprocessing_notes": list(s.preprocessing_notes),
        "rationale": s.rationale,
        "stop": s.stop,
        "label_column": s.label_column,
    }
    if s.recommended_iteration is not None:
        payload["recommended_iteration"] = s.recommended_iteration
    return payload


def _suggestion_from_dict(d: dict) -> ModelingSuggestion:
    return ModelingSuggestion(
        formulation=d["formulation"],
        raw_features=tuple(d["raw_features"]),
        derived_features=tuple((n, r) for n, r in d["derived_features"]),
        preprocessing_notes=tuple(d["preprocessing_notes"]),
        rationale=d["rationale"],
        stop=d["stop"],
        label_column=d["label_column"],
        recommended_iteration=d.get("recommended_iteration"),
    )


def _metrics_to_dict(m: MLMetrics) -> dict:
    if isinstance(m, ClassificationMetrics):
        return {
            "accuracy": m.accuracy,
            "weighted_f1": m.weighted_f1,
            "confusion": [list(row) for row in m.confusion],
            "split": m.split,
        }
    return {"r_square": m.r_square, "rmse": m.rmse, "split": m.split}


def _metrics_from_dict(d: dict) -> MLMetrics:
    if "confusion" in d:
        return ClassificationMetrics(
            accuracy=d["accuracy"],
            weighted_f1=d["weighted_f1"],
            confusion=tuple(tuple(row) for row in d["confusion"]),
            split=d["split"],
        )
    return RegressionMetrics(r_square=d["r_square"], rmse=d["rmse"], split=d["split"])


def _result_to_dict(r: Result) -> dict:
    if isinstance(r, MLResult):
        return {
            "kind": "ml-result",
            "formulation": r.formulation,
            "metrics": _metrics_to_dict(r.metrics),
            "features_used": list(r.features_used),
            "notes": r.notes,
        }
    return {
        "kind": "execution-failure",
        "status": r.status,
        "attempt": r.attempt,
        "error": r.error_summary,
    }


def _result_from_dict(d: dict) -> Result:
    if d["kind"] == "ml-result":
        return MLResult(
            formulation=d["formulation"],
            metrics=_metrics_from_dict(d["metrics"]),
            features_used=tuple(d["features_used"]),
            notes=d["notes"],
        )
    return ExecutionFailure(status=d["status"], attempt=d["attempt"], error_summary=d["error"])


def _feedback_to_dict(f: Feedback) -> dict:
    if isinstance(f, DsDisabled):
        return {"kind": "ds-disabled"}
    return {
        "kind": "feedback",
        "verdict": f.verdict,
        "critique": f.critique,
        "improvements": list(f.improvements),
        "parsimony_note": f.parsimony_note,
        "error_cost_note": f.error_cost_note,
    }


def _feedback_from_dict(d: dict) -> Feedback:
    if d["kind"] == "ds-disabled":
        return DsDisabled()
    return DomainFeedback(
        verdict=d["verdict"],
        critique=d["critique"],
        improvements=tuple(d["improvements"]),
        parsimony_note=d["parsimony_note"],
        error_cost_note=d["error_cost_note"],
    )


def record_to_dict(record: IterationRecord) -> dict:
    payload = {
        "index": record.index,
        "suggestion": _suggestion_to_dict(record.suggestion),
        "result": _result_to_dict(record.result),
        "feedback": _feedback_to_dict(record.feedback),
        "timestamp": record.timestamp,
    }
    if record.leakage_flags:
        payload["leakage"] = list(record.leakage_flags)
    return payload


def record_to_json(record: IterationRecord) -> str:
    return json.dumps(record_to_dict(record), sort_keys=True)


def record_from_dict(d: dict) -> IterationRecord:
    return IterationRecord(
        index=d["index"],
        suggestion=_suggestion_from_dict(d["suggestion"]),
        result=_result_from_dict(d["result"]),
        feedback=_feedback_from_dict(d["feedback"]),
        leakage_flags=tuple(d.get("leakage", ())),
        timestamp=d["timestamp"],
    )


def record_from_json(line: str) -> IterationRecord:
    return record_from_dict(json.loads(line))


class LedgerWriter:
    """Appends records to ``ledger.jsonl``, flushing after every write."""

    def __init__(self, path: str | Path) -> None:
        self.path = Path(path)
        self._fh = open(self.path, "w")

    def append(self, record: IterationRecord) -> None:
        self._fh.write(record_to_json(record) + "\n")
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()

    def __enter__(self) -> "LedgerWriter":
        return self

    def __exit__(self, *exc_info) -> None:
        self.close()


def load_records(path: str | Path) -> list[IterationRecord]:
    with open(path) as fh:
        return [record_from_json(line) for line in fh if line.strip()]


def write_leaderboard(board: Leaderboard, path: str | Path) -> None:
    payload = [
        {
            "index": e.index,
            "formulation": e.formulation,
            "metric": e.metric_value,
            "rationale": e.rationale,
        }
        for e in board.entries
    ]
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
