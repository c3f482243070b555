"""The experiment loop tying agents, executor and ledger together.

One experiment runs up to ``budget`` iterations.  Each iteration: the
analyst proposes from its configured ledger view (a stop-flagged proposal
ends the run before anything executes), the leakage guard checks the
proposal, the engineer generates and executes a script with retries, the
domain scientist reviews (or the ds-disabled marker is recorded), and the
record is appended and flushed.  On exit a final report names the
recommended iteration.

Ablations are plain configuration: presets ``exp1``..``exp4`` cover the
full system, no domain scientist, single-iteration memory, and the
leaderboard supplement.
"""

from __future__ import annotations

import json
import logging
import re
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

from . import agents
from .agents import (
    DomainFeedback,
    MleTaskSpec,
    ModelingSuggestion,
    da_propose,
    ds_ingest_literature,
    ds_review,
)
from .dataset import (
    TabularDataset,
    UnknownColumnError,
    auto_interval,
    preview,
    shift_features_by_year,
    validate_no_leakage,
    year_tag,
)
from .errors import AleksError, ConfigError
from .executor import (
    DEFAULT_MEMORY_CAP,
    DEFAULT_RETRY_LIMIT,
    DEFAULT_WALL_TIMEOUT,
    ENV_DATASET,
    ExecutionOutcome,
    MLResult,
    SandboxLimits,
    ScriptArtifact,
    execute,
    run_with_retries,
    script_hash,
)
from .ledger import (
    MODE_FULL_HISTORY,
    MODE_SINGLE_ITERATION,
    ROLE_DA,
    AgentMemory,
    DsDisabled,
    ExecutionFailure,
    ExperimentLedger,
    IterationRecord,
    Leaderboard,
    LedgerWriter,
    append_record,
    update_leaderboard,
    view_for_role,
    write_leaderboard,
)
from .llm import (
    BackendConfig,
    RecordingBackend,
    RemoteBackend,
    ReplayBackend,
    TranscriptRecorder,
)
from .metrics import MLMetrics, primary_metric_value

logger = logging.getLogger(__name__)

PRESETS: dict[str, dict] = {
    "exp1": {"ds_enabled": True, "memory_mode": MODE_FULL_HISTORY, "leaderboard_enabled": False},
    "exp2": {"ds_enabled": False, "memory_mode": MODE_FULL_HISTORY, "leaderboard_enabled": False},
    "exp3": {"ds_enabled": True, "memory_mode": MODE_SINGLE_ITERATION, "leaderboard_enabled": False},
    "exp4": {"ds_enabled": True, "memory_mode": MODE_FULL_HISTORY, "leaderboard_enabled": True},
}

DEFAULT_BUDGET = 20
RECOMMENDATION_METRIC_SLACK = 0.02

TRAINER_LIBRARY_NOTES = """\
trainer_toolkit: deterministic tabular baselines for these experiments.
The engine writes the current task to request.json in the working
directory with keys: label, features, derived (list of [name, recipe]
pairs), formulation, seed, test_fraction, coordinates (pair of coordinate
column names or null). The dataset path comes from ALEKS_DATASET.

Usage from a script:
    from trainer_toolkit import run_request_file
    run_request_file("request.json")
or from a shell: trainer run --request request.json

It trains a regularized linear baseline (regression) or a regularized
logistic baseline (classification) on a seeded deterministic split, writes
predictions.csv into the working directory and prints the sentinel result
block with split=test metrics on stdout.
Recipe grammar: column arithmetic (+ - * / and numeric constants),
lag(column_base, years=k), neighbor_sum(column, radius=r),
threshold(column, value=v).
"""


class ExperimentHalted(AleksError):
    """Agent output stayed unusable beyond the re-prompt budget."""

    def __init__(self, message: str, ledger: ExperimentLedger | None = None) -> None:
        super().__init__(message)
        self.ledger = ledger


class IntegrityError(AleksError):
    """A report references a script artifact that is missing or altered."""


@dataclass(frozen=True)
class ResearchTask:
    question: str
    dataset: TabularDataset
    target_year: int | None = None

    def __post_init__(self) -> None:
        if not self.question.strip():
            raise ConfigError("research question must be non-empty")


def parse_target_year(question: str) -> int | None:
    m = re.search(r"\b(19|20)\d{2}\b", question)
    return int(m.group(0)) if m else None


def make_task(question: str, dataset: TabularDataset) -> ResearchTask:
    return ResearchTask(question=question, dataset=dataset, target_year=parse_target_year(question))


@dataclass(frozen=True)
class ExperimentConfig:
    ds_enabled: bool = True
    memory_mode: str = MODE_FULL_HISTORY
    leaderboard_enabled: bool = False
    budget: int = DEFAULT_BUDGET
    retry_limit: int = DEFAULT_RETRY_LIMIT
    leakage_mode: str = "warn"  # "warn" | "strict"
    workspace: str = "workspace"
    backend: BackendConfig = field(default_factory=lambda: BackendConfig(kind="scripted"))
    sandbox_wall_timeout: float = DEFAULT_WALL_TIMEOUT
    sandbox_memory_cap: int = DEFAULT_MEMORY_CAP
    leaderboard_capacity: int = 5
    reprompts: int = 3
    preview_max_rows: int = 50
    interpreter: tuple[str, ...] | None = None
    templates_dir: str | None = None
    trainer_seed: int = 7
    trainer_test_fraction: float = 0.25
    trainer_coordinates: tuple[str, str] | None = None
    literature: tuple[str, ...] = ()
    record_transcript: bool = True
    replay_transcript: str | None = None

    def __post_init__(self) -> None:
        if self.budget < 1:
            raise ConfigError(f"budget must be positive, got {self.budget}")
        if self.retry_limit < 1:
            raise ConfigError(f"retry_limit must be positive, got {self.retry_limit}")
        if self.memory_mode not in (MODE_FULL_HISTORY, MODE_SINGLE_ITERATION):
            raise ConfigError(f"unknown memory mode {self.memory_mode!r}")
        if self.leakage_mode not in ("warn", "strict"):
            raise ConfigError(f"unknown leakage mode {self.leakage_mode!r}")
        if not 0 < self.trainer_test_fraction < 1:
            raise ConfigError("trainer test_fraction must be in (0, 1)")

    def sandbox_limits(self, workdir: str | Path) -> SandboxLimits:
        return SandboxLimits(
            workdir=str(workdir),
            wall_timeout=self.sandbox_wall_timeout,
            memory_cap=self.sandbox_memory_cap,
        )


@dataclass(frozen=True)
class FinalReport:
    recommended_iteration: int
    raw_features: tuple[str, ...]
    derived_features: tuple[tuple[str, str], ...]
    preprocessing: tuple[str, ...]
    model_type: str
    label_column: str
    justification: str
    analysis_code_path: str
    metrics: MLMetrics
    runtime_total: float  # seconds


_TOP_LEVEL_KEYS = {
    "preset",
    "ds_enabled",
    "memory_mode",
    "leaderboard_enabled",
    "budget",
    "retry_limit",
    "leakage_mode",
    "workspace",
    "leaderboard_capacity",
    "reprompts",
    "preview_max_rows",
    "interpreter",
    "templates_dir",
    "literature",
    "record_transcript",
    "replay_transcript",
}
_BACKEND_KEYS = {
    "kind",
    "endpoint",
    "model_name",
    "timeout",
    "max_retries",
    "temperature",
    "responses_file",
}
_SANDBOX_KEYS = {"wall_timeout", "memory_cap"}
_TRAINER_KEYS = {"seed", "test_fraction", "coordinates"}


def load_config(
    path: str | Path | None = None,
    preset: str | None = None,
    overrides: Mapping | None = None,
) -> ExperimentConfig:
    """Build a config from defaults, a preset, a TOML file and overrides.

    Precedence, lowest first: defaults, preset (named on the command line
    or as ``preset`` inside the file), file values, explicit overrides.
    Unknown keys and invalid enumerations are configuration errors.
    """
    data: dict = {}
    if path is not None:
        try:
            import tomllib  # Python >= 3.11
        except ImportError:
            import tomli as tomllib
        try:
            with open(path, "rb") as fh:
                data = tomllib.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid TOML: {exc}") from exc

    values: dict = {}
    preset_name = data.pop("preset", preset) or preset
    if preset_name is not None:
        if preset_name not in PRESETS:
            raise ConfigError(f"unknown preset {preset_name!r}; have {sorted(PRESETS)}")
        values.update(PRESETS[preset_name])

    backend_data = data.pop("backend", {})
    sandbox_data = data.pop("sandbox", {})
    trainer_data = data.pop("trainer", {})
    unknown = set(data) - _TOP_LEVEL_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    for table, allowed, label in (
        (backend_data, _BACKEND_KEYS, "backend"),
        (sandbox_data, _SANDBOX_KEYS, "sandbox"),
        (trainer_data, _TRAINER_KEYS, "trainer"),
    ):
        bad = set(table) - allowed
        if bad:
            raise ConfigError(f"unknown [{label}] config keys: {sorted(bad)}")

    values.update(data)
    if "interpreter" in values and values["interpreter"] is not None:
        values["interpreter"] = tuple(values["interpreter"])
    if "literature" in values:
        values["literature"] = tuple(values["literature"])
    if backend_data:
        values["backend"] = BackendConfig(**backend_data)
    if sandbox_data:
        values["sandbox_wall_timeout"] = float(
            sandbox_data.get("wall_timeout", DEFAULT_WALL_TIMEOUT)
        )
        values["sandbox_memory_cap"] = int(sandbox_data.get("memory_cap", DEFAULT_MEMORY_CAP))
    if trainer_data:
        if "seed" in trainer_data:
            values["trainer_seed"] = int(trainer_data["seed"])
        if "test_fraction" in trainer_data:
            values["trainer_test_fraction"] = float(trainer_data["test_fraction"])
        if "coordinates" in trainer_data:
            coords = trainer_data["coordinates"]
            values["trainer_coordinates"] = tuple(coords) if coords else None
    if overrides:
        values.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return ExperimentConfig(**values)
    except TypeError as exc:
        raise ConfigError(f"invalid config value: {exc}") from exc


def trainer_request_payload(
    suggestion: ModelingSuggestion, config: ExperimentConfig
) -> dict:
    return {
        "label": suggestion.label_column,
        "features": list(suggestion.raw_features),
        "derived": [[name, recipe] for name, recipe in suggestion.derived_features],
        "formulation": suggestion.formulation,
        "seed": config.trainer_seed,
        "test_fraction": config.trainer_test_fraction,
        "coordinates": list(config.trainer_coordinates) if config.trainer_coordinates else None,
    }


def write_trainer_request(
    workdir: str | Path, suggestion: ModelingSuggestion, config: ExperimentConfig
) -> Path:
    path = Path(workdir) / "request.json"
    path.write_text(json.dumps(trainer_request_payload(suggestion, config), sort_keys=True) + "\n")
    return path


def _error_summary(outcome: ExecutionOutcome) -> str:
    lines = [line for line in outcome.stderr.splitlines() if line.strip()]
    if lines:
        return lines[-1].strip()
    return f"status={outcome.status}"


def build_backend(config: ExperimentConfig, on_event=None):
    kind = config.backend.kind
    if kind == "remote":
        return RemoteBackend(config.backend, on_event=on_event)
    if kind == "replay":
        transcript = config.replay_transcript or str(Path(config.workspace) / "transcript.jsonl")
        return ReplayBackend.from_file(transcript)
    if config.backend.responses_file:
        from .llm import ScriptedBackend

        return ScriptedBackend.from_file(config.backend.responses_file)
    raise ConfigError(
        "a scripted backend needs a responses_file in configuration, "
        "or an instance passed to run_experiment"
    )


def run_experiment(
    config: ExperimentConfig,
    task: ResearchTask,
    backend=None,
    literature: Sequence[tuple[str, str]] | None = None,
    stream=None,
) -> tuple[ExperimentLedger, FinalReport]:
    """Run one full experiment and write the workspace artifacts.

    ``backend`` may be any object satisfying the backend protocol; when
    omitted it is built from the configuration.  ``literature`` holds
    (source id, text) documents for the domain scientist; when omitted the
    configured literature paths are read.
    """
    workspace = Path(config.workspace)
    workspace.mkdir(parents=True, exist_ok=True)
    sandbox_dir = workspace / "sandbox"
    sandbox_dir.mkdir(exist_ok=True)
    limits = config.sandbox_limits(sandbox_dir)

    engine_memory = AgentMemory()
    if backend is None:
        backend = build_backend(config, on_event=lambda msg: engine_memory.append_episodic("backend", msg))
    recorder: TranscriptRecorder | None = None
    if config.record_transcript and config.backend.kind != "replay":
        recorder = TranscriptRecorder(workspace / "transcript.jsonl")
        backend = RecordingBackend(backend, recorder)

    ds_memory = AgentMemory()
    mle_memory = AgentMemory()
    mle_memory.add_semantic("trainer-library", TRAINER_LIBRARY_NOTES)

    knowledge: list[agents.KnowledgeEntry] = []
    if config.ds_enabled:
        if literature is None:
            literature = [
                (Path(p).stem, Path(p).read_text()) for p in config.literature
            ]
        if literature:
            knowledge = ds_ingest_literature(
                literature, backend, ds_memory, template_dir=config.templates_dir
            )

    pv = preview(
        task.dataset,
        auto_interval(task.dataset.n_rows, config.preview_max_rows),
        config.preview_max_rows,
    )

    ledger = ExperimentLedger(task=task)
    board = Leaderboard(capacity=config.leaderboard_capacity) if config.leaderboard_enabled else None
    writer = LedgerWriter(workspace / "ledger.jsonl")
    outcomes: dict[int, ExecutionOutcome] = {}
    da_choice: int | None = None
    stopped = False
    stop_rationale = ""

    # runtime accounting runs from the first analyst call to the report write
    start = time.time()
    try:
        for i in range(1, config.budget + 1):
            view = view_for_role(ledger, ROLE_DA, config.memory_mode)
            try:
                suggestion = da_propose(
                    view,
                    pv,
                    task.question,
                    backend,
                    iteration=i,
                    leaderboard=board,
                    reprompts=config.reprompts,
                    template_dir=config.templates_dir,
                )
            except (agents.UnparseableSuggestionError, agents.PrematureStopError) as exc:
                _write_halt_report(workspace, f"analyst output unusable at iteration {i}: {exc}")
                raise ExperimentHalted(f"iteration {i}: {exc}", ledger) from exc
            if suggestion.stop:
                stopped = True
                da_choice = suggestion.recommended_iteration
                stop_rationale = suggestion.rationale
                break

            leakage_flags: tuple[str, ...] = ()
            rejection: ExecutionFailure | None = None
            target_year = task.target_year
            if target_year is None:
                target_year = year_tag(suggestion.label_column)
            try:
                leak = validate_no_leakage(
                    task.dataset, suggestion, suggestion.label_column, target_year
                )
                leakage_flags = leak.violations
            except UnknownColumnError as exc:
                rejection = ExecutionFailure(status="unknown-column", attempt=0, error_summary=str(exc))
                leakage_flags = (str(exc),)
            if rejection is None and leakage_flags and config.leakage_mode == "strict":
                rejection = ExecutionFailure(
                    status="leakage-rejected",
                    attempt=0,
                    error_summary="; ".join(leakage_flags),
                )

            if rejection is not None:
                result_value: MLResult | ExecutionFailure = rejection
            else:
                write_trainer_request(sandbox_dir, suggestion, config)
                task_spec = MleTaskSpec(
                    suggestion=suggestion,
                    preview=pv,
                    dataset_path=task.dataset.path,
                    sandbox_limits=limits,
                    trainer_library_hint=TRAINER_LIBRARY_NOTES,
                    question=task.question,
                    iteration=i,
                )
                outcome = run_with_retries(
                    task_spec,
                    i,
                    backend,
                    mle_memory,
                    retry_limit=config.retry_limit,
                    workspace=workspace,
                    interpreter=config.interpreter,
                    stream=stream,
                )
                outcomes[i] = outcome
                if outcome.success:
                    assert outcome.result is not None
                    result_value = outcome.result
                else:
                    result_value = ExecutionFailure(
                        status=outcome.status,
                        attempt=outcome.attempt,
                        error_summary=_error_summary(outcome),
                    )

            if config.ds_enabled:
                try:
                    feedback: DomainFeedback | DsDisabled = ds_review(
                        task.question,
                        suggestion,
                        result_value,
                        knowledge,
                        backend,
                        iteration=i,
                        leakage=leakage_flags,
                        reprompts=config.reprompts,
                        template_dir=config.templates_dir,
                    )
                except agents.UnparseableFeedbackError as exc:
                    _write_halt_report(workspace, f"scientist output unusable at iteration {i}: {exc}")
                    raise ExperimentHalted(f"iteration {i}: {exc}", ledger) from exc
            else:
                feedback = DsDisabled()

            record = IterationRecord(
                index=i,
                suggestion=suggestion,
                result=result_value,
                feedback=feedback,
                leakage_flags=leakage_flags,
            )
            ledger = append_record(ledger, record)
            writer.append(record)
            if board is not None:
                board = update_leaderboard(board, record)
                ledger = ledger.with_leaderboard(board)
                write_leaderboard(board, workspace / "leaderboard.json")
    finally:
        writer.close()
        if recorder is not None:
            recorder.close()

    try:
        recommended = select_recommended_model(ledger, da_choice)
    except AleksError as exc:
        _write_halt_report(workspace, f"no recommendable iteration: {exc}")
        raise ExperimentHalted(str(exc), ledger) from exc

    if stopped and stop_rationale:
        justification = stop_rationale
    elif stopped:
        justification = "analyst stopped: performance judged satisfactory"
    else:
        justification = "budget exhausted; best balanced iteration selected by the engine"
    report = generate_report(
        ledger,
        recommended,
        workspace,
        artifacts={i: o.artifact for i, o in outcomes.items() if o.artifact is not None},
        justification=justification,
        runtime_total=time.time() - start,
    )
    return ledger, report


def _successful_records(ledger: ExperimentLedger) -> list[IterationRecord]:
    out = []
    for record in ledger.records:
        if isinstance(record.result, MLResult) and record.result.metrics.split == "test":
            out.append(record)
    return out


def select_recommended_model(ledger: ExperimentLedger, da_final_choice: int | None = None) -> int:
    """The analyst's explicit pick when valid, else the balanced fallback.

    Fallback: among successful test-split records within 0.02 of the best
    primary metric, prefer the fewest features, then the lowest iteration
    index.
    """
    successes = _successful_records(ledger)
    if not successes:
        raise AleksError("no successful iteration to recommend")
    valid_indexes = {r.index for r in successes}
    if da_final_choice is not None and da_final_choice in valid_indexes:
        return da_final_choice
    if da_final_choice is not None:
        logger.warning(
            "analyst recommended iteration %s, which is not a successful record; using fallback",
            da_final_choice,
        )
    best = max(primary_metric_value(r.result.metrics) for r in successes)  # type: ignore[union-attr]
    candidates = [
        r
        for r in successes
        if primary_metric_value(r.result.metrics) >= best - RECOMMENDATION_METRIC_SLACK  # type: ignore[union-attr]
    ]
    candidates.sort(key=lambda r: (len(r.suggestion.feature_names()), r.index))
    return candidates[0].index


def _find_script(workspace: Path, iteration: int) -> Path | None:
    matches = sorted((workspace / "scripts").glob(f"iter{iteration:02d}_attempt*"))
    return matches[-1] if matches else None


def generate_report(
    ledger: ExperimentLedger,
    recommended: int,
    workspace: str | Path,
    artifacts: Mapping[int, ScriptArtifact] | None = None,
    justification: str = "",
    runtime_total: float = 0.0,
) -> FinalReport:
    """Assemble, integrity-check and persist the final report."""
    workspace = Path(workspace)
    if not 1 <= recommended <= len(ledger.records):
        raise AleksError(f"recommended iteration {recommended} not in ledger")
    record = ledger.records[recommended - 1]
    if not isinstance(record.result, MLResult):
        raise AleksError(f"recommended iteration {recommended} did not succeed")

    artifact = (artifacts or {}).get(recommended)
    if artifact is not None:
        code_path = Path(artifact.path)
    else:
        found = _find_script(workspace, recommended)
        if found is None:
            raise IntegrityError(f"no persisted script for iteration {recommended}")
        code_path = found
    if not code_path.exists():
        raise IntegrityError(f"script artifact missing: {code_path}")
    if artifact is not None and script_hash(code_path.read_text()) != artifact.content_hash:
        raise IntegrityError(f"script artifact altered: {code_path}")

    suggestion = record.suggestion
    report = FinalReport(
        recommended_iteration=recommended,
        raw_features=suggestion.raw_features,
        derived_features=suggestion.derived_features,
        preprocessing=suggestion.preprocessing_notes,
        model_type=record.result.formulation,
        label_column=suggestion.label_column,
        justification=justification,
        analysis_code_path=str(code_path),
        metrics=record.result.metrics,
        runtime_total=runtime_total,
    )
    write_report(report, workspace)
    return report


def report_to_dict(report: FinalReport) -> dict:
    from .ledger import _metrics_to_dict

    return {
        "recommended_iteration": report.recommended_iteration,
        "raw_features": list(report.raw_features),
        "derived_features": [[n, r] for n, r in report.derived_features],
        "preprocessing": list(report.preprocessing),
        "model_type": report.model_type,
        "label_column": report.label_column,
        "justification": report.justification,
        "analysis_code_path": report.analysis_code_path,
        "metrics": _metrics_to_dict(report.metrics),
        "runtime_total": report.runtime_total,
    }


def report_from_dict(d: dict) -> FinalReport:
    from .ledger import _metrics_from_dict

    return FinalReport(
        recommended_iteration=d["recommended_iteration"],
        raw_features=tuple(d["raw_features"]),
        derived_features=tuple((n, r) for n, r in d["derived_features"]),
        preprocessing=tuple(d["preprocessing"]),
        model_type=d["model_type"],
        label_column=d["label_column"],
        justification=d["justification"],
        analysis_code_path=d["analysis_code_path"],
        metrics=_metrics_from_dict(d["metrics"]),
        runtime_total=d["runtime_total"],
    )


def write_report(report: FinalReport, workspace: str | Path) -> None:
    workspace = Path(workspace)
    (workspace / "report.json").write_text(
        json.dumps(report_to_dict(report), indent=2, sort_keys=True) + "\n"
    )
    (workspace / "report.txt").write_text(render_report_text(report))


def render_report_text(report: FinalReport) -> str:
    lines = [
        "Experiment report",
        "=================",
        f"Recommended iteration: {report.recommended_iteration}",
        f"Model type: {report.model_type}",
        f"Label column: {report.label_column}",
        f"Raw features: {', '.join(report.raw_features) or '(none)'}",
    ]
    for name, recipe in report.derived_features:
        lines.append(f"Derived feature: {name} = {recipe}")
    for note in report.preprocessing:
        lines.append(f"Preprocessing: {note}")
    lines.append(f"Metrics: {agents.format_result(MLResult(report.model_type, report.metrics, report.raw_features))}")
    lines.append(f"Justification: {report.justification}")
    lines.append(f"Analysis code: {report.analysis_code_path}")
    lines.append(f"Total runtime: {report.runtime_total / 60:.1f} min")
    return "\n".join(lines) + "\n"


def load_report(workspace: str | Path) -> FinalReport:
    path = Path(workspace) / "report.json"
    if not path.exists():
        raise AleksError(f"no report.json in {workspace}")
    return report_from_dict(json.loads(path.read_text()))


def _write_halt_report(workspace: Path, diagnostic: str) -> None:
    (workspace / "report.txt").write_text(
        "Experiment halted\n=================\n" + diagnostic + "\n"
    )


def cross_year_validate(
    report: FinalReport,
    dataset: TabularDataset,
    year_delta: int,
    config: ExperimentConfig,
) -> MLMetrics:
    """Re-run the recommended analysis with features shifted by whole years.

    Only the execute path runs: the persisted script is re-executed against
    a freshly written request carrying the shifted feature list; no agent
    is consulted.  ``year_delta=0`` therefore reproduces the recommended
    metrics exactly (same split seed).
    """
    suggestion = ModelingSuggestion(
        formulation=report.model_type,
        raw_features=report.raw_features,
        derived_features=report.derived_features,
        preprocessing_notes=report.preprocessing,
        rationale=report.justification,
        stop=False,
        label_column=report.label_column,
    )
    shifted = shift_features_by_year(dataset, suggestion, year_delta)

    script = Path(report.analysis_code_path)
    if not script.exists():
        raise IntegrityError(f"script artifact missing: {script}")
    workdir = Path(config.workspace) / f"cross_year_{year_delta:+d}"
    workdir.mkdir(parents=True, exist_ok=True)
    write_trainer_request(workdir, shifted, config)

    artifact = ScriptArtifact(
        path=str(script),
        iteration=report.recommended_iteration,
        attempt=1,
        created_at=script.stat().st_mtime,
        content_hash=script_hash(script.read_text()),
    )
    outcome = execute(
        artifact,
        config.sandbox_limits(workdir),
        interpreter=config.interpreter,
        extra_env={ENV_DATASET: dataset.path},
    )
    if not outcome.success or outcome.result is None:
        raise AleksError(
            f"cross-year execution failed ({outcome.status}): {_error_summary(outcome)}"
        )
    return outcome.result.metrics


def run_repeat(
    config: ExperimentConfig,
    task: ResearchTask,
    n: int,
    backend_factory=None,
    literature: Sequence[tuple[str, str]] | None = None,
    parallel: bool = False,
) -> list[FinalReport | None]:
    """Run ``n`` independent experiments in ``run_01..run_NN`` workspaces.

    Returns one report per child (None where the child failed) and writes
    the aggregated ``frequency.csv`` over the final selections of the
    children that completed.
    """
    from .metrics import feature_frequency, write_frequency_csv

    if n < 1:
        raise ConfigError(f"repeat count must be positive, got {n}")
    base = Path(config.workspace)
    base.mkdir(parents=True, exist_ok=True)

    def one(k: int) -> FinalReport | None:
        child_config = replace(config, workspace=str(base / f"run_{k:02d}"))
        backend = backend_factory(k) if backend_factory is not None else None
        try:
            _, report = run_experiment(child_config, task, backend=backend, literature=literature)
            return report
        except AleksError as exc:
            logger.error("repeat run %d failed: %s", k, exc)
            return None

    if parallel and n > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=min(n, 4)) as pool:
            reports = list(pool.map(one, range(1, n + 1)))
    else:
        reports = [one(k) for k in range(1, n + 1)]

    selections = [
        (r.raw_features, tuple(name for name, _ in r.derived_features))
        for r in reports
        if r is not None
    ]
    if selections:
        table = feature_frequency(selections)
        write_frequency_csv(table, base / "frequency.csv")
    return reports
