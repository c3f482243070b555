"""The three agent behaviors: domain scientist, data analyst, ML engineer.

Each behavior is prompt construction plus structured-output parsing over a
pluggable backend.  Agents must answer with exactly one fenced block
labelled ``aleks`` holding a flat ``key: value`` document; the parser is
total — any completion either yields a valid value or a typed error,
never a half-built object.  Malformed or invariant-violating replies are
re-prompted up to a fixed budget before the operation gives up.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING, Sequence

from .dataset import DatasetPreview, format_preview
from .errors import AleksError, BackendError
from .executor import RESULT_BEGIN, RESULT_END, MLResult, SandboxLimits
from .llm import Backend, Completion, PromptEnvelope, complete
from .metrics import ClassificationMetrics

if TYPE_CHECKING:
    from .ledger import AgentMemory, Leaderboard, MemoryView

logger = logging.getLogger(__name__)

ROLE_DS = "domain-scientist"
ROLE_DA = "data-analyst"
ROLE_MLE = "ml-engineer"

DEFAULT_REPROMPTS = 3
EXPLORATION_ITERATIONS = 3  # early iterations carry the formulation-exploration nudge

FORMULATIONS = ("classification", "regression")
VERDICTS = ("accept", "revise")

_BLOCK_RE = re.compile(r"```aleks[ \t]*\n(.*?)```", re.DOTALL)
_CODE_RE = re.compile(r"```(\w*)[ \t]*\n(.*?)```", re.DOTALL)
_KV_RE = re.compile(r"^([A-Za-z_][A-Za-z0-9_]*)\s*:\s*(.*)$")

_TEMPLATE_DIR = Path(__file__).parent / "templates"


class ParseError(AleksError):
    pass


class NoBlockError(ParseError):
    """Completion contains no fenced ``aleks`` block."""


class MalformedDocumentError(ParseError):
    pass


class InvalidEnumerationError(ParseError):
    pass


class SuggestionInvariantError(AleksError):
    pass


class PrematureStopError(AleksError):
    """The analyst tried to stop before any iteration completed."""


class UnparseableSuggestionError(AleksError):
    pass


class UnparseableFeedbackError(AleksError):
    pass


class GenerationFormatError(AleksError):
    """ML-engineer completion carries no fenced code block."""


@dataclass(frozen=True)
class ModelingSuggestion:
    formulation: str  # "classification" | "regression"
    raw_features: tuple[str, ...]
    derived_features: tuple[tuple[str, str], ...]  # (name, recipe)
    preprocessing_notes: tuple[str, ...]
    rationale: str
    stop: bool
    label_column: str
    recommended_iteration: int | None = None

    def feature_names(self) -> tuple[str, ...]:
        return self.raw_features + tuple(name for name, _ in self.derived_features)


@dataclass(frozen=True)
class DomainFeedback:
    verdict: str  # "accept" | "revise"
    critique: str
    improvements: tuple[str, ...]
    parsimony_note: str | None = None
    error_cost_note: str | None = None


@dataclass(frozen=True)
class KnowledgeEntry:
    source_id: str
    variables: tuple[str, ...]
    causal_notes: tuple[str, ...]
    summary: str


@dataclass(frozen=True)
class MleTaskSpec:
    suggestion: ModelingSuggestion
    preview: DatasetPreview
    dataset_path: str
    sandbox_limits: SandboxLimits
    trainer_library_hint: str
    question: str = ""
    iteration: int = 1


def validate_suggestion(suggestion: ModelingSuggestion) -> None:
    """Enforce the suggestion invariants; raises SuggestionInvariantError."""
    derived_names = {name for name, _ in suggestion.derived_features}
    if not suggestion.stop and not (suggestion.raw_features or derived_names):
        raise SuggestionInvariantError("a non-stop suggestion needs at least one feature")
    overlap = derived_names & set(suggestion.raw_features)
    if overlap:
        raise SuggestionInvariantError(f"names both raw and derived: {sorted(overlap)}")
    if suggestion.label_column and suggestion.label_column in suggestion.raw_features:
        raise SuggestionInvariantError(
            f"label column {suggestion.label_column!r} listed as a raw feature"
        )


def validate_feedback(feedback: DomainFeedback) -> None:
    if feedback.verdict == "revise" and not feedback.improvements:
        raise SuggestionInvariantError("a revise verdict needs at least one improvement")


# --- structured-output parsing ---------------------------------------------


def _extract_block(text: str) -> str:
    blocks = _BLOCK_RE.findall(text)
    if not blocks:
        raise NoBlockError("no fenced `aleks` block in completion")
    if len(blocks) > 1:
        logger.warning("completion has %d aleks blocks; using the first", len(blocks))
    return blocks[0]


def _parse_kv(body: str) -> list[tuple[str, str]]:
    pairs = []
    for raw_line in body.splitlines():
        line = raw_line.strip()
        if not line:
            continue
        m = _KV_RE.match(line)
        if not m:
            raise MalformedDocumentError(f"not a `key: value` line: {line!r}")
        pairs.append((m.group(1).lower(), m.group(2).strip()))
    return pairs


def _parse_bool(value: str) -> bool:
    lowered = value.lower()
    if lowered in ("true", "false"):
        return lowered == "true"
    raise MalformedDocumentError(f"expected true or false, got {value!r}")


def _split_list(value: str) -> tuple[str, ...]:
    return tuple(part.strip() for part in value.split(",") if part.strip())


def _parse_suggestion(pairs: list[tuple[str, str]]) -> ModelingSuggestion:
    fields: dict[str, str] = {}
    derives: list[tuple[str, str]] = []
    preprocess: list[str] = []
    for key, value in pairs:
        if key == "derive":
            if "=" not in value:
                raise MalformedDocumentError(f"derive line needs `name = recipe`: {value!r}")
            name, recipe = value.split("=", 1)
            if not name.strip() or not recipe.strip():
                raise MalformedDocumentError(f"derive line needs `name = recipe`: {value!r}")
            derives.append((name.strip(), recipe.strip()))
        elif key == "preprocess":
            preprocess.append(value)
        elif key in ("formulation", "label", "features", "rationale", "stop", "recommend"):
            fields[key] = value
        else:
            logger.debug("ignoring unknown suggestion key %r", key)

    if "formulation" not in fields:
        raise MalformedDocumentError("missing `formulation`")
    formulation = fields["formulation"].lower()
    if formulation not in FORMULATIONS:
        raise InvalidEnumerationError(f"formulation must be one of {FORMULATIONS}, got {formulation!r}")
    stop = _parse_bool(fields["stop"]) if "stop" in fields else False
    label = fields.get("label", "")
    if not label and not stop:
        raise MalformedDocumentError("missing `label`")
    recommend: int | None = None
    if "recommend" in fields and fields["recommend"]:
        try:
            recommend = int(fields["recommend"])
        except ValueError:
            raise MalformedDocumentError(f"recommend must be an integer, got {fields['recommend']!r}") from None
    return ModelingSuggestion(
        formulation=formulation,
        raw_features=_split_list(fields.get("features", "")),
        derived_features=tuple(derives),
        preprocessing_notes=tuple(preprocess),
        rationale=fields.get("rationale", ""),
        stop=stop,
        label_column=label,
        recommended_iteration=recommend,
    )


def _parse_feedback(pairs: list[tuple[str, str]]) -> DomainFeedback:
    fields: dict[str, str] = {}
    improvements: list[str] = []
    for key, value in pairs:
        if key == "improvement":
            improvements.append(value)
        elif key in ("verdict", "critique", "parsimony", "error_cost"):
            fields[key] = value
        else:
            logger.debug("ignoring unknown feedback key %r", key)
    if "verdict" not in fields:
        raise MalformedDocumentError("missing `verdict`")
    verdict = fields["verdict"].lower()
    if verdict not in VERDICTS:
        raise InvalidEnumerationError(f"verdict must be one of {VERDICTS}, got {verdict!r}")
    return DomainFeedback(
        verdict=verdict,
        critique=fields.get("critique", ""),
        improvements=tuple(improvements),
        parsimony_note=fields.get("parsimony"),
        error_cost_note=fields.get("error_cost"),
    )


def parse_structured_block(text: str, kind: str):
    """Parse the first fenced ``aleks`` block as a suggestion or feedback."""
    pairs = _parse_kv(_extract_block(text))
    if kind == "suggestion":
        return _parse_suggestion(pairs)
    if kind == "feedback":
        return _parse_feedback(pairs)
    raise ValueError(f"unknown block kind {kind!r}")


def _parse_knowledge(source_id: str, text: str) -> KnowledgeEntry:
    """Lenient: without an aleks block the whole completion is the summary."""
    try:
        pairs = _parse_kv(_extract_block(text))
    except ParseError:
        return KnowledgeEntry(source_id=source_id, variables=(), causal_notes=(), summary=text.strip())
    variables = [v for k, v in pairs if k == "variable"]
    causal = [v for k, v in pairs if k == "causal"]
    summary = next((v for k, v in pairs if k == "summary"), "")
    if not summary:
        summary = text.strip()
    return KnowledgeEntry(
        source_id=source_id,
        variables=tuple(variables),
        causal_notes=tuple(causal),
        summary=summary,
    )


def extract_code_block(text: str) -> str:
    """Body of the first fenced code block that is not an ``aleks`` block."""
    python_blocks = []
    other_blocks = []
    for lang, body in _CODE_RE.findall(text):
        if lang == "aleks":
            continue
        (python_blocks if lang == "python" else other_blocks).append(body)
    if python_blocks:
        return python_blocks[0]
    if other_blocks:
        return other_blocks[0]
    raise GenerationFormatError("no fenced code block in completion")


# --- prompt formatting ------------------------------------------------------


def load_template(name: str, template_dir: str | Path | None = None) -> str:
    directory = Path(template_dir) if template_dir is not None else _TEMPLATE_DIR
    return (directory / f"{name}.txt").read_text()


def render_template(text: str, values: dict[str, str]) -> str:
    for key, value in values.items():
        text = text.replace("{{" + key + "}}", value)
    leftover = re.search(r"\{\{([a-z_]+)\}\}", text)
    if leftover:
        raise AleksError(f"unresolved template placeholder {leftover.group(1)!r}")
    return text


def format_suggestion(s: ModelingSuggestion) -> str:
    lines = [
        f"formulation: {s.formulation}",
        f"label: {s.label_column}",
        f"features: {', '.join(s.raw_features) if s.raw_features else '(none)'}",
    ]
    for name, recipe in s.derived_features:
        lines.append(f"derive: {name} = {recipe}")
    for note in s.preprocessing_notes:
        lines.append(f"preprocess: {note}")
    lines.append(f"rationale: {s.rationale}")
    if s.stop:
        lines.append("stop: true")
    return "\n".join(lines)


def format_result(result) -> str:
    if isinstance(result, MLResult):
        m = result.metrics
        if isinstance(m, ClassificationMetrics):
            body = (
                f"classification accuracy={m.accuracy:.4f} weighted_f1={m.weighted_f1:.4f} "
                f"confusion={[list(r) for r in m.confusion]} (split={m.split})"
            )
        else:
            body = f"regression r_square={m.r_square:.4f} rmse={m.rmse:.4f} (split={m.split})"
        if result.notes:
            body += f"\nnotes: {result.notes}"
        return body
    return f"execution failed ({result.status}, attempt {result.attempt}): {result.error_summary}"


def format_feedback(feedback) -> str:
    from .ledger import DsDisabled  # local to avoid an import cycle

    if isinstance(feedback, DsDisabled):
        return "(domain scientist disabled)"
    lines = [f"verdict: {feedback.verdict}", f"critique: {feedback.critique}"]
    for item in feedback.improvements:
        lines.append(f"improvement: {item}")
    if feedback.parsimony_note:
        lines.append(f"parsimony: {feedback.parsimony_note}")
    if feedback.error_cost_note:
        lines.append(f"error_cost: {feedback.error_cost_note}")
    return "\n".join(lines)


def format_record(record) -> str:
    """Prompt rendering of one ledger record (timestamps deliberately omitted)."""
    parts = [
        f"iteration {record.index}",
        "suggestion:",
        _indent(format_suggestion(record.suggestion)),
        "result:",
        _indent(format_result(record.result)),
        "feedback:",
        _indent(format_feedback(record.feedback)),
    ]
    if record.leakage_flags:
        parts.append("leakage warnings:")
        parts.extend(f"  - {flag}" for flag in record.leakage_flags)
    return "\n".join(parts)


def format_knowledge(entry: KnowledgeEntry) -> str:
    lines = [f"source: {entry.source_id}"]
    for v in entry.variables:
        lines.append(f"variable: {v}")
    for c in entry.causal_notes:
        lines.append(f"causal: {c}")
    lines.append(f"summary: {entry.summary}")
    return "\n".join(lines)


def format_leaderboard(board: "Leaderboard") -> str:
    if not board.entries:
        return "(empty)"
    lines = []
    for e in board.entries:
        lines.append(
            f"iteration {e.index}: {e.formulation} metric={e.metric_value:.4f} — {e.rationale}"
        )
    return "\n".join(lines)


def _indent(text: str, prefix: str = "  ") -> str:
    return "\n".join(prefix + line for line in text.splitlines())


# --- agent operations -------------------------------------------------------


def _completion_with_reprompts(
    backend: Backend,
    make_envelope,
    parse,
    reprompts: int,
    failure_error,
):
    """Call, parse, and re-prompt on malformed output up to the budget."""
    last_error: Exception | None = None
    for attempt in range(1, reprompts + 2):
        envelope = make_envelope(attempt, last_error)
        completion = complete(backend, envelope)
        try:
            return parse(completion)
        except (ParseError, SuggestionInvariantError) as exc:
            logger.warning("%s attempt %d rejected: %s", envelope.role, attempt, exc)
            last_error = exc
    raise failure_error(f"unusable output after {reprompts} re-prompts: {last_error}")


def ds_ingest_literature(
    documents: Sequence[tuple[str, str]],
    backend: Backend,
    memory: "AgentMemory",
    template_dir: str | Path | None = None,
) -> list[KnowledgeEntry]:
    """Summarize each document into the scientist's semantic memory.

    One summarization completion per document; a backend failure skips
    that document with an episodic log line instead of aborting the run.
    """
    if not documents:
        raise AleksError("ds_ingest_literature needs at least one document")
    system = load_template("domain_scientist_ingest", template_dir)
    entries: list[KnowledgeEntry] = []
    seen: set[str] = set()
    for doc_number, (source_id, text) in enumerate(documents, start=1):
        if source_id in seen:
            raise AleksError(f"duplicate literature source id {source_id!r}")
        seen.add(source_id)
        envelope = PromptEnvelope(
            role=ROLE_DS,
            system_text=system,
            context_blocks=(("document " + source_id, text),),
            user_text=f"Summarize document {source_id} in one fenced aleks block.",
            iteration=0,
            attempt=doc_number,
        )
        try:
            completion = complete(backend, envelope)
        except BackendError as exc:
            memory.append_episodic("ds-ingest", f"skipped {source_id}: {exc}")
            logger.warning("literature ingestion skipped %s: %s", source_id, exc)
            continue
        entry = _parse_knowledge(source_id, completion.text)
        entries.append(entry)
        memory.add_semantic(source_id, format_knowledge(entry))
    return entries


def da_propose(
    view: "MemoryView",
    preview: DatasetPreview,
    question: str,
    backend: Backend,
    iteration: int,
    leaderboard: "Leaderboard | None" = None,
    reprompts: int = DEFAULT_REPROMPTS,
    template_dir: str | Path | None = None,
) -> ModelingSuggestion:
    """Ask the analyst for the next modeling suggestion (or a stop decision)."""
    from .ledger import MODE_CURRENT_SCOPE

    if view.mode == MODE_CURRENT_SCOPE:
        raise AleksError("the analyst view must carry history, not current scope")
    exploration = ""
    if iteration <= EXPLORATION_ITERATIONS:
        exploration = (
            "This is an early iteration: explore the problem formulation options. "
            "Consider both classification and regression before settling on one."
        )
    system = render_template(
        load_template("data_analyst", template_dir), {"exploration_note": exploration}
    )
    blocks: list[tuple[str, str]] = [
        ("task", question),
        ("dataset preview", format_preview(preview)),
    ]
    for record in view.visible_records:
        blocks.append((f"record {record.index}", format_record(record)))
    if leaderboard is not None:
        blocks.append(("leaderboard", format_leaderboard(leaderboard)))

    def make_envelope(attempt: int, last_error: Exception | None) -> PromptEnvelope:
        user = f"Propose the modeling suggestion for iteration {iteration}."
        if last_error is not None:
            user += (
                f"\nYour previous reply was rejected: {last_error}. "
                "Reply again with exactly one fenced aleks block."
            )
        return PromptEnvelope(
            role=ROLE_DA,
            system_text=system,
            context_blocks=tuple(blocks),
            user_text=user,
            iteration=iteration,
            attempt=attempt,
        )

    def parse(completion: Completion) -> ModelingSuggestion:
        suggestion = parse_structured_block(completion.text, "suggestion")
        validate_suggestion(suggestion)
        return suggestion

    suggestion = _completion_with_reprompts(
        backend, make_envelope, parse, reprompts, UnparseableSuggestionError
    )
    if suggestion.stop and iteration <= 1:
        raise PrematureStopError("stop requested before any iteration completed")
    return suggestion


def ds_review(
    question: str,
    suggestion: ModelingSuggestion,
    result,
    semantic: Sequence[KnowledgeEntry],
    backend: Backend,
    iteration: int,
    leakage: Sequence[str] = (),
    reprompts: int = DEFAULT_REPROMPTS,
    template_dir: str | Path | None = None,
) -> DomainFeedback:
    """Ask the domain scientist to critique the latest suggestion and result."""
    system = load_template("domain_scientist", template_dir)
    blocks: list[tuple[str, str]] = [("task", question)]
    for entry in semantic:
        blocks.append((f"knowledge {entry.source_id}", format_knowledge(entry)))
    blocks.append(("suggestion", format_suggestion(suggestion)))
    blocks.append(("result", format_result(result)))
    if leakage:
        blocks.append(("leakage warnings", "\n".join(f"- {flag}" for flag in leakage)))

    def make_envelope(attempt: int, last_error: Exception | None) -> PromptEnvelope:
        user = f"Review iteration {iteration} and answer with one fenced aleks block."
        if last_error is not None:
            user += (
                f"\nYour previous reply was rejected: {last_error}. "
                "Reply again with exactly one fenced aleks block."
            )
        return PromptEnvelope(
            role=ROLE_DS,
            system_text=system,
            context_blocks=tuple(blocks),
            user_text=user,
            iteration=iteration,
            attempt=attempt,
        )

    def parse(completion: Completion) -> DomainFeedback:
        feedback = parse_structured_block(completion.text, "feedback")
        validate_feedback(feedback)
        return feedback

    return _completion_with_reprompts(
        backend, make_envelope, parse, reprompts, UnparseableFeedbackError
    )


def mle_generate_script(
    task: MleTaskSpec,
    memory: "AgentMemory",
    backend: Backend,
    attempt: int,
    template_dir: str | Path | None = None,
) -> str:
    """Ask the engineer for an executable analysis script.

    From the second attempt on, the most recent episodic error messages are
    embedded so the engineer can debug its previous script.
    """
    limits = task.sandbox_limits
    system = render_template(
        load_template("ml_engineer", template_dir),
        {
            "memory_cap_bytes": str(limits.memory_cap),
            "timeout_seconds": f"{limits.wall_timeout:g}",
            "result_begin": RESULT_BEGIN,
            "result_end": RESULT_END,
        },
    )
    blocks: list[tuple[str, str]] = [
        ("task", task.question or "(no question recorded)"),
        ("modeling suggestion", format_suggestion(task.suggestion)),
        ("dataset preview", format_preview(task.preview)),
        ("dataset path", task.dataset_path),
    ]
    if task.trainer_library_hint:
        blocks.append(("trainer library", task.trainer_library_hint))
    for source_id, text in memory.semantic:
        blocks.append((f"library notes {source_id}", text))
    if attempt > 1 and memory.episodic:
        recent = memory.episodic[-3:]
        blocks.append(
            ("previous errors", "\n\n".join(e.text for e in recent))
        )

    envelope = PromptEnvelope(
        role=ROLE_MLE,
        system_text=system,
        context_blocks=tuple(blocks),
        user_text=(
            f"Write the complete Python analysis script for iteration {task.iteration}, "
            f"attempt {attempt}. Reply with exactly one fenced python code block."
        ),
        iteration=task.iteration,
        attempt=attempt,
    )
    completion = complete(backend, envelope)
    return extract_code_block(completion.text)
