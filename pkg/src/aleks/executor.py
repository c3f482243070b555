"""Sandboxed execution of generated analysis scripts.

Scripts are persisted under ``scripts/`` with iteration, attempt and
epoch-second in the filename (never overwriting), then run in a child
process whose stdout/stderr are streamed live and captured in full.  A
script reports its metrics by printing a result block::

    ALEKS_RESULT_BEGIN
    {"formulation": ..., "metrics": {..., "split": "test"}, "features_used": [...], "notes": ...}
    ALEKS_RESULT_END

Only the last block in stdout counts.  The ``split`` field is mandatory;
downstream code refuses to rank train-split metrics.

Resource limits: the wall timeout is always enforced (the child is
killed); the memory cap uses RLIMIT_AS where the platform provides it and
otherwise degrades to the ``ALEKS_MEM_CAP`` environment variable, which is
exported to the child either way.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import subprocess
import sys
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING, Callable, Sequence

from .errors import AleksError
from .metrics import ClassificationMetrics, MLMetrics, RegressionMetrics

if TYPE_CHECKING:
    from .agents import MleTaskSpec
    from .ledger import AgentMemory

logger = logging.getLogger(__name__)

RESULT_BEGIN = "ALEKS_RESULT_BEGIN"
RESULT_END = "ALEKS_RESULT_END"

ENV_DATASET = "ALEKS_DATASET"
ENV_WORKDIR = "ALEKS_WORKDIR"
ENV_MEM_CAP = "ALEKS_MEM_CAP"

DEFAULT_WALL_TIMEOUT = 600.0
DEFAULT_MEMORY_CAP = 4 * 2**30
DEFAULT_RETRY_LIMIT = 5

STATUS_SUCCESS = "success"
STATUS_SCRIPT_ERROR = "script-error"
STATUS_TIMEOUT = "timeout"
STATUS_MEMORY = "memory-exceeded"
STATUS_PROTOCOL = "protocol-error"

StreamCallback = Callable[[str, bytes], None]


class ExecutorError(AleksError):
    pass


class ProtocolError(ExecutorError):
    """Script output violates the result-block protocol."""


class InterpreterNotFoundError(ExecutorError):
    pass


@dataclass(frozen=True)
class SandboxLimits:
    workdir: str
    wall_timeout: float = DEFAULT_WALL_TIMEOUT
    memory_cap: int = DEFAULT_MEMORY_CAP

    def __post_init__(self) -> None:
        if self.wall_timeout <= 0:
            raise ExecutorError(f"wall_timeout must be positive, got {self.wall_timeout}")


@dataclass(frozen=True)
class ScriptArtifact:
    path: str
    iteration: int
    attempt: int
    created_at: float
    content_hash: str


@dataclass(frozen=True)
class MLResult:
    formulation: str  # "classification" | "regression"
    metrics: MLMetrics
    features_used: tuple[str, ...]
    notes: str = ""

    def __post_init__(self) -> None:
        wanted = ClassificationMetrics if self.formulation == "classification" else RegressionMetrics
        if not isinstance(self.metrics, wanted):
            raise ProtocolError(
                f"metrics variant {type(self.metrics).__name__} does not match formulation {self.formulation!r}"
            )


@dataclass(frozen=True)
class ExecutionOutcome:
    status: str
    exit_code: int | None
    stdout: str
    stderr: str
    result: MLResult | None
    attempt: int
    wall_time: float
    audit_violations: tuple[str, ...] = ()
    artifact: ScriptArtifact | None = None

    @property
    def success(self) -> bool:
        return self.status == STATUS_SUCCESS


def script_hash(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()


def persist_script(text: str, iteration: int, attempt: int, workdir: str | Path) -> ScriptArtifact:
    """Write the script under ``scripts/`` without ever overwriting a file.

    The artifact path is absolute: the script is later executed from a
    different working directory and recorded in the final report.
    """
    scripts_dir = Path(workdir).resolve() / "scripts"
    try:
        scripts_dir.mkdir(parents=True, exist_ok=True)
        created_at = time.time()
        stem = f"iter{iteration:02d}_attempt{attempt:02d}_{int(created_at)}"
        path = scripts_dir / f"{stem}.py"
        suffix = ord("b")
        while path.exists():
            path = scripts_dir / f"{stem}_{chr(suffix)}.py"
            suffix += 1
        path.write_text(text)
    except OSError as exc:
        raise ExecutorError(f"cannot persist script: {exc}") from exc
    return ScriptArtifact(
        path=str(path),
        iteration=iteration,
        attempt=attempt,
        created_at=created_at,
        content_hash=script_hash(text),
    )


def parse_result_block(stdout: str) -> MLResult:
    """Parse the last sentinel-delimited result block out of captured stdout."""
    lines = stdout.splitlines()
    begin = None
    for i, line in enumerate(lines):
        if line.strip() == RESULT_BEGIN:
            begin = i
    if begin is None:
        raise ProtocolError(f"no {RESULT_BEGIN} line in script output")
    end = None
    for i in range(begin + 1, len(lines)):
        if lines[i].strip() == RESULT_END:
            end = i
            break
    if end is None:
        raise ProtocolError(f"{RESULT_BEGIN} without a following {RESULT_END}")
    body = "\n".join(lines[begin + 1 : end])
    try:
        payload = json.loads(body)
    except ValueError as exc:
        raise ProtocolError(f"result block is not valid JSON: {exc}") from exc
    if not isinstance(payload, dict):
        raise ProtocolError("result block must be a JSON object")
    return _result_from_payload(payload)


def _result_from_payload(payload: dict) -> MLResult:
    try:
        formulation = payload["formulation"]
        metrics = payload["metrics"]
        features = payload["features_used"]
    except KeyError as exc:
        raise ProtocolError(f"result block missing key {exc}") from exc
    if formulation not in ("classification", "regression"):
        raise ProtocolError(f"unknown formulation {formulation!r}")
    if not isinstance(metrics, dict) or "split" not in metrics:
        raise ProtocolError("metrics must be an object with a 'split' field")
    try:
        if formulation == "classification":
            parsed: MLMetrics = ClassificationMetrics(
                accuracy=float(metrics["accuracy"]),
                weighted_f1=float(metrics["weighted_f1"]),
                confusion=tuple(tuple(int(v) for v in row) for row in metrics["confusion"]),
                split=str(metrics["split"]),
            )
        else:
            parsed = RegressionMetrics(
                r_square=float(metrics["r_square"]),
                rmse=float(metrics["rmse"]),
                split=str(metrics["split"]),
            )
        return MLResult(
            formulation=formulation,
            metrics=parsed,
            features_used=tuple(str(f) for f in features),
            notes=str(payload.get("notes", "")),
        )
    except ProtocolError:
        raise
    except (KeyError, TypeError, ValueError, AleksError) as exc:
        raise ProtocolError(f"malformed result block: {exc}") from exc


def _pump(pipe, chunks: list[bytes], stream: StreamCallback | None, name: str) -> None:
    while True:
        chunk = pipe.read1(65536)
        if not chunk:
            return
        chunks.append(chunk)
        if stream is not None:
            stream(name, chunk)


def _memory_limiter(cap: int):
    try:
        import resource
    except ImportError:  # non-POSIX: cap degrades to the env var
        return None

    def set_limit() -> None:
        try:
            resource.setrlimit(resource.RLIMIT_AS, (cap, cap))
        except (ValueError, OSError):
            pass

    return set_limit


def _snapshot(root: Path) -> set[Path]:
    if not root.exists():
        return set()
    return {p for p in root.rglob("*") if p.is_file()}


def execute(
    artifact: ScriptArtifact,
    limits: SandboxLimits,
    interpreter: Sequence[str] | None = None,
    extra_env: dict[str, str] | None = None,
    stream: StreamCallback | None = None,
    attempt: int | None = None,
    audit_root: str | Path | None = None,
) -> ExecutionOutcome:
    """Run a persisted script in a child process under the sandbox limits.

    The child runs with the sandbox workdir as cwd and sees
    ``ALEKS_WORKDIR``/``ALEKS_MEM_CAP`` (plus whatever ``extra_env`` adds,
    normally ``ALEKS_DATASET``).  After the run, files newly created inside
    ``audit_root`` (default: the workdir's parent) but outside the workdir
    are reported as audit violations.
    """
    script_path = Path(artifact.path).resolve()
    if not script_path.exists():
        raise ExecutorError(f"script artifact missing: {script_path}")
    workdir = Path(limits.workdir).resolve()
    if not workdir.is_dir():
        raise ExecutorError(f"sandbox workdir missing: {workdir}")
    command = list(interpreter) if interpreter else [sys.executable]
    command.append(str(script_path))

    env = dict(os.environ)
    env[ENV_WORKDIR] = str(workdir)
    env[ENV_MEM_CAP] = str(limits.memory_cap)
    if extra_env:
        env.update(extra_env)

    root = Path(audit_root) if audit_root is not None else workdir.parent
    before = _snapshot(root)

    start = time.perf_counter()
    try:
        proc = subprocess.Popen(
            command,
            cwd=str(workdir),
            env=env,
            stdout=subprocess.PIPE,
            stderr=subprocess.PIPE,
            preexec_fn=_memory_limiter(limits.memory_cap),
        )
    except FileNotFoundError as exc:
        raise InterpreterNotFoundError(f"interpreter not found: {command[0]}") from exc
    except OSError as exc:
        raise ExecutorError(f"cannot spawn script process: {exc}") from exc

    out_chunks: list[bytes] = []
    err_chunks: list[bytes] = []
    readers = [
        threading.Thread(target=_pump, args=(proc.stdout, out_chunks, stream, "stdout"), daemon=True),
        threading.Thread(target=_pump, args=(proc.stderr, err_chunks, stream, "stderr"), daemon=True),
    ]
    for t in readers:
        t.start()

    timed_out = False
    try:
        exit_code: int | None = proc.wait(timeout=limits.wall_timeout)
    except subprocess.TimeoutExpired:
        timed_out = True
        proc.kill()
        proc.wait()
        exit_code = None
    for t in readers:
        t.join()
    wall_time = time.perf_counter() - start

    stdout = b"".join(out_chunks).decode(errors="replace")
    stderr = b"".join(err_chunks).decode(errors="replace")
    after = _snapshot(root)
    violations = tuple(
        sorted(str(p) for p in after - before if not p.is_relative_to(workdir))
    )
    attempt_no = attempt if attempt is not None else artifact.attempt

    if timed_out:
        status, result = STATUS_TIMEOUT, None
    elif exit_code != 0:
        if "MemoryError" in stderr:
            status = STATUS_MEMORY
        else:
            status = STATUS_SCRIPT_ERROR
        result = None
    else:
        try:
            result = parse_result_block(stdout)
            status = STATUS_SUCCESS
        except ProtocolError as exc:
            logger.warning("iteration %d attempt %d: %s", artifact.iteration, attempt_no, exc)
            result = None
            status = STATUS_PROTOCOL
            stderr = stderr + (("\n" if stderr else "") + str(exc))

    return ExecutionOutcome(
        status=status,
        exit_code=exit_code,
        stdout=stdout,
        stderr=stderr,
        result=result,
        attempt=attempt_no,
        wall_time=wall_time,
        audit_violations=violations,
        artifact=artifact,
    )


def run_with_retries(
    task: "MleTaskSpec",
    iteration: int,
    backend,
    memory: "AgentMemory",
    retry_limit: int = DEFAULT_RETRY_LIMIT,
    workspace: str | Path | None = None,
    interpreter: Sequence[str] | None = None,
    stream: StreamCallback | None = None,
    generate=None,
) -> ExecutionOutcome:
    """Generate, persist and execute a script, retrying on failure.

    Each failed attempt appends its stderr (or a protocol/generation
    diagnosis) to the engineer's episodic memory so the next generation
    prompt can see it.  Returns the first success, or the final failure
    with ``attempt = retry_limit``.
    """
    if retry_limit < 1:
        raise ExecutorError(f"retry_limit must be >= 1, got {retry_limit}")
    if task.iteration != iteration:
        raise ExecutorError(
            f"task spec is for iteration {task.iteration}, loop says {iteration}"
        )
    if generate is None:
        from .agents import mle_generate_script

        generate = mle_generate_script
    ws = Path(workspace) if workspace is not None else Path(task.sandbox_limits.workdir).parent
    extra_env = {ENV_DATASET: task.dataset_path}

    outcome: ExecutionOutcome | None = None
    for attempt in range(1, retry_limit + 1):
        try:
            script = generate(task, memory, backend, attempt)
        except AleksError as exc:
            outcome = ExecutionOutcome(
                status=STATUS_PROTOCOL,
                exit_code=None,
                stdout="",
                stderr=f"script generation failed: {exc}",
                result=None,
                attempt=attempt,
                wall_time=0.0,
            )
            memory.append_episodic("executor", outcome.stderr)
            continue
        artifact = persist_script(script, iteration, attempt, ws)
        outcome = execute(
            artifact,
            task.sandbox_limits,
            interpreter=interpreter,
            extra_env=extra_env,
            stream=stream,
            attempt=attempt,
        )
        if outcome.success:
            return outcome
        diagnosis = outcome.stderr.strip() or f"script failed with status {outcome.status}"
        memory.append_episodic("executor", f"attempt {attempt} {outcome.status}: {diagnosis}")
    assert outcome is not None
    return outcome
