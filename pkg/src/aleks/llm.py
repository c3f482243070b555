"""Pluggable language-model backends and deterministic prompt assembly.

A prompt is carried as a ``PromptEnvelope``: system text, an ordered list
of labelled context blocks, and the user request.  Rendering is a pure
function of the envelope; when the rendered form exceeds the context
budget, history blocks are dropped oldest-first and a marker line takes
their place.

Three backend kinds exist: ``remote`` (generic HTTPS chat-completion
endpoint with retry/backoff), ``scripted`` (exact lookup by role,
iteration and attempt; the determinism harness), and ``replay`` (reruns a
recorded transcript).  Any backend can be wrapped by a
``TranscriptRecorder`` to persist the (prompt, completion) stream.
"""

from __future__ import annotations

import hashlib
import json
import os
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping, Protocol, Sequence

from .errors import AleksError, BackendError, ConfigError


DEFAULT_CONTEXT_BUDGET = 60_000  # characters
HISTORY_LABEL_PREFIX = "record "
API_KEY_ENV = "ALEKS_API_KEY"


class BudgetError(AleksError):
    """The non-droppable prompt parts alone exceed the context budget."""


class ScriptedMissError(BackendError):
    """Strict scripted backend has no response for the requested key."""


class TranscriptExhaustedError(BackendError):
    """Replay backend ran out of matching transcript entries."""


class TransportError(BackendError):
    """Remote call failed after exhausting its retries."""


@dataclass(frozen=True)
class PromptEnvelope:
    role: str
    system_text: str
    context_blocks: tuple[tuple[str, str], ...]
    user_text: str
    iteration: int
    attempt: int = 1


@dataclass(frozen=True)
class Completion:
    text: str
    backend_id: str
    latency: float
    token_estimate: int


@dataclass(frozen=True)
class BackendConfig:
    kind: str  # "remote" | "scripted" | "replay"
    endpoint: str = ""
    model_name: str = ""
    timeout: float = 120.0
    max_retries: int = 3
    temperature: float = 0.7
    responses_file: str = ""  # scripted only: canned completions as JSONL

    def __post_init__(self) -> None:
        if self.kind not in ("remote", "scripted", "replay"):
            raise ConfigError(f"unknown backend kind {self.kind!r}")
        if self.kind == "remote" and (not self.endpoint or not self.model_name):
            raise ConfigError("remote backend requires endpoint and model_name")


def _render_parts(
    envelope: PromptEnvelope,
    budget: int,
    droppable_prefix: str = HISTORY_LABEL_PREFIX,
) -> tuple[str, str]:
    """(system, user) parts fitting the budget; history dropped oldest-first."""

    def user_part(blocks: Sequence[tuple[str, str]]) -> str:
        parts = [f"## {label}\n{text}" for label, text in blocks]
        parts.append(envelope.user_text)
        return "\n\n".join(parts)

    def fits(blocks: Sequence[tuple[str, str]]) -> bool:
        return len(envelope.system_text) + 2 + len(user_part(blocks)) <= budget

    blocks = list(envelope.context_blocks)
    if fits(blocks):
        return envelope.system_text, user_part(blocks)

    droppable = [i for i, (label, _) in enumerate(blocks) if label.startswith(droppable_prefix)]
    for n_dropped in range(1, len(droppable) + 1):
        dropped = set(droppable[:n_dropped])
        kept = [b for j, b in enumerate(blocks) if j not in dropped]
        marker = (
            "omitted history",
            f"[{n_dropped} earlier record(s) omitted to fit the context budget]",
        )
        # dropped indices all sit at or after droppable[0], so the marker
        # lands exactly where the oldest dropped block was
        kept.insert(droppable[0], marker)
        if fits(kept):
            return envelope.system_text, user_part(kept)
    raise BudgetError(
        f"prompt exceeds the {budget}-character budget even with all history dropped"
    )


def render_prompt(envelope: PromptEnvelope, budget: int = DEFAULT_CONTEXT_BUDGET) -> str:
    """Deterministic full rendering: system, labelled blocks in order, user."""
    system, user = _render_parts(envelope, budget)
    return f"{system}\n\n{user}"


def estimate_tokens(text: str) -> int:
    # 4 characters per token is close enough for budget accounting
    return max(0, len(text) // 4)


class Backend(Protocol):
    backend_id: str

    def generate(self, envelope: PromptEnvelope, prompt: str) -> str: ...


def complete(
    backend: Backend,
    envelope: PromptEnvelope,
    budget: int = DEFAULT_CONTEXT_BUDGET,
) -> Completion:
    """Render the envelope, call the backend once, wrap the result."""
    prompt = render_prompt(envelope, budget)
    start = time.perf_counter()
    text = backend.generate(envelope, prompt)
    latency = time.perf_counter() - start
    return Completion(
        text=text,
        backend_id=backend.backend_id,
        latency=latency,
        token_estimate=estimate_tokens(text),
    )


@dataclass(frozen=True)
class CallRecord:
    role: str
    iteration: int
    attempt: int
    prompt: str


class ScriptedBackend:
    """Canned completions keyed by (role, iteration, attempt).

    In strict mode a missing key raises; otherwise the declared default
    response is returned.  Every call is appended to ``call_log`` so tests
    can assert on call counts and rendered prompts.
    """

    backend_id = "scripted"

    def __init__(
        self,
        responses: Mapping[tuple[str, int, int], str],
        strict: bool = True,
        default_response: str = "",
    ) -> None:
        self._responses = dict(responses)
        self.strict = strict
        self.default_response = default_response
        self.call_log: list[CallRecord] = []

    @classmethod
    def from_file(cls, path: str | Path, strict: bool = True) -> "ScriptedBackend":
        """Load responses from JSONL: {role, iteration, attempt, completion}."""
        responses = {}
        for entry in load_transcript(path):
            key = (entry["role"], int(entry["iteration"]), int(entry["attempt"]))
            responses[key] = entry["completion"]
        return cls(responses, strict=strict)

    def generate(self, envelope: PromptEnvelope, prompt: str) -> str:
        key = (envelope.role, envelope.iteration, envelope.attempt)
        self.call_log.append(
            CallRecord(role=envelope.role, iteration=envelope.iteration, attempt=envelope.attempt, prompt=prompt)
        )
        if key in self._responses:
            return self._responses[key]
        if self.strict:
            raise ScriptedMissError(f"no scripted response for {key}")
        return self.default_response


class RemoteBackend:
    """One HTTPS chat-completion round trip with retry and backoff.

    The request body is a standard chat-completion JSON object with a
    system and a user message; the bearer token is read from the
    ``ALEKS_API_KEY`` environment variable.  Transient failures (connection
    errors, timeouts, 429 and 5xx responses) are retried up to
    ``max_retries`` times with exponential backoff; every retry is
    reported through ``on_event``.
    """

    def __init__(
        self,
        config: BackendConfig,
        session=None,
        sleep: Callable[[float], None] = time.sleep,
        on_event: Callable[[str], None] | None = None,
        backoff_base: float = 1.0,
    ) -> None:
        if config.kind != "remote":
            raise ConfigError(f"RemoteBackend requires kind=remote, got {config.kind!r}")
        import requests

        self.config = config
        self.backend_id = config.model_name
        self._session = session if session is not None else requests.Session()
        self._sleep = sleep
        self._on_event = on_event or (lambda msg: None)
        self._backoff_base = backoff_base

    def generate(self, envelope: PromptEnvelope, prompt: str) -> str:
        import requests

        system, user = _render_parts(envelope, DEFAULT_CONTEXT_BUDGET)
        body = {
            "model": self.config.model_name,
            "messages": [
                {"role": "system", "content": system},
                {"role": "user", "content": user},
            ],
            "temperature": self.config.temperature,
        }
        headers = {}
        api_key = os.environ.get(API_KEY_ENV)
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"

        last_error: Exception | None = None
        for attempt in range(self.config.max_retries + 1):
            if attempt > 0:
                delay = self._backoff_base * 2 ** (attempt - 1)
                self._on_event(
                    f"backend retry {attempt}/{self.config.max_retries} after {last_error}; waiting {delay:g}s"
                )
                self._sleep(delay)
            try:
                response = self._session.post(
                    self.config.endpoint,
                    json=body,
                    headers=headers,
                    timeout=self.config.timeout,
                )
            except requests.RequestException as exc:
                last_error = exc
                continue
            if response.status_code == 429 or response.status_code >= 500:
                last_error = BackendError(f"HTTP {response.status_code}")
                continue
            if response.status_code != 200:
                raise BackendError(f"chat completion failed: HTTP {response.status_code}")
            try:
                text = response.json()["choices"][0]["message"]["content"]
            except (KeyError, IndexError, ValueError) as exc:
                raise BackendError(f"malformed chat-completion response: {exc}") from exc
            if not text:
                raise BackendError("empty completion text")
            return text
        raise TransportError(
            f"chat completion failed after {self.config.max_retries} retries: {last_error}"
        )


class ReplayBackend:
    """Replays completions from a recorded transcript, matching by role."""

    backend_id = "replay"

    def __init__(self, entries: Sequence[Mapping]) -> None:
        self._entries = list(entries)
        self._consumed = [False] * len(self._entries)

    @classmethod
    def from_file(cls, path: str | Path) -> "ReplayBackend":
        return cls(load_transcript(path))

    def generate(self, envelope: PromptEnvelope, prompt: str) -> str:
        for i, entry in enumerate(self._entries):
            if not self._consumed[i] and entry["role"] == envelope.role:
                self._consumed[i] = True
                return entry["completion"]
        raise TranscriptExhaustedError(
            f"no remaining transcript entry for role {envelope.role!r}"
        )


class TranscriptRecorder:
    """Persists every (envelope, completion) pair, one JSON object per line."""

    def __init__(self, path: str | Path) -> None:
        self.path = Path(path)
        self._fh = open(self.path, "w")

    def record(self, envelope: PromptEnvelope, prompt: str, completion: str) -> None:
        entry = {
            "role": envelope.role,
            "iteration": envelope.iteration,
            "attempt": envelope.attempt,
            "prompt_hash": hashlib.sha256(prompt.encode()).hexdigest(),
            "completion": completion,
        }
        self._fh.write(json.dumps(entry, sort_keys=True) + "\n")
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()

    def __enter__(self) -> "TranscriptRecorder":
        return self

    def __exit__(self, *exc_info) -> None:
        self.close()


class RecordingBackend:
    """Wraps any backend, mirroring its completions into a recorder."""

    def __init__(self, inner: Backend, recorder: TranscriptRecorder) -> None:
        self._inner = inner
        self._recorder = recorder
        self.backend_id = inner.backend_id

    def generate(self, envelope: PromptEnvelope, prompt: str) -> str:
        text = self._inner.generate(envelope, prompt)
        self._recorder.record(envelope, prompt, text)
        return text


def load_transcript(path: str | Path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]
