"""Model-backend abstraction: a deterministic scripted double for tests and
simulation, and an HTTP client for OpenAI-compatible completions servers.

Context is transmitted as full text behind an append-only frontier, keeping
the artifact tokenizer-agnostic; real servers re-tokenize internally. Each
session is single-operator: one in-flight operation at a time.
"""

from __future__ import annotations

import itertools
import json
import logging
import os
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import httpx

from .spans import count_tokens, split_after_tokens

logger = logging.getLogger(__name__)

SMALL = "small"
LARGE = "large"


class BackendError(RuntimeError):
    """Transport or protocol failure; retriable unless stated otherwise."""

    def __init__(self, message: str, retriable: bool = True) -> None:
        super().__init__(message)
        self.retriable = retriable


class ContextDivergenceError(BackendError):
    """A prefill chunk did not extend the committed context: orchestrator
    sequencing bug."""

    def __init__(self, message: str) -> None:
        super().__init__(message, retriable=False)


class SessionBusyError(BackendError):
    """Prefill/decode interleaving violated the single-operator contract."""

    def __init__(self, message: str) -> None:
        super().__init__(message, retriable=False)


class ProbeUnsupportedError(BackendError):
    """Backend cannot do side-effect-free greedy lookahead; the orchestrator
    degrades to a single-token decode probe."""

    def __init__(self, message: str) -> None:
        super().__init__(message, retriable=False)


class ResumableStreamError(BackendError):
    """Mid-stream transport failure; carries the text received so far."""

    def __init__(self, message: str, partial_text: str) -> None:
        super().__init__(message, retriable=True)
        self.partial_text = partial_text


class AmbiguousScriptError(BackendError):
    """More than one scripted trigger matched; the script is malformed."""

    def __init__(self, message: str) -> None:
        super().__init__(message, retriable=False)


@dataclass(frozen=True)
class CompletionRequest:
    max_tokens: int = 4096
    temperature: float = 0.0
    stop_sequences: tuple[str, ...] = ()
    stream: bool = True
    context: str | None = None  # when set, must match the committed context

    def __post_init__(self) -> None:
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be >= 1")
        if any(not s for s in self.stop_sequences):
            raise ValueError("stop sequences must be non-empty strings")


@dataclass(frozen=True)
class StreamChunk:
    text: str
    tokens: int
    seconds: float  # simulated (scripted) or wall-clock (HTTP) duration


@dataclass(frozen=True)
class PrefillAck:
    committed: int  # characters committed after this prefill
    seconds: float


_session_counter = itertools.count(1)


class BackendSession:
    """One model's committed context plus prefill/decode/probe operations."""

    def __init__(self, role: str) -> None:
        self.session_id = f"{role}-{next(_session_counter)}"
        self.role = role
        self._context = ""
        self._busy = False

    @property
    def context(self) -> str:
        return self._context

    @property
    def context_committed(self) -> int:
        return len(self._context)

    def _check_idle(self, op: str) -> None:
        if self._busy:
            raise SessionBusyError(f"{op} while a decode stream is open on {self.session_id}")

    def prefill(self, text_chunk: str, at: int | None = None) -> PrefillAck:
        """Append-only context extension. ``at`` is the expected frontier; a
        mismatch means the orchestrator lost sequence and raises."""
        self._check_idle("prefill")
        if at is not None and at != len(self._context):
            raise ContextDivergenceError(
                f"prefill at offset {at} but committed frontier is {len(self._context)}"
            )
        self._context += text_chunk
        return PrefillAck(committed=len(self._context), seconds=self._prefill_seconds(text_chunk))

    def _prefill_seconds(self, text_chunk: str) -> float:
        return 0.0

    def decode_stream(self, request: CompletionRequest) -> Iterator[StreamChunk]:
        raise NotImplementedError

    def greedy_probe(self, max_probe_tokens: int) -> str:
        raise NotImplementedError

    def _check_request_context(self, request: CompletionRequest) -> None:
        if request.context is not None and request.context != self._context:
            raise ContextDivergenceError(
                "request context does not match the committed session context"
            )


@dataclass(frozen=True)
class ScriptEntry:
    """One scripted emission: fires on a decode turn or when the context
    contains a marker. Exactly one trigger per entry."""

    emission: str
    turn: int | None = None
    context_contains: str | None = None
    rate: float = 100.0  # simulated tokens/second

    def __post_init__(self) -> None:
        if (self.turn is None) == (self.context_contains is None):
            raise ValueError("exactly one of turn/context_contains must be set")
        if self.turn is not None and self.turn < 1:
            raise ValueError("turn triggers are 1-based")
        if self.rate <= 0:
            raise ValueError("emission rate must be positive")


def load_script(source) -> list[ScriptEntry]:
    """Load scripted behavior from a JSON file path, JSON string, or list of dicts."""
    if isinstance(source, (str, Path)) and Path(source).exists():
        data = json.loads(Path(source).read_text())
    elif isinstance(source, str):
        data = json.loads(source)
    else:
        data = source
    if not isinstance(data, list):
        raise ValueError("scripted behavior must be a list of entries")
    return [
        ScriptEntry(
            emission=entry["emission"],
            turn=entry.get("turn"),
            context_contains=entry.get("context_contains"),
            rate=entry.get("rate", 100.0),
        )
        for entry in data
    ]


@dataclass
class ScriptedBackend:
    """Deterministic test double for both models.

    Emissions stream in chunks of ``chunk_tokens`` whitespace words, or of
    ``chunk_chars`` raw characters when set (character chunks may split words
    and tag literals, like real token streams do).
    """

    entries: list[ScriptEntry]
    chunk_tokens: int = 4
    chunk_chars: int | None = None
    prefill_rate: float = 30000.0
    probe_supported: bool = True

    def new_session(self, role: str = SMALL) -> "ScriptedSession":
        return ScriptedSession(self, role)


class ScriptedSession(BackendSession):
    def __init__(self, backend: ScriptedBackend, role: str) -> None:
        super().__init__(role)
        self._backend = backend
        self._turn = 0
        self._consumed: set[int] = set()
        self.clock = 0.0  # simulated seconds
        self._last_decode: tuple[int, int | None, float] | None = None

    def _prefill_seconds(self, text_chunk: str) -> float:
        seconds = count_tokens(text_chunk) / self._backend.prefill_rate
        self.clock += seconds
        return seconds

    def _matching_entry(self, turn: int) -> int | None:
        matches = [
            i
            for i, e in enumerate(self._backend.entries)
            if i not in self._consumed
            and (
                (e.turn is not None and e.turn == turn)
                or (e.context_contains is not None and e.context_contains in self._context)
            )
        ]
        if len(matches) > 1:
            raise AmbiguousScriptError(
                f"{len(matches)} scripted triggers match at turn {turn} on {self.session_id}"
            )
        return matches[0] if matches else None

    def decode_stream(self, request: CompletionRequest) -> Iterator[StreamChunk]:
        self._check_idle("decode")
        self._check_request_context(request)
        self._turn += 1
        index = self._matching_entry(self._turn)
        self._last_decode = (self._turn, index, self.clock)
        if index is None:
            return iter(())  # end of sequence
        self._consumed.add(index)
        entry = self._backend.entries[index]
        return self._emit(entry, request)

    def _emit(self, entry: ScriptEntry, request: CompletionRequest) -> Iterator[StreamChunk]:
        self._busy = True
        try:
            emitted = ""
            budget = request.max_tokens
            pos = 0
            text = entry.emission
            while pos < len(text) and budget > 0:
                if self._backend.chunk_chars is not None:
                    head = text[pos : pos + self._backend.chunk_chars]
                else:
                    take = min(self._backend.chunk_tokens, budget)
                    head, _ = split_after_tokens(text[pos:], take)
                if not head:
                    break
                tokens = count_tokens(head)
                seconds = tokens / entry.rate
                self.clock += seconds
                emitted += head
                pos += len(head)
                budget -= tokens
                yield StreamChunk(text=head, tokens=tokens, seconds=seconds)
                if any(stop in emitted for stop in request.stop_sequences):
                    break
        finally:
            self._busy = False

    def greedy_probe(self, max_probe_tokens: int) -> str:
        """Side-effect-free peek at the next decode's leading tokens."""
        if not self._backend.probe_supported:
            raise ProbeUnsupportedError(f"backend of {self.session_id} does not support probes")
        if max_probe_tokens < 1:
            raise ValueError("max_probe_tokens must be >= 1")
        self._check_idle("probe")
        index = self._matching_entry(self._turn + 1)
        if index is None:
            return ""
        head, _ = split_after_tokens(self._backend.entries[index].emission, max_probe_tokens)
        return head

    def rollback_last_decode(self) -> None:
        """Undo the most recent decode call (turn, consumption, clock): the
        scripted equivalent of the probe fallback's rollback-by-re-prefill."""
        if self._last_decode is None:
            raise BackendError("no decode to roll back", retriable=False)
        turn, index, clock = self._last_decode
        self._turn = turn - 1
        if index is not None:
            self._consumed.discard(index)
        self.clock = clock
        self._last_decode = None


@dataclass
class HTTPBackend:
    """Client for an OpenAI-compatible completions endpoint (SSE streaming)."""

    base_url: str
    model: str
    path: str = "/v1/completions"
    auth_env: str | None = None  # env var NAME holding the bearer token
    timeout: float = 30.0
    probe_supported: bool = True

    def new_session(self, role: str = LARGE) -> "HTTPSession":
        return HTTPSession(self, role)

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        if self.auth_env:
            token = os.environ.get(self.auth_env)
            if token is None:
                raise BackendError(
                    f"auth env var {self.auth_env!r} is not set", retriable=False
                )
            headers["Authorization"] = f"Bearer {token}"
        return headers


class HTTPSession(BackendSession):
    def __init__(self, backend: HTTPBackend, role: str) -> None:
        super().__init__(role)
        self._backend = backend
        self._client = httpx.Client(
            base_url=backend.base_url, timeout=backend.timeout, headers=backend._headers()
        )

    def close(self) -> None:
        self._client.close()

    def _payload(self, request: CompletionRequest, max_tokens: int, stream: bool) -> dict:
        payload = {
            "model": self._backend.model,
            "prompt": self._context,
            "max_tokens": max_tokens,
            "temperature": request.temperature,
            "stream": stream,
        }
        if request.stop_sequences:
            payload["stop"] = list(request.stop_sequences)
        return payload

    def decode_stream(self, request: CompletionRequest) -> Iterator[StreamChunk]:
        self._check_idle("decode")
        self._check_request_context(request)
        if not request.stream:
            text, seconds = self._complete_once(request, request.max_tokens)
            return iter([StreamChunk(text=text, tokens=count_tokens(text), seconds=seconds)])
        return self._stream(request)

    def _complete_once(self, request: CompletionRequest, max_tokens: int) -> tuple[str, float]:
        started = time.monotonic()
        try:
            response = self._client.post(
                self._backend.path, json=self._payload(request, max_tokens, stream=False)
            )
            response.raise_for_status()
        except httpx.HTTPError as exc:
            raise BackendError(f"completion request failed: {exc}") from exc
        data = response.json()
        return data["choices"][0]["text"], time.monotonic() - started

    def _stream(self, request: CompletionRequest) -> Iterator[StreamChunk]:
        self._busy = True
        received = ""
        last = time.monotonic()
        try:
            with self._client.stream(
                "POST",
                self._backend.path,
                json=self._payload(request, request.max_tokens, stream=True),
            ) as response:
                response.raise_for_status()
                for line in response.iter_lines():
                    if not line.startswith("data:"):
                        continue
                    data = line[len("data:") :].strip()
                    if data == "[DONE]":
                        break
                    delta = json.loads(data)["choices"][0].get("text", "")
                    if not delta:
                        continue
                    now = time.monotonic()
                    received += delta
                    # One SSE event approximates one token on real servers.
                    yield StreamChunk(
                        text=delta, tokens=max(1, count_tokens(delta)), seconds=now - last
                    )
                    last = now
        except httpx.HTTPError as exc:
            raise ResumableStreamError(f"stream failed: {exc}", partial_text=received) from exc
        finally:
            self._busy = False

    def greedy_probe(self, max_probe_tokens: int) -> str:
        """Greedy lookahead via a non-streamed, non-committed completion."""
        if not self._backend.probe_supported:
            raise ProbeUnsupportedError(f"backend of {self.session_id} does not support probes")
        if max_probe_tokens < 1:
            raise ValueError("max_probe_tokens must be >= 1")
        self._check_idle("probe")
        probe_request = CompletionRequest(max_tokens=max_probe_tokens, temperature=0.0)
        text, _ = self._complete_once(probe_request, max_probe_tokens)
        return text
