"""Drive one cooperative generation end to end.

The small model decodes and controls; the large model takes over inside
offload regions. Streaming prefills keep the idle large model current while
the small model decodes; controlling prefills plus greedy probes let the
small model take control back. Correctness is defined by these sequential
semantics; the overlapped mode only moves streaming prefills onto a worker
thread and must produce identical traces.
"""

from __future__ import annotations

import enum
import logging
import queue
import threading
from dataclasses import dataclass, field, replace

import numpy as np

from .backends import BackendError, BackendSession, CompletionRequest, ProbeUnsupportedError
from .protocol import (
    ActionKind,
    Phase,
    ProtocolError,
    ProtocolEvent,
    ProtocolState,
    spend_budget,
    step,
)
from .spans import (
    GenerationTrace,
    OffloadSpan,
    SpanOrigin,
    count_tokens,
    split_after_tokens,
    strip_tags,
)
from .tags import ControlTags, StreamScanner, TagKind, scan_literals

logger = logging.getLogger(__name__)

LEARNED_TAGS = "learned-tags"
RANDOM_OFFLOAD = "random-offload"
NEVER_OFFLOAD = "never-offload"

SEQUENTIAL = "sequential"
OVERLAPPED = "overlapped"

_ANSWER_STOP = "answer_close"


@dataclass(frozen=True)
class PolicyConfig:
    kind: str = LEARNED_TAGS
    p: float = 0.0
    seed: int | None = None
    mean_span_tokens: int = 200

    def __post_init__(self) -> None:
        if self.kind not in (LEARNED_TAGS, RANDOM_OFFLOAD, NEVER_OFFLOAD):
            raise ValueError(f"unknown policy kind {self.kind!r}")
        if not 0.0 <= self.p <= 1.0:
            raise ValueError("offload probability p must lie in [0, 1]")
        if self.mean_span_tokens < 1:
            raise ValueError("mean_span_tokens must be >= 1")
        if self.kind == RANDOM_OFFLOAD and self.seed is None:
            raise ValueError("random-offload requires a seed (runs must be replayable)")


@dataclass(frozen=True)
class RunConfig:
    chunk_size: int = 64
    max_offload_tokens_per_span: int = 1024
    max_total_tokens: int = 4096
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    probe_tokens: int = 1
    stop_on_answer_close: bool = True
    execution: str = SEQUENTIAL
    tags: ControlTags = field(default_factory=ControlTags)

    def __post_init__(self) -> None:
        if self.chunk_size < 1:
            raise ValueError("chunk_size must be >= 1")
        if self.max_offload_tokens_per_span < 1:
            raise ValueError("max_offload_tokens_per_span must be >= 1")
        if self.max_total_tokens < 1:
            raise ValueError("max_total_tokens must be >= 1")
        if self.probe_tokens < 1:
            raise ValueError("probe_tokens must be >= 1")
        if self.execution not in (SEQUENTIAL, OVERLAPPED):
            raise ValueError(f"execution must be sequential or overlapped, got {self.execution!r}")


@dataclass(frozen=True)
class HandoffRecord:
    offset: int  # stripped-text character offset of the switch point
    direction: str  # "to_large" | "to_small"
    reason: str  # "open-tag" | "close-tag" | "forced-budget" | "planned" | "stream-end"
    overshoot_tokens: int = 0  # large tokens decoded past the probe-ideal stop

    def to_dict(self) -> dict:
        return {
            "offset": self.offset,
            "direction": self.direction,
            "reason": self.reason,
            "overshoot_tokens": self.overshoot_tokens,
        }


@dataclass(frozen=True)
class PhaseTiming:
    phase: str  # "small" | "large"
    tokens: int
    seconds: float

    def to_dict(self) -> dict:
        return {"phase": self.phase, "tokens": self.tokens, "seconds": self.seconds}


@dataclass(frozen=True)
class GenerationResult:
    trace: GenerationTrace
    timings: tuple[PhaseTiming, ...] = ()
    handoff_log: tuple[HandoffRecord, ...] = ()
    error: str | None = None

    def to_dict(self) -> dict:
        return {
            "text": self.trace.text,
            "spans": [
                {
                    "start": s.start,
                    "end": s.end,
                    "origin": s.origin.value,
                    "token_estimate": s.token_estimate,
                }
                for s in self.trace.spans
            ],
            "handoff_count": self.trace.handoff_count,
            "small_tokens": self.trace.small_tokens,
            "large_tokens": self.trace.large_tokens,
            "timings": [t.to_dict() for t in self.timings],
            "handoff_log": [h.to_dict() for h in self.handoff_log],
            "error": self.error,
        }


def result_from_dict(data: dict) -> GenerationResult:
    trace = GenerationTrace(
        text=data["text"],
        spans=tuple(
            OffloadSpan(
                start=s["start"],
                end=s["end"],
                origin=SpanOrigin(s["origin"]),
                token_estimate=s["token_estimate"],
            )
            for s in data["spans"]
        ),
        handoff_count=data["handoff_count"],
        small_tokens=data["small_tokens"],
        large_tokens=data["large_tokens"],
    )
    return GenerationResult(
        trace=trace,
        timings=tuple(PhaseTiming(**t) for t in data.get("timings", [])),
        handoff_log=tuple(HandoffRecord(**h) for h in data.get("handoff_log", [])),
        error=data.get("error"),
    )


class OrchestrationError(RuntimeError):
    """Protocol-level failure; carries the handoff log for diagnosis."""

    def __init__(self, message: str, handoff_log: tuple[HandoffRecord, ...] = ()) -> None:
        super().__init__(message)
        self.handoff_log = handoff_log


def random_offload_policy(
    total_token_budget: int, p: float, seed: int, mean_span_tokens: int = 200
) -> list[OffloadSpan]:
    """Plan content-blind offload spans over a token timeline.

    Spans and gaps are exponential with means m and m*(1-p)/p, starting from
    the stationary regime (in-span with probability p), so the expected
    offloaded fraction is exactly p for any finite budget. Offsets here are
    token positions, not characters. Deterministic given the seed.
    """
    if not 0.0 <= p <= 1.0:
        raise ValueError("p must lie in [0, 1]")
    if mean_span_tokens < 1:
        raise ValueError("mean_span_tokens must be >= 1")
    if total_token_budget <= 0 or p == 0.0:
        return []
    if p == 1.0:
        return [OffloadSpan(0, total_token_budget, SpanOrigin.RANDOM_POLICY, total_token_budget)]
    rng = np.random.default_rng(seed)
    gap_mean = mean_span_tokens * (1.0 - p) / p
    spans: list[OffloadSpan] = []
    pos = 0.0
    in_span = rng.random() < p
    while pos < total_token_budget:
        if in_span:
            length = rng.exponential(mean_span_tokens)
            start = int(round(pos))
            end = min(total_token_budget, int(round(pos + length)))
            if spans and start < spans[-1].end:
                start = spans[-1].end  # rounding collapsed the gap; keep disjoint
            if end > start:
                spans.append(OffloadSpan(start, end, SpanOrigin.RANDOM_POLICY, end - start))
            pos += length
        else:
            pos += rng.exponential(gap_mean)
        in_span = not in_span
    return spans


class ControlDecision(enum.Enum):
    CONTINUE_LARGE = "continue_large"
    TAKE_BACK_CONTROL = "take_back_control"


def _fallback_probe(session: BackendSession) -> str:
    """Single-token probe via decode plus rollback, for backends lacking
    native probe support."""
    stream = session.decode_stream(CompletionRequest(max_tokens=1))
    text = ""
    try:
        for chunk in stream:
            text = chunk.text
            break
    finally:
        if hasattr(stream, "close"):
            stream.close()
    rollback = getattr(session, "rollback_last_decode", None)
    if rollback is not None:
        rollback()
    return text


def controlling_prefill_cycle(
    small: BackendSession,
    large_chunk: str,
    tags: ControlTags,
    probe_tokens: int,
    at: int | None = None,
) -> tuple[ControlDecision, bool]:
    """Prefill one chunk of large output into the small session, then probe
    the small model's greedy continuation for close-tag intent.

    Returns (decision, ambiguous): ambiguous means the probe ended on a proper
    prefix of the close tag, so the caller should widen the next probe.
    """
    small.prefill(large_chunk, at=at)
    try:
        probe = small.greedy_probe(probe_tokens)
    except ProbeUnsupportedError:
        logger.warning(
            "probe unsupported on %s; degrading to single-token decode", small.session_id
        )
        probe = _fallback_probe(small)
    if probe.startswith(tags.close_tag):
        return ControlDecision.TAKE_BACK_CONTROL, False
    if probe and tags.close_tag.startswith(probe):
        return ControlDecision.CONTINUE_LARGE, True
    return ControlDecision.CONTINUE_LARGE, False


class _PrefillWorker:
    """Single worker draining queued prefills in order (overlapped mode)."""

    def __init__(self) -> None:
        self._queue: queue.Queue = queue.Queue()
        self._error: BaseException | None = None
        self._thread = threading.Thread(target=self._run, daemon=True)
        self._thread.start()

    def _run(self) -> None:
        while True:
            item = self._queue.get()
            if item is None:
                self._queue.task_done()
                return
            try:
                if self._error is None:
                    item()
            except BaseException as exc:  # surfaced at the next join
                self._error = exc
            finally:
                self._queue.task_done()

    def submit(self, fn) -> None:
        self._queue.put(fn)

    def join(self) -> None:
        self._queue.join()
        if self._error is not None:
            error, self._error = self._error, None
            raise error

    def shutdown(self) -> None:
        self._queue.put(None)
        self._queue.join()


class _CooperativeRun:
    """State of one run; single coordinator owns all protocol state and is the
    only writer of the trace."""

    def __init__(
        self,
        question: str,
        small: BackendSession,
        large: BackendSession | None,
        config: RunConfig,
    ) -> None:
        if not question:
            raise ValueError("question must be non-empty")
        if large is None and config.policy.kind != NEVER_OFFLOAD:
            raise ValueError("a large session is required unless policy is never-offload")
        self.question = question
        self.small = small
        self.large = large
        self.config = config
        self.tags = config.tags

        self.text = ""  # generated trace text, tags included
        self.removed = 0  # tag-literal characters inside self.text
        self.scanner = StreamScanner(
            literals=(self.tags.open_tag, self.tags.close_tag, self.tags.answer_close),
            kinds=(TagKind.OPEN, TagKind.CLOSE, _ANSWER_STOP),
        )
        self.proto = ProtocolState(span_budget=config.max_offload_tokens_per_span)
        self.decoder = "small"  # who decodes next (trails proto.phase at takeback)
        self.spans: list[OffloadSpan] = []
        self.handoffs: list[HandoffRecord] = []
        self.timings: list[PhaseTiming] = []
        self.total_tokens = 0
        self.finished = False

        self._synced = {"small": 0, "large": 0}
        self._phase_tokens = 0
        self._phase_seconds = 0.0
        self._plan: list[OffloadSpan] = []
        self._plan_index = 0
        self._active_plan_tokens: int | None = None  # planned span in progress
        self._probe_width = config.probe_tokens
        self._pending_overshoot = 0
        self._worker = _PrefillWorker() if config.execution == OVERLAPPED else None

        if config.policy.kind == RANDOM_OFFLOAD:
            self._plan = random_offload_policy(
                config.max_total_tokens,
                config.policy.p,
                config.policy.seed,
                config.policy.mean_span_tokens,
            )

    # ------------------------------------------------------------------ #
    # session bookkeeping

    def _full_context(self) -> str:
        return self.question + self.text

    def _sync(self, name: str) -> None:
        """Prefill a session up to the current committed trace."""
        session = self.small if name == "small" else self.large
        if session is None:
            return
        full = self._full_context()
        offset = self._synced[name]
        pending = full[offset:]
        if not pending:
            return
        self._synced[name] = len(full)
        if self._worker is not None and name == "large":
            self._worker.submit(lambda: session.prefill(pending, at=offset))
        else:
            session.prefill(pending, at=offset)

    def _join_prefills(self) -> None:
        if self._worker is not None:
            self._worker.join()

    # ------------------------------------------------------------------ #
    # trace bookkeeping

    def _commit(self, piece: str, tokens: int) -> list[tuple]:
        """Append text to the trace, advance the scanner, account tokens.

        Returns (event, stripped_offset) pairs for every tag event completed
        by this piece, in order. An open event's stripped offset is the
        content start; a close event's is the content end (the tag literal
        itself vanishes from stripped coordinates).
        """
        self.text += piece
        out = []
        for event in self.scanner.feed(piece):
            stripped = event.offset - self.removed
            out.append((event, stripped))
            if event.kind is TagKind.OPEN:
                self.removed += len(self.tags.open_tag)
            elif event.kind is TagKind.CLOSE:
                self.removed += len(self.tags.close_tag)
        self.total_tokens += tokens
        self._phase_tokens += tokens
        return out

    def _flush_phase(self, owner: str) -> None:
        if self._phase_tokens or self._phase_seconds:
            self.timings.append(PhaseTiming(owner, self._phase_tokens, self._phase_seconds))
        self._phase_tokens = 0
        self._phase_seconds = 0.0

    def _remaining_total(self) -> int:
        return self.config.max_total_tokens - self.total_tokens

    def _stripped_end(self) -> int:
        return len(self.text) - self.removed

    def _piece_tokens(self, piece: str) -> int:
        """Token estimate of a committed piece, tag literals counting zero.

        Tags split across commit boundaries are counted as ordinary text; the
        exact count is recomputed over the whole stripped trace at finalize.
        """
        return count_tokens(strip_tags(piece, self.tags))

    # ------------------------------------------------------------------ #
    # protocol transitions

    def _open_span(self, stripped_offset: int, reason: str) -> None:
        self.proto, result = step(self.proto, ProtocolEvent.open_tag_seen(stripped_offset))
        assert result.action is ActionKind.SWITCH_TO_LARGE
        self.handoffs.append(HandoffRecord(stripped_offset, "to_large", reason))
        self.decoder = "large"
        self._probe_width = self.config.probe_tokens

    def _close_span(
        self, event: ProtocolEvent, reason: str, origin: SpanOrigin | None = None
    ) -> None:
        self.proto, result = step(self.proto, event)
        if result.closed_span is not None:
            span = result.closed_span
            if origin is not None:
                span = replace(span, origin=origin)
            self.spans.append(span)
        self.handoffs.append(
            HandoffRecord(
                event.offset or 0, "to_small", reason, overshoot_tokens=self._pending_overshoot
            )
        )
        self._pending_overshoot = 0
        self.decoder = "small"

    def _finish(self) -> None:
        offset = self._stripped_end() if self.proto.phase is Phase.LARGE_DECODING else None
        self.proto, result = step(self.proto, ProtocolEvent.end_of_stream(offset))
        if result.closed_span is not None:
            self.spans.append(result.closed_span)
            self.handoffs.append(HandoffRecord(offset or 0, "to_small", "stream-end"))
        self.finished = True

    # ------------------------------------------------------------------ #
    # small-stream driving

    def _next_plan_span(self) -> OffloadSpan | None:
        if self._plan_index < len(self._plan):
            return self._plan[self._plan_index]
        return None

    def _drive_small(self) -> None:
        """Consume one small decode stream until a handoff, the answer close,
        token exhaustion, or end of stream."""
        remaining = self._remaining_total()
        if remaining <= 0:
            self._finish()
            self._flush_phase("small")
            return
        self._join_prefills()
        self._sync("small")
        stream = self.small.decode_stream(CompletionRequest(max_tokens=remaining))
        reacts_to_tags = self.config.policy.kind == LEARNED_TAGS
        try:
            for chunk in stream:
                self._phase_seconds += chunk.seconds
                if self._consume_small_text(chunk.text, reacts_to_tags):
                    return
        finally:
            if hasattr(stream, "close"):
                stream.close()
        self._finish()  # model end of sequence
        self._flush_phase("small")

    def _consume_small_text(self, text: str, reacts_to_tags: bool) -> bool:
        """Process one small-stream chunk, cutting at actionable positions.

        Returns True when this stream should stop (handoff, finish, or plan
        trigger); text past the cut is discarded.
        """
        rest = text
        while rest:
            cut = self._choose_small_cut(rest, reacts_to_tags)
            if cut is None:
                self._commit_small(rest, self._piece_tokens(rest))
                if self._remaining_total() <= 0:
                    self._finish()
                    self._flush_phase("small")
                    return True
                return False
            cut_pos, action = cut
            kept, rest = rest[:cut_pos], rest[cut_pos:]
            events = self._commit_small(kept, self._piece_tokens(kept))
            if action == "open":
                open_events = [s for e, s in events if e.kind is TagKind.OPEN]
                self._flush_phase("small")
                self._open_span(open_events[-1], "open-tag")
                return True
            if action == "close":
                close_events = [s for e, s in events if e.kind is TagKind.CLOSE]
                self._flush_phase("small")
                self._close_span(ProtocolEvent.close_tag_seen(close_events[-1]), "close-tag")
                continue  # the small model keeps decoding this same stream
            if action == "answer":
                self._finish()
                self._flush_phase("small")
                return True
            if action == "planned":
                # Open the region now; the large phase starts once this small
                # stream is closed (its session must be free for prefills).
                plan = self._plan[self._plan_index]
                self._plan_index += 1
                self._flush_phase("small")
                tag_events = self._commit(self.tags.open_tag, 0)
                open_offsets = [s for e, s in tag_events if e.kind is TagKind.OPEN]
                self._open_span(open_offsets[-1], "planned")
                self._active_plan_tokens = plan.token_estimate
                return True
            if action == "budget":
                self._finish()
                self._flush_phase("small")
                return True
        return False

    def _choose_small_cut(self, chunk_text: str, reacts_to_tags: bool):
        """Earliest actionable position within this chunk text, or None.

        Tag cuts land just past the tag literal; token cuts land on a word
        boundary. Only the earliest candidate is validated against the
        protocol phase, since handling it changes the phase for the rest.
        """
        start_raw = len(self.text)
        _, events = scan_literals(
            self.scanner.state, chunk_text, self.scanner.literals, self.scanner.kinds
        )
        candidates: list[tuple[int, str]] = []
        for event in events:
            if event.kind is TagKind.OPEN and reacts_to_tags:
                candidates.append((event.offset + len(self.tags.open_tag) - start_raw, "open"))
            elif event.kind is TagKind.CLOSE and reacts_to_tags:
                candidates.append((event.offset + len(self.tags.close_tag) - start_raw, "close"))
            elif event.kind == _ANSWER_STOP and self.config.stop_on_answer_close:
                if self.proto.phase is Phase.LARGE_DECODING:
                    continue  # an answer close cannot end the run mid-offload
                candidates.append(
                    (event.offset + len(self.tags.answer_close) - start_raw, "answer")
                )
        plan = self._next_plan_span()
        if plan is not None and self.proto.phase is Phase.SMALL_DECODING:
            tokens_to_start = plan.start - self.total_tokens
            if tokens_to_start <= count_tokens(chunk_text):
                head, _ = split_after_tokens(chunk_text, tokens_to_start)
                candidates.append((len(head), "planned"))
        tokens_to_cap = self._remaining_total()
        if tokens_to_cap <= count_tokens(chunk_text):
            head, _ = split_after_tokens(chunk_text, tokens_to_cap)
            candidates.append((len(head), "budget"))
        if not candidates:
            return None
        cut_pos, action = min(candidates, key=lambda c: c[0])
        if action == "open" and self.proto.phase is Phase.LARGE_DECODING:
            raise OrchestrationError(
                "small model emitted an open tag inside an offload region",
                tuple(self.handoffs),
            )
        if action == "close" and self.proto.phase is not Phase.LARGE_DECODING:
            raise OrchestrationError(
                "small model emitted a close tag with no open offload region",
                tuple(self.handoffs),
            )
        return cut_pos, action

    def _commit_small(self, piece: str, tokens: int) -> list[tuple]:
        if not piece:
            return []
        events = self._commit(piece, tokens)
        if self.config.policy.kind != NEVER_OFFLOAD:
            self._sync("large")  # streaming prefill keeps the large model hot
        return events

    # ------------------------------------------------------------------ #
    # large-stream driving

    def _drive_large(self) -> None:
        """Let the large model decode one offload region, chunk by chunk, with
        controlling prefills and probes deciding when control returns."""
        planned = self._active_plan_tokens is not None
        max_span_tokens = self._active_plan_tokens
        self._active_plan_tokens = None
        budget = self.config.max_offload_tokens_per_span
        if max_span_tokens is not None:
            budget = min(budget, max_span_tokens)
        budget = min(budget, max(1, self._remaining_total()))
        self._join_prefills()
        self._sync("large")
        request = CompletionRequest(
            max_tokens=budget,
            stop_sequences=() if planned else (self.tags.close_tag,),
        )
        stream = self.large.decode_stream(request)
        buffer = ""
        spent = 0
        done = False
        try:
            for chunk in stream:
                self._phase_seconds += chunk.seconds
                buffer += chunk.text
                while not done and count_tokens(buffer) >= self.config.chunk_size:
                    head, buffer = split_after_tokens(buffer, self.config.chunk_size)
                    done, used = self._process_large_chunk(head, planned, spent, budget)
                    spent += used
                if done:
                    break
        finally:
            if hasattr(stream, "close"):
                stream.close()
        if not done and buffer:
            done, used = self._process_large_chunk(buffer, planned, spent, budget)
            spent += used
        if not done:
            # The close never arrived (model end of sequence or budget).
            if planned:
                self._end_planned_span()
            else:
                self._force_takeback("forced-budget" if spent >= budget else "stream-end")
                self._flush_phase("large")

    def _process_large_chunk(
        self, piece: str, planned: bool, spent: int, budget: int
    ) -> tuple[bool, int]:
        """Commit one controlling chunk of large output.

        Returns (region finished, tokens used).
        """
        if not planned:
            close_pos = piece.find(self.tags.close_tag)
            if close_pos != -1:
                # Stop-sequence path: the large model emitted the close tag
                # itself; text past the tag is discarded.
                kept = piece[: close_pos + len(self.tags.close_tag)]
                tokens = self._piece_tokens(piece[:close_pos])
                events = self._commit(kept, tokens)
                self._sync("small")
                close_offsets = [s for e, s in events if e.kind is TagKind.CLOSE]
                self._flush_phase("large")
                self._close_span(ProtocolEvent.close_tag_seen(close_offsets[-1]), "close-tag")
                return True, tokens
        tokens = self._piece_tokens(piece)
        self._commit(piece, tokens)
        self.proto = spend_budget(self.proto, tokens)
        budget_hit = spent + tokens >= budget
        if planned:
            self._sync("small")
            if budget_hit:
                self._end_planned_span()
                return True, tokens
            return False, tokens
        decision, ambiguous = controlling_prefill_cycle(
            self.small,
            self._full_context()[self._synced["small"] :],
            self.tags,
            self._probe_width,
            at=self._synced["small"],
        )
        self._synced["small"] = len(self._full_context())
        if ambiguous:
            self._probe_width = min(self._probe_width * 2, 8)
        else:
            self._probe_width = self.config.probe_tokens
        if decision is ControlDecision.TAKE_BACK_CONTROL:
            # The small model's own decode emits the close tag next; the span
            # closes when that tag is scanned from its stream.
            self._pending_overshoot = tokens
            self._flush_phase("large")
            self.decoder = "small"
            return True, tokens
        if budget_hit or self.proto.offload_budget_remaining == 0:
            self._force_takeback("forced-budget")
            self._flush_phase("large")
            return True, tokens
        return False, tokens

    def _force_takeback(self, reason: str) -> None:
        """Inject the close tag on the small model's behalf and take control."""
        events = self._commit(self.tags.close_tag, 0)
        close_offsets = [s for e, s in events if e.kind is TagKind.CLOSE]
        self._sync("small")
        origin = (
            SpanOrigin.RANDOM_POLICY
            if self.config.policy.kind == RANDOM_OFFLOAD
            else SpanOrigin.FORCED_TAKEBACK
        )
        self._close_span(
            ProtocolEvent.budget_exhausted(close_offsets[-1]), reason, origin=origin
        )

    def _end_planned_span(self) -> None:
        events = self._commit(self.tags.close_tag, 0)
        close_offsets = [s for e, s in events if e.kind is TagKind.CLOSE]
        self._sync("small")
        self._flush_phase("large")
        self._close_span(
            ProtocolEvent.close_tag_seen(close_offsets[-1]),
            "planned",
            origin=SpanOrigin.RANDOM_POLICY,
        )

    # ------------------------------------------------------------------ #

    def run(self) -> GenerationResult:
        error: str | None = None
        try:
            self.small.prefill(self.question, at=0)
            if self.large is not None:
                if self._worker is not None:
                    question, large = self.question, self.large
                    self._worker.submit(lambda: large.prefill(question, at=0))
                else:
                    self.large.prefill(self.question, at=0)
            self._synced = {"small": len(self.question), "large": len(self.question)}
            while not self.finished:
                if self.decoder == "small":
                    self._drive_small()
                else:
                    self._drive_large()
            self._join_prefills()
            self._sync("small")  # leave the controller's context complete
        except BackendError as exc:
            error = f"{type(exc).__name__}: {exc}"
            logger.error("backend failure, returning partial result: %s", error)
        except ProtocolError as exc:
            raise OrchestrationError(str(exc), tuple(self.handoffs)) from exc
        finally:
            if self._worker is not None:
                self._worker.shutdown()
        self._flush_phase("large" if self.decoder == "large" else "small")
        return self._finalize(error)

    def _finalize(self, error: str | None) -> GenerationResult:
        stripped = strip_tags(self.text, self.tags)
        spans = []
        for span in self.spans:
            content = stripped[span.start : span.end]
            spans.append(replace(span, token_estimate=count_tokens(content)))
        large_tokens = sum(s.token_estimate for s in spans)
        total = count_tokens(stripped)
        trace = GenerationTrace(
            text=self.text,
            spans=tuple(spans),
            handoff_count=len(spans),
            small_tokens=total - large_tokens,
            large_tokens=large_tokens,
        )
        merged_timings: list[PhaseTiming] = []
        for timing in self.timings:
            if merged_timings and merged_timings[-1].phase == timing.phase:
                last = merged_timings[-1]
                merged_timings[-1] = PhaseTiming(
                    last.phase, last.tokens + timing.tokens, last.seconds + timing.seconds
                )
            else:
                merged_timings.append(timing)
        return GenerationResult(
            trace=trace,
            timings=tuple(merged_timings),
            handoff_log=tuple(self.handoffs),
            error=error,
        )


def run_cooperative(
    question: str,
    small: BackendSession,
    large: BackendSession | None,
    config: RunConfig | None = None,
) -> GenerationResult:
    """Run one cooperative generation; see the module docstring for the flow."""
    return _CooperativeRun(question, small, large, config or RunConfig()).run()
