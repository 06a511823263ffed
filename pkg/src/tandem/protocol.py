"""Handoff state machine and trace validation.

The small model controls the run: it opens an offload region, the large model
decodes inside it, and control returns on the close tag or on a forced
takeback when the per-span token budget runs out.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace

from .spans import OffloadSpan, SpanOrigin
from .tags import ControlTags, TagKind, scan_text


class Phase(enum.Enum):
    SMALL_DECODING = "small-decoding"
    LARGE_DECODING = "large-decoding"
    FINISHED = "finished"


class EventKind(enum.Enum):
    OPEN_TAG_SEEN = "open_tag_seen"
    CLOSE_TAG_SEEN = "close_tag_seen"
    BUDGET_EXHAUSTED = "budget_exhausted"
    END_OF_STREAM = "end_of_stream"


class ActionKind(enum.Enum):
    SWITCH_TO_LARGE = "switch_to_large"
    SWITCH_TO_SMALL = "switch_to_small"
    FINISH = "finish"
    NONE = "none"


class TakebackReason(enum.Enum):
    NORMAL = "normal"
    FORCED = "forced"


class ProtocolError(RuntimeError):
    """An event illegal for the current phase: orchestrator bug or a malformed
    scripted backend."""

    def __init__(self, phase: Phase, event: "ProtocolEvent") -> None:
        super().__init__(f"illegal event {event.kind.value} in phase {phase.value}")
        self.phase = phase
        self.event = event


@dataclass(frozen=True)
class ProtocolEvent:
    kind: EventKind
    offset: int | None = None  # stripped-text offset, where meaningful

    @classmethod
    def open_tag_seen(cls, offset: int) -> "ProtocolEvent":
        return cls(EventKind.OPEN_TAG_SEEN, offset)

    @classmethod
    def close_tag_seen(cls, offset: int) -> "ProtocolEvent":
        return cls(EventKind.CLOSE_TAG_SEEN, offset)

    @classmethod
    def budget_exhausted(cls, offset: int) -> "ProtocolEvent":
        return cls(EventKind.BUDGET_EXHAUSTED, offset)

    @classmethod
    def end_of_stream(cls, offset: int | None = None) -> "ProtocolEvent":
        return cls(EventKind.END_OF_STREAM, offset)


@dataclass(frozen=True)
class ProtocolState:
    phase: Phase = Phase.SMALL_DECODING
    current_span_start: int | None = None
    offload_budget_remaining: int = 0
    span_budget: int = 1024  # per-span allowance restored at each open

    def __post_init__(self) -> None:
        if (self.current_span_start is not None) != (self.phase is Phase.LARGE_DECODING):
            raise ValueError("current_span_start must be present iff phase is LargeDecoding")
        if self.offload_budget_remaining < 0:
            raise ValueError("offload budget must never be negative")


@dataclass(frozen=True)
class StepResult:
    action: ActionKind
    closed_span: OffloadSpan | None = None
    reason: TakebackReason | None = None


def _close_span(state: ProtocolState, end: int, origin: SpanOrigin) -> OffloadSpan | None:
    assert state.current_span_start is not None
    if end <= state.current_span_start:
        return None  # degenerate region, nothing was offloaded
    return OffloadSpan(start=state.current_span_start, end=end, origin=origin)


def step(state: ProtocolState, event: ProtocolEvent) -> tuple[ProtocolState, StepResult]:
    """Advance the handoff machine by one event.

    Raises ProtocolError for events illegal in the current phase.
    """
    if state.phase is Phase.SMALL_DECODING:
        if event.kind is EventKind.OPEN_TAG_SEEN:
            if event.offset is None:
                raise ValueError("open_tag_seen requires the span start offset")
            new = replace(
                state,
                phase=Phase.LARGE_DECODING,
                current_span_start=event.offset,
                offload_budget_remaining=state.span_budget,
            )
            return new, StepResult(ActionKind.SWITCH_TO_LARGE)
        if event.kind is EventKind.END_OF_STREAM:
            return (
                replace(state, phase=Phase.FINISHED, current_span_start=None),
                StepResult(ActionKind.FINISH),
            )
        raise ProtocolError(state.phase, event)

    if state.phase is Phase.LARGE_DECODING:
        if event.kind in (EventKind.CLOSE_TAG_SEEN, EventKind.BUDGET_EXHAUSTED):
            if event.offset is None:
                raise ValueError(f"{event.kind.value} requires the span end offset")
        if event.kind is EventKind.CLOSE_TAG_SEEN:
            span = _close_span(state, event.offset, SpanOrigin.EMITTED)
            new = replace(
                state,
                phase=Phase.SMALL_DECODING,
                current_span_start=None,
                offload_budget_remaining=0,
            )
            return new, StepResult(ActionKind.SWITCH_TO_SMALL, span, TakebackReason.NORMAL)
        if event.kind is EventKind.BUDGET_EXHAUSTED:
            span = _close_span(state, event.offset, SpanOrigin.FORCED_TAKEBACK)
            new = replace(
                state,
                phase=Phase.SMALL_DECODING,
                current_span_start=None,
                offload_budget_remaining=0,
            )
            return new, StepResult(ActionKind.SWITCH_TO_SMALL, span, TakebackReason.FORCED)
        if event.kind is EventKind.END_OF_STREAM:
            span = None
            if event.offset is not None:
                span = _close_span(state, event.offset, SpanOrigin.FORCED_TAKEBACK)
            new = replace(
                state,
                phase=Phase.FINISHED,
                current_span_start=None,
                offload_budget_remaining=0,
            )
            return new, StepResult(ActionKind.FINISH, span, TakebackReason.FORCED)
        raise ProtocolError(state.phase, event)

    raise ProtocolError(state.phase, event)


def spend_budget(state: ProtocolState, tokens: int) -> ProtocolState:
    """Charge decoded tokens against the current span's budget (clamped at zero)."""
    if state.phase is not Phase.LARGE_DECODING:
        raise ProtocolError(state.phase, ProtocolEvent(EventKind.BUDGET_EXHAUSTED))
    remaining = max(0, state.offload_budget_remaining - max(0, tokens))
    return replace(state, offload_budget_remaining=remaining)


class IllegalReason(enum.Enum):
    UNCLOSED_OFFLOAD = "unclosed-offload"
    CLOSE_BEFORE_OPEN = "close-before-open"
    NESTED_OFFLOAD = "nested-offload"
    MISSING_THINK = "missing-think"
    MISSING_ANSWER = "missing-answer"


@dataclass(frozen=True)
class TraceValidation:
    scaffold_ok: bool
    tags_balanced: bool
    tags_non_nested: bool
    illegal_reasons: tuple[IllegalReason, ...] = ()

    @property
    def ok(self) -> bool:
        return self.scaffold_ok and self.tags_balanced and self.tags_non_nested


def _single_block(text: str, open_lit: str, close_lit: str, after: int = 0) -> int | None:
    """Offset past a unique well-ordered ``open .. close`` block at or after
    ``after``; None if the block is missing, duplicated, or out of order."""
    if text.count(open_lit) != 1 or text.count(close_lit) != 1:
        return None
    o = text.find(open_lit)
    c = text.find(close_lit)
    if o < after or c < o + len(open_lit):
        return None
    return c + len(close_lit)


def validate_trace(text: str, tags: ControlTags | None = None) -> TraceValidation:
    """Total check of scaffold structure and offload-tag well-formedness.

    Problems are reported in the result, never raised.
    """
    tags = tags or ControlTags()
    reasons: list[IllegalReason] = []

    think_end = _single_block(text, tags.think_open, tags.think_close)
    if think_end is None:
        reasons.append(IllegalReason.MISSING_THINK)
    answer_end = _single_block(text, tags.answer_open, tags.answer_close, after=think_end or 0)
    if answer_end is None:
        reasons.append(IllegalReason.MISSING_ANSWER)
    scaffold_ok = think_end is not None and answer_end is not None

    depth = 0
    balanced = True
    non_nested = True
    for event in scan_text(text, tags):
        if event.kind is TagKind.OPEN:
            if depth >= 1:
                non_nested = False
            depth += 1
        else:
            depth -= 1
            if depth < 0:
                balanced = False
                depth = 0  # keep scanning for further structure problems
                if IllegalReason.CLOSE_BEFORE_OPEN not in reasons:
                    reasons.append(IllegalReason.CLOSE_BEFORE_OPEN)
    if depth > 0:
        balanced = False
        reasons.append(IllegalReason.UNCLOSED_OFFLOAD)
    if not non_nested:
        reasons.append(IllegalReason.NESTED_OFFLOAD)

    return TraceValidation(
        scaffold_ok=scaffold_ok,
        tags_balanced=balanced,
        tags_non_nested=non_nested,
        illegal_reasons=tuple(reasons),
    )
