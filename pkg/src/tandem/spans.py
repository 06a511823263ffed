"""Offload spans, trace containers, and the tag <-> span round-trip algebra.

Span offsets always refer to characters of the tag-stripped text, so spans are
stable regardless of the tag literals in use. Token estimates are whitespace
word counts of the stripped text; tag literals count zero tokens.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass, replace

from .tags import ControlTags, TagKind, scan_text

_WORD_RE = re.compile(r"\S+")


class SpanOrigin(enum.Enum):
    ANNOTATED = "annotated"
    EMITTED = "emitted"
    RANDOM_POLICY = "random-policy"
    FORCED_TAKEBACK = "forced-takeback"


class TokenCounting(enum.Enum):
    WHITESPACE_WORDS = "whitespace-words"
    BACKEND_TOKENS = "backend-tokens"


def count_tokens(text: str) -> int:
    """Whitespace-word token estimate (the tokenizer-free default)."""
    return len(_WORD_RE.findall(text))


def split_after_tokens(text: str, n: int) -> tuple[str, str]:
    """Split immediately after the n-th whitespace word, preserving bytes.

    The head ends at the last character of the n-th word; any following
    whitespace leads the tail. With fewer than n words the head is the whole
    text.
    """
    if n <= 0:
        return "", text
    for i, m in enumerate(_WORD_RE.finditer(text), start=1):
        if i == n:
            return text[: m.end()], text[m.end() :]
    return text, ""


@dataclass(frozen=True)
class OffloadSpan:
    """Half-open character interval of one offloaded region, in stripped-text
    coordinates."""

    start: int
    end: int
    origin: SpanOrigin = SpanOrigin.EMITTED
    token_estimate: int = 0

    def __post_init__(self) -> None:
        if not 0 <= self.start < self.end:
            raise ValueError(f"span requires 0 <= start < end, got [{self.start}, {self.end})")
        if self.token_estimate < 0:
            raise ValueError("token_estimate must be nonnegative")

    @property
    def length(self) -> int:
        return self.end - self.start


def _check_span_list(spans: list[OffloadSpan], text_length: int | None = None) -> None:
    prev_end = 0
    for span in spans:
        if span.start < prev_end:
            raise ValueError(f"spans overlap or are unsorted near [{span.start}, {span.end})")
        prev_end = span.end
    if text_length is not None and spans and spans[-1].end > text_length:
        raise ValueError("span extends past end of text")


@dataclass(frozen=True)
class GenerationTrace:
    """Full text of one run plus its ordered, non-overlapping offload spans."""

    text: str
    spans: tuple[OffloadSpan, ...] = ()
    handoff_count: int = 0
    small_tokens: int = 0
    large_tokens: int = 0

    def __post_init__(self) -> None:
        if self.handoff_count != len(self.spans):
            raise ValueError("handoff_count must equal the number of spans")
        if self.small_tokens < 0 or self.large_tokens < 0:
            raise ValueError("token counts must be nonnegative")
        _check_span_list(list(self.spans))

    @classmethod
    def from_text(cls, text: str, tags: ControlTags | None = None) -> "GenerationTrace":
        """Build a trace from tagged text, deriving spans and token splits."""
        tags = tags or ControlTags()
        spans = extract_spans(text, tags)
        stripped = strip_tags(text, tags)
        large = sum(s.token_estimate for s in spans)
        total = count_tokens(stripped)
        return cls(
            text=text,
            spans=tuple(spans),
            handoff_count=len(spans),
            small_tokens=total - large,
            large_tokens=large,
        )


class SpanExtractionError(ValueError):
    """Raised when tag structure is unbalanced or nested; carries the
    TraceValidation describing why (see tandem.protocol.validate_trace)."""

    def __init__(self, message: str, validation=None) -> None:
        super().__init__(message)
        self.validation = validation


def _paired_tag_events(text: str, tags: ControlTags) -> list[tuple[int, int]]:
    """Return (open_offset, close_offset) pairs in raw-text coordinates.

    Raises SpanExtractionError on unbalanced or nested structure.
    """
    from .protocol import validate_trace  # cycle kept import-local

    pairs: list[tuple[int, int]] = []
    pending: int | None = None
    for event in scan_text(text, tags):
        if event.kind is TagKind.OPEN:
            if pending is not None:
                raise SpanExtractionError(
                    f"nested open tag at offset {event.offset}", validate_trace(text, tags)
                )
            pending = event.offset
        else:
            if pending is None:
                raise SpanExtractionError(
                    f"close tag before open at offset {event.offset}", validate_trace(text, tags)
                )
            pairs.append((pending, event.offset))
            pending = None
    if pending is not None:
        raise SpanExtractionError(
            f"unclosed open tag at offset {pending}", validate_trace(text, tags)
        )
    return pairs


def extract_spans(
    text: str, tags: ControlTags | None = None, origin: SpanOrigin = SpanOrigin.EMITTED
) -> list[OffloadSpan]:
    """One span per open/close pair, measured over the text with tags removed.

    Requires balanced, non-nested tags; raises SpanExtractionError otherwise.
    A degenerate pair enclosing nothing yields no span (spans are non-empty by
    invariant), so such pairs do not survive a strip/extract/wrap round trip.
    """
    tags = tags or ControlTags()
    spans: list[OffloadSpan] = []
    removed = 0
    for open_at, close_at in _paired_tag_events(text, tags):
        start = open_at - removed
        removed += len(tags.open_tag)
        end = close_at - removed
        removed += len(tags.close_tag)
        if end == start:
            # Empty offload region: the pair contributes no span.
            continue
        content = text[open_at + len(tags.open_tag) : close_at]
        spans.append(
            OffloadSpan(start=start, end=end, origin=origin, token_estimate=count_tokens(content))
        )
    return spans


def strip_tags(text: str, tags: ControlTags | None = None) -> str:
    """Remove every scanned open/close tag occurrence, preserving all other bytes."""
    tags = tags or ControlTags()
    out: list[str] = []
    pos = 0
    for event in scan_text(text, tags):
        out.append(text[pos : event.offset])
        pos = event.offset + len(
            tags.open_tag if event.kind is TagKind.OPEN else tags.close_tag
        )
    out.append(text[pos:])
    return "".join(out)


def wrap_spans(
    trace: str, spans: list[OffloadSpan], tags: ControlTags | None = None
) -> str:
    """Insert open/close tags at span boundaries of an untagged trace.

    Removing the tags restores the trace byte-exactly and extract_spans of the
    output reproduces the input spans. Spans must be sorted, disjoint, and in
    bounds.
    """
    tags = tags or ControlTags()
    _check_span_list(spans, len(trace))
    out: list[str] = []
    pos = 0
    for span in spans:
        out.append(trace[pos : span.start])
        out.append(tags.open_tag)
        out.append(trace[span.start : span.end])
        out.append(tags.close_tag)
        pos = span.end
    out.append(trace[pos:])
    return "".join(out)


def merge_spans(spans: list[OffloadSpan], text: str | None = None) -> list[OffloadSpan]:
    """Union overlapping or adjacent spans; output sorted and disjoint.

    When ``text`` (the untagged trace) is given, token estimates of merged
    spans are recomputed from their slices; otherwise member estimates are
    summed, which over-counts words joined across adjacent boundaries.
    """
    if not spans:
        return []
    ordered = sorted(spans, key=lambda s: (s.start, s.end))
    merged: list[OffloadSpan] = [ordered[0]]
    for span in ordered[1:]:
        last = merged[-1]
        if span.start <= last.end:
            merged[-1] = replace(
                last,
                end=max(last.end, span.end),
                token_estimate=last.token_estimate + span.token_estimate,
            )
        else:
            merged.append(span)
    if text is not None:
        merged = [
            replace(s, token_estimate=count_tokens(text[s.start : s.end])) for s in merged
        ]
    return merged


def coverage(
    trace: GenerationTrace,
    counting: TokenCounting = TokenCounting.WHITESPACE_WORDS,
    tags: ControlTags | None = None,
) -> float:
    """Fraction of tokens enclosed in offload spans, in [0, 1]; 0 for empty text."""
    if counting is TokenCounting.BACKEND_TOKENS:
        total = trace.small_tokens + trace.large_tokens
        return trace.large_tokens / total if total else 0.0
    stripped = strip_tags(trace.text, tags)
    total = count_tokens(stripped)
    if total == 0:
        return 0.0
    inside = sum(count_tokens(stripped[s.start : s.end]) for s in trace.spans)
    return inside / total
