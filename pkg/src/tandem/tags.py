"""Control-tag literals and the streaming tag scanner.

Tags are matched as plain text, never as special vocabulary entries, so the
scanner must cope with tags split arbitrarily across streamed chunks. It does
so by carrying the longest trailing fragment that could still grow into a tag.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

DEFAULT_OPEN_TAG = "<bigmodel>"
DEFAULT_CLOSE_TAG = "</bigmodel>"


class TagKind(enum.Enum):
    OPEN = "open"
    CLOSE = "close"


@dataclass(frozen=True)
class ControlTags:
    """The tag literals shared by every other module."""

    open_tag: str = DEFAULT_OPEN_TAG
    close_tag: str = DEFAULT_CLOSE_TAG
    think_open: str = "<think>"
    think_close: str = "</think>"
    answer_open: str = "<answer>"
    answer_close: str = "</answer>"

    def __post_init__(self) -> None:
        all_tags = (
            self.open_tag,
            self.close_tag,
            self.think_open,
            self.think_close,
            self.answer_open,
            self.answer_close,
        )
        if any(not t for t in all_tags):
            raise ValueError("control tags must be non-empty")
        if len(set(all_tags)) != len(all_tags):
            raise ValueError("control tags must be mutually distinct")
        if self.open_tag in self.close_tag or self.close_tag in self.open_tag:
            raise ValueError("open/close tags must not be substrings of each other")

    @property
    def max_tag_length(self) -> int:
        return max(len(self.open_tag), len(self.close_tag))


@dataclass(frozen=True)
class TagEvent:
    """A complete tag occurrence, at the absolute offset of its first character.

    ``kind`` is a :class:`TagKind` from the control-tag scanner; the generic
    :class:`StreamScanner` may label events with arbitrary strings instead.
    """

    kind: TagKind | str
    offset: int


@dataclass(frozen=True)
class ScannerState:
    """Carry buffer plus total characters consumed across feed calls.

    The carry never contains a complete tag and is at most max-tag-length - 1
    characters: the longest suffix of the input so far that is a proper prefix
    of some tag.
    """

    carry: str = ""
    absolute_offset: int = 0


def _is_proper_tag_prefix(fragment: str, literals: tuple[str, ...]) -> bool:
    return any(len(fragment) < len(t) and t.startswith(fragment) for t in literals)


def scan_literals(
    state: ScannerState,
    chunk: str,
    literals: tuple[str, ...],
    kinds: tuple[TagKind | str, ...],
) -> tuple[ScannerState, list[TagEvent]]:
    """Scan ``carry + chunk`` for complete literal occurrences, left to right.

    Matched literals consume their characters, so overlapping occurrences are
    resolved leftmost-first. Because no watched literal may be a substring of
    another, stopping at the first trailing fragment that is a proper prefix
    of some literal yields the longest valid carry.
    """
    text = state.carry + chunk
    base = state.absolute_offset - len(state.carry)
    events: list[TagEvent] = []
    i = 0
    n = len(text)
    while i < n:
        matched = False
        for literal, kind in zip(literals, kinds):
            if text.startswith(literal, i):
                events.append(TagEvent(kind, base + i))
                i += len(literal)
                matched = True
                break
        if matched:
            continue
        if _is_proper_tag_prefix(text[i:], literals):
            break
        i += 1
    return ScannerState(carry=text[i:], absolute_offset=state.absolute_offset + len(chunk)), events


def scan_chunk(
    state: ScannerState, chunk: str, tags: ControlTags
) -> tuple[ScannerState, list[TagEvent]]:
    """Feed one streamed chunk; report every complete open/close tag exactly once.

    Total function: any chunk (including empty) is accepted. Event offsets are
    absolute character positions in the concatenation of all fed chunks.
    """
    return scan_literals(
        state, chunk, (tags.open_tag, tags.close_tag), (TagKind.OPEN, TagKind.CLOSE)
    )


def scan_text(text: str, tags: ControlTags) -> list[TagEvent]:
    """Scan a whole text in one call from a fresh scanner."""
    _, events = scan_chunk(ScannerState(), text, tags)
    return events


@dataclass
class StreamScanner:
    """Mutable convenience wrapper used by the orchestrator to watch several
    literals (control tags plus stop markers) over one stream."""

    literals: tuple[str, ...]
    kinds: tuple[TagKind | str, ...] = field(default=())
    state: ScannerState = field(default_factory=ScannerState)

    def __post_init__(self) -> None:
        if not self.kinds:
            self.kinds = tuple(self.literals)
        if len(self.kinds) != len(self.literals):
            raise ValueError("kinds must pair 1:1 with literals")
        for a in self.literals:
            for b in self.literals:
                if a is not b and a in b:
                    raise ValueError(f"watched literal {a!r} is a substring of {b!r}")

    def feed(self, chunk: str) -> list[TagEvent]:
        self.state, events = scan_literals(self.state, chunk, self.literals, self.kinds)
        return events
