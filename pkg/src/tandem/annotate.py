"""Dataset annotation: locate difficult-span snippets in reasoning traces by
fuzzy matching, wrap them in control tags, and summarize corpus statistics.

The matcher scores every candidate window whose length is within 20% of the
snippet's, using normalized edit-distance similarity. The window scan is
vectorized across start positions, but its result is defined (and tested)
against an exhaustive per-window scorer.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field

import numpy as np

from .backends import BackendSession, CompletionRequest
from .spans import OffloadSpan, SpanOrigin, count_tokens, merge_spans, wrap_spans
from .tags import ControlTags

SNIPPET_OPEN = "<snippet>"
SNIPPET_CLOSE = "</snippet>"

_WS_RUN_RE = re.compile(r"\s+")


class AnnotationFormatError(ValueError):
    """Annotator response could not be parsed; carries the raw response."""

    def __init__(self, message: str, raw_response: str) -> None:
        super().__init__(message)
        self.raw_response = raw_response


class Normalization(enum.Enum):
    NONE = "none"
    WHITESPACE_FOLD = "whitespace-fold"


class RecordStatus(enum.Enum):
    OK = "ok"
    PARTIAL = "partial"
    REJECTED = "rejected"


@dataclass(frozen=True)
class MatchConfig:
    similarity_threshold: float = 0.85
    window_stride: int = 1
    normalization: Normalization = Normalization.NONE
    max_total_fraction: float = 0.25

    def __post_init__(self) -> None:
        if not 0.0 < self.similarity_threshold <= 1.0:
            raise ValueError("similarity_threshold must lie in (0, 1]")
        if self.window_stride < 1:
            raise ValueError("window_stride must be >= 1")
        if not 0.0 <= self.max_total_fraction <= 1.0:
            raise ValueError("max_total_fraction must lie in [0, 1]")


def candidate_window_lengths(snippet_length: int, trace_length: int) -> range:
    """Window lengths within +-20% of the snippet length, clipped to the trace.

    This is the shared contract between the production matcher and the
    exhaustive oracle.
    """
    lo = max(1, int(np.floor(0.8 * snippet_length)))
    hi = min(trace_length, int(np.ceil(1.2 * snippet_length)))
    return range(lo, hi + 1)


def window_similarity(edit_distance: int, window_length: int, snippet_length: int) -> float:
    return 1.0 - edit_distance / max(window_length, snippet_length)


def _fold_whitespace(text: str) -> tuple[str, list[int]]:
    """Collapse whitespace runs to single spaces; return the folded text and a
    map from folded index to original index."""
    folded: list[str] = []
    index_map: list[int] = []
    i = 0
    while i < len(text):
        ch = text[i]
        if ch.isspace():
            folded.append(" ")
            index_map.append(i)
            while i < len(text) and text[i].isspace():
                i += 1
        else:
            folded.append(ch)
            index_map.append(i)
            i += 1
    return "".join(folded), index_map


def fuzzy_match(
    trace: str, snippet: str, config: MatchConfig | None = None
) -> tuple[OffloadSpan, float] | None:
    """Best-matching window of the trace for a snippet, if it clears the
    similarity threshold.

    Similarity is 1 - edit_distance/max(window_len, snippet_len), maximized
    over candidate windows; ties break to the earliest start, then to the
    shortest window. Returned offsets always refer to the original trace.
    """
    config = config or MatchConfig()
    if not snippet:
        raise ValueError("snippet must be non-empty")
    if config.normalization is Normalization.WHITESPACE_FOLD:
        haystack, index_map = _fold_whitespace(trace)
        needle, _ = _fold_whitespace(snippet)
    else:
        haystack, index_map = trace, None
        needle = snippet
    found = _best_window(haystack, needle, config.window_stride)
    if found is None:
        return None
    start, end, similarity = found
    if similarity < config.similarity_threshold:
        return None
    if index_map is not None:
        orig_start = index_map[start]
        orig_end = index_map[end - 1] + 1
    else:
        orig_start, orig_end = start, end
    span = OffloadSpan(
        start=orig_start,
        end=orig_end,
        origin=SpanOrigin.ANNOTATED,
        token_estimate=count_tokens(trace[orig_start:orig_end]),
    )
    return span, similarity


def _best_window(haystack: str, needle: str, stride: int) -> tuple[int, int, float] | None:
    """Maximize window similarity over (start, length) candidates.

    One edit-distance DP per start covers every candidate length at once
    (prefix property of the DP row), vectorized across starts with numpy.
    """
    n, m = len(haystack), len(needle)
    lengths = candidate_window_lengths(m, n)
    if n == 0 or len(lengths) == 0:
        return None
    l_lo, l_hi = lengths.start, lengths.stop - 1
    starts = np.arange(0, n - l_lo + 1, stride)
    if len(starts) == 0:
        return None
    codes = np.frombuffer(haystack.encode("utf-32-le"), dtype=np.uint32)
    needle_codes = np.frombuffer(needle.encode("utf-32-le"), dtype=np.uint32)

    # windows[s, j] = haystack[starts[s] + j], padded past the end
    max_len = min(l_hi, n)
    pad = np.uint32(0xFFFFFFFF)
    windows = np.full((len(starts), max_len), pad, dtype=np.uint32)
    for j in range(max_len):
        idx = starts + j
        valid = idx < n
        windows[valid, j] = codes[idx[valid]]

    prev = np.broadcast_to(np.arange(max_len + 1), (len(starts), max_len + 1)).copy()
    bottom = None
    for i in range(1, m + 1):
        cur = np.empty_like(prev)
        cur[:, 0] = i
        target = needle_codes[i - 1]
        for j in range(1, max_len + 1):
            substitute = prev[:, j - 1] + (windows[:, j - 1] != target)
            cur[:, j] = np.minimum(np.minimum(prev[:, j] + 1, cur[:, j - 1] + 1), substitute)
        prev = cur
    bottom = prev  # bottom[s, L] = edit_distance(needle, haystack[start : start+L])

    best: tuple[float, int, int] | None = None  # (similarity, start, length)
    for length in lengths:
        valid = starts + length <= n
        if not valid.any():
            continue
        sims = 1.0 - bottom[:, length] / max(length, m)
        sims[~valid] = -np.inf
        idx = int(np.argmax(sims))  # first index wins: earliest start
        sim = float(sims[idx])
        if best is None or sim > best[0] or (sim == best[0] and starts[idx] < best[1]):
            best = (sim, int(starts[idx]), length)
    if best is None:
        return None
    sim, start, length = best
    return start, start + length, sim


def parse_snippets(
    response: str, open_delim: str = SNIPPET_OPEN, close_delim: str = SNIPPET_CLOSE
) -> list[str]:
    """Extract delimited snippet blocks from an annotator response, in order.

    Raises AnnotationFormatError on unbalanced delimiters.
    """
    snippets: list[str] = []
    pos = 0
    while True:
        start = response.find(open_delim, pos)
        if start == -1:
            break
        end = response.find(close_delim, start + len(open_delim))
        if end == -1:
            raise AnnotationFormatError(
                f"unterminated {open_delim} block at offset {start}", response
            )
        snippets.append(response[start + len(open_delim) : end])
        pos = end + len(close_delim)
    if response.find(close_delim, pos) != -1:
        raise AnnotationFormatError("stray closing delimiter", response)
    return snippets


def request_snippets(
    trace: str,
    annotator: BackendSession,
    prompt_template: str,
    max_tokens: int = 2048,
) -> list[str]:
    """Ask an annotator model for difficult-span snippets of one trace."""
    if "{trace}" not in prompt_template:
        raise ValueError("prompt template must contain a {trace} slot")
    prompt = prompt_template.replace("{trace}", trace)
    annotator.prefill(prompt)
    parts: list[str] = []
    for chunk in annotator.decode_stream(CompletionRequest(max_tokens=max_tokens)):
        parts.append(chunk.text)
    return parse_snippets("".join(parts))


@dataclass(frozen=True)
class AnnotationRecord:
    question: str
    trace: str
    snippets: tuple[str, ...]
    matched_spans: tuple[OffloadSpan, ...]
    annotated_text: str
    offload_fraction: float
    status: RecordStatus
    unmatched_snippets: tuple[str, ...] = ()
    dropped_spans: int = 0

    def to_dict(self) -> dict:
        return {
            "question": self.question,
            "trace": self.trace,
            "snippets": list(self.snippets),
            "matched_spans": [
                {
                    "start": s.start,
                    "end": s.end,
                    "origin": s.origin.value,
                    "token_estimate": s.token_estimate,
                }
                for s in self.matched_spans
            ],
            "annotated_text": self.annotated_text,
            "offload_fraction": self.offload_fraction,
            "status": self.status.value,
            "unmatched_snippets": list(self.unmatched_snippets),
            "dropped_spans": self.dropped_spans,
        }


def _covered_fraction(spans: list[OffloadSpan], trace: str, total_words: int) -> float:
    if total_words == 0:
        return 0.0
    inside = sum(count_tokens(trace[s.start : s.end]) for s in spans)
    return inside / total_words


def annotate_record(
    question: str,
    trace: str,
    snippets: list[str],
    config: MatchConfig | None = None,
    tags: ControlTags | None = None,
) -> AnnotationRecord:
    """Match snippets, merge overlaps, enforce the offload budget, and wrap.

    Over-budget records drop their lowest-similarity matches until the covered
    fraction fits. Status: ok when every snippet matched and nothing was
    dropped; partial on match failures or budget drops; rejected when nothing
    was retained.
    """
    config = config or MatchConfig()
    tags = tags or ControlTags()
    matches: list[tuple[OffloadSpan, float]] = []
    unmatched: list[str] = []
    for snippet in snippets:
        found = fuzzy_match(trace, snippet, config) if snippet else None
        if found is None:
            unmatched.append(snippet)
        else:
            matches.append(found)

    total_words = count_tokens(trace)
    retained = list(matches)
    dropped = 0
    while retained:
        merged = merge_spans([span for span, _ in retained], trace)
        if _covered_fraction(merged, trace, total_words) <= config.max_total_fraction:
            break
        # Lowest similarity goes first; ties drop the largest, latest span.
        victim = min(retained, key=lambda ms: (ms[1], -ms[0].length, -ms[0].start))
        retained.remove(victim)
        dropped += 1
    merged = merge_spans([span for span, _ in retained], trace) if retained else []

    annotated = wrap_spans(trace, merged, tags)
    fraction = _covered_fraction(merged, trace, total_words)
    if not merged:
        status = RecordStatus.REJECTED
    elif unmatched or dropped:
        status = RecordStatus.PARTIAL
    else:
        status = RecordStatus.OK
    return AnnotationRecord(
        question=question,
        trace=trace,
        snippets=tuple(snippets),
        matched_spans=tuple(merged),
        annotated_text=annotated,
        offload_fraction=fraction,
        status=status,
        unmatched_snippets=tuple(unmatched),
        dropped_spans=dropped,
    )


@dataclass(frozen=True)
class StatsSummary:
    bin_edges: tuple[float, ...]
    position_histogram: tuple[float, ...]  # mass per bin of span midpoints
    offload_fraction_histogram: tuple[float, ...]  # mass per bin of record fractions
    status_counts: dict = field(default_factory=dict)
    empty: bool = False


def dataset_stats(records, bins: int = 20) -> StatsSummary:
    """Histograms over ok/partial records; masses sum to one when nonempty.

    Positions are span midpoints normalized by trace length; order of records
    does not matter.
    """
    # arange/bins keeps edges exactly representable (3/20 == 0.15 == 15/100),
    # so point masses like "exactly 15%" land in the expected bin.
    edges = np.arange(bins + 1) / bins
    midpoints: list[float] = []
    fractions: list[float] = []
    status_counts: dict[str, int] = {}
    for record in records:
        status_counts[record.status.value] = status_counts.get(record.status.value, 0) + 1
        if record.status is RecordStatus.REJECTED:
            continue
        if len(record.trace) == 0:
            continue
        for span in record.matched_spans:
            midpoints.append((span.start + span.end) / 2.0 / len(record.trace))
        fractions.append(record.offload_fraction)
    if not midpoints and not fractions:
        return StatsSummary(
            bin_edges=tuple(edges),
            position_histogram=tuple(0.0 for _ in range(bins)),
            offload_fraction_histogram=tuple(0.0 for _ in range(bins)),
            status_counts=status_counts,
            empty=True,
        )
    pos_hist, _ = np.histogram(midpoints, bins=edges)
    frac_hist, _ = np.histogram(fractions, bins=edges)
    pos_mass = pos_hist / pos_hist.sum() if pos_hist.sum() else pos_hist.astype(float)
    frac_mass = frac_hist / frac_hist.sum() if frac_hist.sum() else frac_hist.astype(float)
    return StatsSummary(
        bin_edges=tuple(edges),
        position_histogram=tuple(pos_mass),
        offload_fraction_histogram=tuple(frac_mass),
        status_counts=status_counts,
        empty=False,
    )
