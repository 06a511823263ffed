"""Scalar policy-refinement reward: accuracy, format, and tag-count components
combined with equal weight, with a piecewise-linear coverage term that peaks at
moderate offload.

Everything here is a pure function of the completion text, safe for parallel
batch scoring.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from .spans import count_tokens, strip_tags
from .tags import ControlTags, TagKind, scan_text

_BOXED_RE = re.compile(r"\\boxed\{([^{}]*)\}")
_WS_RUN_RE = re.compile(r"\s+")


@dataclass(frozen=True)
class RewardConfig:
    coverage_peak: float = 0.4
    weights: tuple[float, float, float] = (1.0, 1.0, 1.0)  # accuracy, format, tag_count
    essential_tags: tuple[str, ...] = ()
    mismatch_penalty: float = 1.0
    tags: ControlTags = field(default_factory=ControlTags)

    def __post_init__(self) -> None:
        if not 0.0 < self.coverage_peak < 1.0:
            raise ValueError("coverage_peak must lie strictly inside (0, 1)")
        if any(w < 0 for w in self.weights) or not any(self.weights):
            raise ValueError("weights must be nonnegative and not all zero")
        if self.mismatch_penalty < 0:
            raise ValueError("mismatch_penalty must be nonnegative")
        if not self.essential_tags:
            object.__setattr__(
                self,
                "essential_tags",
                (
                    self.tags.think_open,
                    self.tags.think_close,
                    self.tags.answer_open,
                    self.tags.answer_close,
                ),
            )


@dataclass(frozen=True)
class RewardBreakdown:
    accuracy: float
    format: float
    tag_count: float
    coverage_term: float
    total: float

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "format": self.format,
            "tag_count": self.tag_count,
            "coverage_term": self.coverage_term,
            "total": self.total,
        }


def normalize_answer(text: str) -> str:
    """Trim, collapse whitespace runs, and strip one surrounding boxed wrapper.

    No symbolic math equivalence: comparison is plain string equality after
    this normalization.
    """
    text = text.strip()
    m = _BOXED_RE.fullmatch(text)
    if m:
        text = m.group(1).strip()
    return _WS_RUN_RE.sub(" ", text)


def extract_answer(completion: str, tags: ControlTags) -> str | None:
    """Content of the answer block, or the final boxed expression as fallback."""
    start = completion.find(tags.answer_open)
    if start != -1:
        end = completion.find(tags.answer_close, start + len(tags.answer_open))
        if end != -1:
            return completion[start + len(tags.answer_open) : end]
    boxed = _BOXED_RE.findall(completion)
    if boxed:
        return boxed[-1]
    return None


def accuracy_reward(completion: str, gold_answer: str, tags: ControlTags | None = None) -> float:
    """1.0 iff the normalized answer equals the normalized gold answer, else 0.0."""
    tags = tags or ControlTags()
    answer = extract_answer(completion, tags)
    if answer is None:
        return 0.0
    return 1.0 if normalize_answer(answer) == normalize_answer(gold_answer) else 0.0


def _offload_tags_well_formed(completion: str, tags: ControlTags) -> bool:
    """Balanced and non-nested; zero offload tags are vacuously well-formed."""
    depth = 0
    for event in scan_text(completion, tags):
        if event.kind is TagKind.OPEN:
            if depth >= 1:
                return False
            depth += 1
        else:
            depth -= 1
            if depth < 0:
                return False
    return depth == 0


def _scaffold_ok(completion: str, tags: ControlTags) -> bool:
    from .protocol import validate_trace

    return validate_trace(completion, tags).scaffold_ok


def format_reward(completion: str, tags: ControlTags | None = None) -> float:
    """+1 for the think/answer scaffold, +1 for well-formed offload tags.

    Zero offload tags are vacuously well-formed, but the vacuous point is only
    granted when the completion engaged with the format at all (scaffold ok or
    some offload tag present); a bare or empty completion scores 0.
    """
    tags = tags or ControlTags()
    scaffold = _scaffold_ok(completion, tags)
    score = 1.0 if scaffold else 0.0
    has_offload_tags = bool(scan_text(completion, tags))
    if _offload_tags_well_formed(completion, tags) and (has_offload_tags or scaffold):
        score += 1.0
    return score


def coverage_reward(c: float, peak: float = 0.4) -> float:
    """Piecewise-linear shaping: rises 0 -> +1 up to the peak, then falls to -1
    at full coverage. Continuous at the peak."""
    if not 0.0 <= c <= 1.0:
        raise ValueError(f"coverage must lie in [0, 1], got {c}")
    if not 0.0 < peak < 1.0:
        raise ValueError(f"peak must lie strictly inside (0, 1), got {peak}")
    if c <= peak:
        return c / peak
    return 1.0 - 2.0 * (c - peak) / (1.0 - peak)


def offload_coverage(completion: str, tags: ControlTags | None = None) -> float:
    """Fraction of tokens inside offload regions, robust to malformed tags.

    Pairs tags greedily left to right: an open with no prior pending open
    starts a region, the next close ends it; nested opens, stray closes, and
    an unclosed trailing open are ignored. Equals span-based coverage on
    well-formed text.
    """
    tags = tags or ControlTags()
    stripped = strip_tags(completion, tags)
    total = count_tokens(stripped)
    if total == 0:
        return 0.0
    inside = 0
    removed = 0
    pending: int | None = None
    for event in scan_text(completion, tags):
        length = len(tags.open_tag if event.kind is TagKind.OPEN else tags.close_tag)
        stripped_offset = event.offset - removed
        removed += length
        if event.kind is TagKind.OPEN:
            if pending is None:
                pending = stripped_offset
        else:
            if pending is not None:
                inside += count_tokens(stripped[pending:stripped_offset])
                pending = None
    return inside / total


def tag_count_reward(completion: str, config: RewardConfig | None = None) -> float:
    """Per-tag presence credits plus the coverage term, minus the mismatch
    penalty when open/close counts differ."""
    config = config or RewardConfig()
    tags = config.tags
    presence = sum(1 for t in config.essential_tags if t in completion) / len(
        config.essential_tags
    )
    cov = coverage_reward(offload_coverage(completion, tags), config.coverage_peak)
    events = scan_text(completion, tags)
    opens = sum(1 for e in events if e.kind is TagKind.OPEN)
    closes = len(events) - opens
    penalty = config.mismatch_penalty if opens != closes else 0.0
    return presence + cov - penalty


def total_reward(
    completion: str, gold: str, config: RewardConfig | None = None
) -> RewardBreakdown:
    """Weighted sum of the three components, with the breakdown populated."""
    config = config or RewardConfig()
    acc = accuracy_reward(completion, gold, config.tags)
    fmt = format_reward(completion, config.tags)
    cov_term = coverage_reward(offload_coverage(completion, config.tags), config.coverage_peak)
    tag = tag_count_reward(completion, config)
    w_acc, w_fmt, w_tag = config.weights
    return RewardBreakdown(
        accuracy=acc,
        format=fmt,
        tag_count=tag,
        coverage_term=cov_term,
        total=w_acc * acc + w_fmt * fmt + w_tag * tag,
    )
