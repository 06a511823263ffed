"""Analytical latency model for single-model, pipelined, and non-pipelined
cooperative execution.

Decode time dominates; prefill either hides behind the other model's decode
(pipelined) or serializes at handoffs (non-pipelined). Rates come from
measured throughput profiles, constant or piecewise over context length.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np


class ProfileError(ValueError):
    pass


@dataclass(frozen=True)
class RateCurve:
    """Tokens/second, constant or linearly interpolated between breakpoints
    (clamped outside the breakpoint range)."""

    constant: float | None = None
    breakpoints: tuple[tuple[float, float], ...] = ()

    def __post_init__(self) -> None:
        if (self.constant is None) == (not self.breakpoints):
            raise ProfileError("rate must be a constant or a breakpoint table, not both")
        if self.constant is not None and self.constant <= 0:
            raise ProfileError(f"rate must be positive, got {self.constant}")
        xs = [x for x, _ in self.breakpoints]
        if any(b <= a for a, b in zip(xs, xs[1:])):
            raise ProfileError("breakpoint context lengths must be strictly increasing")
        if any(r <= 0 for _, r in self.breakpoints):
            raise ProfileError("breakpoint rates must be positive")

    def __call__(self, context_length):
        if self.constant is not None:
            if np.ndim(context_length) == 0:
                return self.constant
            return np.full(np.shape(context_length), self.constant)
        xs = np.array([x for x, _ in self.breakpoints])
        ys = np.array([r for _, r in self.breakpoints])
        out = np.interp(context_length, xs, ys)
        return float(out) if np.ndim(context_length) == 0 else out

    @classmethod
    def from_spec(cls, spec, field_name: str = "rate") -> "RateCurve":
        if isinstance(spec, (int, float)):
            if spec <= 0:
                raise ProfileError(f"{field_name}: rate must be positive, got {spec}")
            return cls(constant=float(spec))
        if isinstance(spec, (list, tuple)):
            try:
                pts = tuple((float(x), float(r)) for x, r in spec)
            except (TypeError, ValueError) as exc:
                raise ProfileError(f"{field_name}: malformed breakpoint table") from exc
            try:
                return cls(breakpoints=pts)
            except ProfileError as exc:
                raise ProfileError(f"{field_name}: {exc}") from exc
        raise ProfileError(f"{field_name}: expected number or breakpoint list")


@dataclass(frozen=True)
class ThroughputProfile:
    model_name: str
    prefill: RateCurve
    decode: RateCurve

    @classmethod
    def constant(cls, model_name: str, prefill_rate: float, decode_rate: float):
        return cls(
            model_name,
            RateCurve(constant=float(prefill_rate)),
            RateCurve(constant=float(decode_rate)),
        )


def load_profile(source) -> ThroughputProfile:
    """Load a profile from a JSON file path, a JSON string, or a dict.

    Constant-rate shorthand (a bare number) and breakpoint tables
    ([[context, rate], ...]) are both accepted.
    """
    if isinstance(source, (str, Path)) and Path(source).exists():
        data = json.loads(Path(source).read_text())
    elif isinstance(source, str):
        data = json.loads(source)
    else:
        data = source
    if not isinstance(data, dict):
        raise ProfileError("profile must be a JSON object")
    for key in ("model", "prefill_rate", "decode_rate"):
        if key not in data:
            raise ProfileError(f"profile missing field {key!r}")
    return ThroughputProfile(
        model_name=str(data["model"]),
        prefill=RateCurve.from_spec(data["prefill_rate"], "prefill_rate"),
        decode=RateCurve.from_spec(data["decode_rate"], "decode_rate"),
    )


SMALL = "small"
LARGE = "large"


@dataclass(frozen=True)
class Segment:
    owner: str  # SMALL or LARGE
    tokens: int

    def __post_init__(self) -> None:
        if self.owner not in (SMALL, LARGE):
            raise ValueError(f"segment owner must be 'small' or 'large', got {self.owner!r}")
        if self.tokens < 1:
            raise ValueError("segment token counts must be >= 1")


@dataclass(frozen=True)
class SegmentedTrace:
    """Alternating ownership segments between handoffs."""

    segments: tuple[Segment, ...]

    def __post_init__(self) -> None:
        for a, b in zip(self.segments, self.segments[1:]):
            if a.owner == b.owner:
                raise ValueError("segments must alternate owners; use SegmentedTrace.normalized")

    @classmethod
    def normalized(cls, segments: Iterable[Segment | tuple[str, int]]) -> "SegmentedTrace":
        """Merge consecutive same-owner segments and drop empty ones."""
        merged: list[Segment] = []
        for seg in segments:
            owner, tokens = (seg.owner, seg.tokens) if isinstance(seg, Segment) else seg
            if tokens == 0:
                continue
            if merged and merged[-1].owner == owner:
                merged[-1] = Segment(owner, merged[-1].tokens + tokens)
            else:
                merged.append(Segment(owner, tokens))
        return cls(tuple(merged))

    @classmethod
    def from_offload(
        cls, total_tokens: int, offload_fraction: float, span_count: int
    ) -> "SegmentedTrace":
        """Shorthand: spread the offloaded fraction over evenly placed spans."""
        if not 0.0 <= offload_fraction <= 1.0:
            raise ValueError("offload_fraction must lie in [0, 1]")
        if total_tokens < 0 or span_count < 0:
            raise ValueError("total_tokens and span_count must be nonnegative")
        offload = round(total_tokens * offload_fraction)
        if offload == 0 or span_count == 0:
            return cls.normalized([Segment(SMALL, total_tokens)] if total_tokens else [])
        if offload >= total_tokens:
            return cls.normalized([Segment(LARGE, total_tokens)])
        span_sizes = _even_partition(offload, span_count)
        gap_sizes = _even_partition(total_tokens - offload, span_count + 1)
        segments: list[tuple[str, int]] = []
        for i, span in enumerate(span_sizes):
            segments.append((SMALL, gap_sizes[i]))
            segments.append((LARGE, span))
        segments.append((SMALL, gap_sizes[-1]))
        return cls.normalized(segments)

    @property
    def small_tokens(self) -> int:
        return sum(s.tokens for s in self.segments if s.owner == SMALL)

    @property
    def large_tokens(self) -> int:
        return sum(s.tokens for s in self.segments if s.owner == LARGE)

    @property
    def handoff_count(self) -> int:
        return sum(1 for s in self.segments if s.owner == LARGE)


def _even_partition(total: int, parts: int) -> list[int]:
    """Split total into ``parts`` integers differing by at most one.

    Zero-size parts are allowed when total < parts; callers drop them.
    """
    base, extra = divmod(total, parts)
    return [base + (1 if i < extra else 0) for i in range(parts)]


PIPELINED = "pipelined"
NON_PIPELINED = "non-pipelined"


@dataclass(frozen=True)
class SimConfig:
    chunk_size: int = 64
    probe_cost_per_chunk: float | None = None  # None derives 1/decode_rate(small)
    include_handoff_residual: bool = True
    mode: str = PIPELINED
    cache_retention: bool = True  # False: re-prefill full context at every
    # handoff and controlling check (unoptimized prototype on a cache-less stack)

    def __post_init__(self) -> None:
        if self.chunk_size < 1:
            raise ValueError("chunk_size must be >= 1")
        if self.mode not in (PIPELINED, NON_PIPELINED):
            raise ValueError(f"mode must be pipelined or non-pipelined, got {self.mode!r}")
        if self.probe_cost_per_chunk is not None and self.probe_cost_per_chunk < 0:
            raise ValueError("probe_cost_per_chunk must be nonnegative")


@dataclass(frozen=True)
class SimResult:
    name: str
    total_seconds: float
    components: dict[str, float] = field(default_factory=dict)
    speedup_vs: dict[str, float] = field(default_factory=dict)

    def with_speedups(self, references: dict[str, "SimResult"]) -> "SimResult":
        ratios = {name: ref.total_seconds / self.total_seconds for name, ref in references.items()}
        return replace(self, speedup_vs=ratios)


def _finish(name: str, components: dict[str, float]) -> SimResult:
    return SimResult(name=name, total_seconds=math.fsum(components.values()), components=components)


def simulate_single_model(total_tokens: int, profile: ThroughputProfile) -> SimResult:
    """Pure decode-bound run: exact per-token sum of 1/decode_rate(context)."""
    if total_tokens < 0:
        raise ValueError("total_tokens must be nonnegative")
    if total_tokens == 0:
        seconds = 0.0
    elif profile.decode.constant is not None:
        seconds = total_tokens / profile.decode.constant
    else:
        contexts = np.arange(total_tokens)
        seconds = float(np.sum(1.0 / profile.decode(contexts)))
    return _finish(profile.model_name, {"decode": seconds})


def _probe_cost(config: SimConfig, small: ThroughputProfile, mid_context: float) -> float:
    if config.probe_cost_per_chunk is not None:
        return config.probe_cost_per_chunk
    return 1.0 / float(small.decode(mid_context))


def simulate_pipelined(
    trace: SegmentedTrace,
    small: ThroughputProfile,
    large: ThroughputProfile,
    config: SimConfig | None = None,
    name: str = "pipelined",
) -> SimResult:
    """Overlapped execution: streaming/controlling prefills hide behind the
    other model's decode; only the deficit, probe steps, and an optional
    per-handoff residual chunk are exposed.

    Segment rates use the segment's midpoint context (a few-percent
    approximation for piecewise profiles; exact for constant rates).
    """
    config = config or SimConfig()
    comp = {
        "small_decode": 0.0,
        "large_decode": 0.0,
        "exposed_prefill": 0.0,
        "probe_overhead": 0.0,
        "handoff_residual": 0.0,
    }
    position = 0
    segs = trace.segments
    for i, seg in enumerate(segs):
        mid = position + seg.tokens / 2.0
        followed_by_switch = i + 1 < len(segs)
        if seg.owner == SMALL:
            decode_cost = seg.tokens / float(small.decode(mid))
            comp["small_decode"] += decode_cost
            if followed_by_switch:
                full_prefill = seg.tokens / float(large.prefill(mid))
                exposed = max(0.0, full_prefill - decode_cost)
                comp["exposed_prefill"] += exposed
                if config.include_handoff_residual:
                    residual = min(config.chunk_size, seg.tokens) / float(large.prefill(mid))
                    comp["handoff_residual"] += min(residual, full_prefill - exposed)
        else:
            decode_cost = seg.tokens / float(large.decode(mid))
            comp["large_decode"] += decode_cost
            chunks = math.ceil(seg.tokens / config.chunk_size)
            comp["probe_overhead"] += chunks * _probe_cost(config, small, mid)
            if followed_by_switch:
                full_prefill = seg.tokens / float(small.prefill(mid))
                exposed = max(0.0, full_prefill - decode_cost)
                comp["exposed_prefill"] += exposed
                if config.include_handoff_residual:
                    residual = min(config.chunk_size, seg.tokens) / float(small.prefill(mid))
                    comp["handoff_residual"] += min(residual, full_prefill - exposed)
        position += seg.tokens
    return _finish(name, comp)


def simulate_nonpipelined(
    trace: SegmentedTrace,
    small: ThroughputProfile,
    large: ThroughputProfile,
    config: SimConfig | None = None,
    name: str = "non-pipelined",
) -> SimResult:
    """Serial execution: every prefill and probe check blocks decoding.

    With cache_retention (default) the idle model keeps its cache current
    across handoffs, so each handoff re-prefills only the newly decoded
    segment, the cheapest consistent serialization. Without retention, every
    large-model handoff and every controlling check on the small model
    re-prefills the full accumulated context, modeling an unoptimized
    prototype on a serving stack with no prefix cache.
    """
    config = config or SimConfig(mode=NON_PIPELINED)
    comp = {
        "small_decode": 0.0,
        "large_decode": 0.0,
        "probe_overhead": 0.0,
        "serialized_prefill": 0.0,
    }
    position = 0
    segs = trace.segments
    for i, seg in enumerate(segs):
        mid = position + seg.tokens / 2.0
        if seg.owner == SMALL:
            comp["small_decode"] += seg.tokens / float(small.decode(mid))
        else:
            comp["large_decode"] += seg.tokens / float(large.decode(mid))
            chunks = math.ceil(seg.tokens / config.chunk_size)
            comp["probe_overhead"] += chunks * _probe_cost(config, small, mid)
            if config.cache_retention:
                # Handoff in: the preceding small segment is what the large
                # model has not yet prefilled.
                if i > 0 and segs[i - 1].owner == SMALL:
                    prev = segs[i - 1]
                    prev_mid = position - prev.tokens / 2.0
                    comp["serialized_prefill"] += prev.tokens / float(large.prefill(prev_mid))
                # Handoff back: the small model catches up on the large output.
                if i + 1 < len(segs):
                    comp["serialized_prefill"] += seg.tokens / float(small.prefill(mid))
            else:
                # Full-context re-prefill by the large model at handoff.
                if position > 0:
                    comp["serialized_prefill"] += position / float(large.prefill(position / 2.0))
                # Each controlling check re-prefills the full context so far.
                for c in range(1, chunks + 1):
                    covered = position + min(c * config.chunk_size, seg.tokens)
                    comp["serialized_prefill"] += covered / float(small.prefill(covered / 2.0))
                # The small model resumes decode from a cold cache.
                if i + 1 < len(segs):
                    end = position + seg.tokens
                    comp["serialized_prefill"] += end / float(small.prefill(end / 2.0))
        position += seg.tokens
    return _finish(name, comp)


def simulate(
    trace: SegmentedTrace,
    small: ThroughputProfile,
    large: ThroughputProfile,
    config: SimConfig | None = None,
    name: str | None = None,
) -> SimResult:
    config = config or SimConfig()
    if config.mode == PIPELINED:
        return simulate_pipelined(trace, small, large, config, name or PIPELINED)
    return simulate_nonpipelined(trace, small, large, config, name or NON_PIPELINED)


def speedup_report(
    results: Sequence[SimResult], reference: SimResult
) -> list[tuple[str, float]]:
    """(name, reference_total / result_total) rows, ready for CSV emission."""
    if reference.total_seconds <= 0:
        raise ValueError("reference total must be positive")
    return [(r.name, reference.total_seconds / r.total_seconds) for r in results]
