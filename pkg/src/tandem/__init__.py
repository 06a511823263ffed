"""tandem: two-model cooperative text generation with control-tag offload.

A small model decodes and controls; a large model takes over inside tagged
offload regions. The package also ships the annotation pipeline that builds
training data for the scheme, the scalar reward used to refine it, and an
analytical latency simulator for the cooperative execution modes.
"""

from .annotate import (
    AnnotationFormatError,
    AnnotationRecord,
    MatchConfig,
    Normalization,
    RecordStatus,
    StatsSummary,
    annotate_record,
    dataset_stats,
    fuzzy_match,
    parse_snippets,
    request_snippets,
)
from .backends import (
    AmbiguousScriptError,
    BackendError,
    BackendSession,
    CompletionRequest,
    ContextDivergenceError,
    HTTPBackend,
    ProbeUnsupportedError,
    ResumableStreamError,
    ScriptedBackend,
    ScriptEntry,
    StreamChunk,
    load_script,
)
from .orchestrator import (
    ControlDecision,
    GenerationResult,
    HandoffRecord,
    OrchestrationError,
    PhaseTiming,
    PolicyConfig,
    RunConfig,
    controlling_prefill_cycle,
    random_offload_policy,
    result_from_dict,
    run_cooperative,
)
from .perfsim import (
    RateCurve,
    Segment,
    SegmentedTrace,
    SimConfig,
    SimResult,
    ThroughputProfile,
    load_profile,
    simulate,
    simulate_nonpipelined,
    simulate_pipelined,
    simulate_single_model,
    speedup_report,
)
from .protocol import (
    ActionKind,
    EventKind,
    IllegalReason,
    Phase,
    ProtocolError,
    ProtocolEvent,
    ProtocolState,
    TraceValidation,
    spend_budget,
    step,
    validate_trace,
)
from .reward import (
    RewardBreakdown,
    RewardConfig,
    accuracy_reward,
    coverage_reward,
    format_reward,
    offload_coverage,
    tag_count_reward,
    total_reward,
)
from .spans import (
    GenerationTrace,
    OffloadSpan,
    SpanExtractionError,
    SpanOrigin,
    TokenCounting,
    count_tokens,
    coverage,
    extract_spans,
    merge_spans,
    strip_tags,
    wrap_spans,
)
from .tags import ControlTags, ScannerState, TagEvent, TagKind, scan_chunk, scan_text

__version__ = "0.1.0"

__all__ = [
    "AnnotationFormatError",
    "AnnotationRecord",
    "AmbiguousScriptError",
    "ActionKind",
    "BackendError",
    "BackendSession",
    "CompletionRequest",
    "ContextDivergenceError",
    "ControlDecision",
    "ControlTags",
    "EventKind",
    "GenerationResult",
    "GenerationTrace",
    "HTTPBackend",
    "HandoffRecord",
    "IllegalReason",
    "MatchConfig",
    "Normalization",
    "OffloadSpan",
    "OrchestrationError",
    "Phase",
    "PhaseTiming",
    "PolicyConfig",
    "ProbeUnsupportedError",
    "ProtocolError",
    "ProtocolEvent",
    "ProtocolState",
    "RateCurve",
    "RecordStatus",
    "ResumableStreamError",
    "RewardBreakdown",
    "RewardConfig",
    "RunConfig",
    "ScannerState",
    "ScriptEntry",
    "ScriptedBackend",
    "Segment",
    "SegmentedTrace",
    "SimConfig",
    "SimResult",
    "SpanExtractionError",
    "SpanOrigin",
    "StatsSummary",
    "StreamChunk",
    "TagEvent",
    "TagKind",
    "ThroughputProfile",
    "TokenCounting",
    "TraceValidation",
    "accuracy_reward",
    "annotate_record",
    "controlling_prefill_cycle",
    "count_tokens",
    "coverage",
    "coverage_reward",
    "dataset_stats",
    "extract_spans",
    "format_reward",
    "fuzzy_match",
    "load_profile",
    "load_script",
    "merge_spans",
    "offload_coverage",
    "parse_snippets",
    "random_offload_policy",
    "request_snippets",
    "result_from_dict",
    "reward",
    "run_cooperative",
    "scan_chunk",
    "scan_text",
    "simulate",
    "simulate_nonpipelined",
    "simulate_pipelined",
    "simulate_single_model",
    "spend_budget",
    "speedup_report",
    "step",
    "strip_tags",
    "tag_count_reward",
    "total_reward",
    "validate_trace",
    "wrap_spans",
]
