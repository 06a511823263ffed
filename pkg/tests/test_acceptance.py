"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the per-criterion
lines alongside the pytest report.
"""

import random
import time

import numpy as np
import pytest

from tandem import (
    ControlTags,
    HTTPBackend,
    MatchConfig,
    RunConfig,
    ScannerState,
    annotate_record,
    coverage_reward,
    extract_spans,
    fuzzy_match,
    random_offload_policy,
    run_cooperative,
    scan_chunk,
    scan_text,
    strip_tags,
    validate_trace,
)
from tandem.perfsim import (
    NON_PIPELINED,
    SegmentedTrace,
    SimConfig,
    ThroughputProfile,
    simulate_nonpipelined,
    simulate_pipelined,
    simulate_single_model,
)
from tandem.spans import SpanOrigin

from oracles import brute_force_best_window
from scenarios import SCENARIOS
from stubserver import StubServer
from test_orchestrator import run_scenario


def _report(name: str, body) -> None:
    try:
        body()
    except BaseException:
        print(f"\nACCEPTANCE {name}: FAIL")
        raise
    print(f"\nACCEPTANCE {name}: PASS")


# --------------------------------------------------------------------------- #


def test_coverage_reward_endpoints_and_linearity():
    """coverage_reward endpoints exact; 21 grid points vs closed form @1e-12."""

    def body():
        assert coverage_reward(0.0) == 0.0
        assert coverage_reward(0.4) == 1.0
        assert coverage_reward(1.0) == -1.0
        peak = 0.4
        for i in range(21):
            c = i / 20
            expected = c / peak if c <= peak else 1.0 - 2.0 * (c - peak) / (1.0 - peak)
            assert abs(coverage_reward(c, peak) - expected) <= 1e-12, (c, expected)

    _report("coverage-reward-endpoints", body)


def test_speedup_reproduction_at_measured_rates():
    """Two-rate speedups: 1.35%/no-overheads in [8.5, 9.1]; 5% across 5 spans
    with default overheads in [4, 7]."""

    def body():
        small = ThroughputProfile.constant("small-1.5b", 30_000, 150)
        large = ThroughputProfile.constant("large-32b", 2_500, 15)
        large_only = simulate_single_model(10_000, large)

        one_span = SegmentedTrace.from_offload(10_000, 0.0135, 1)
        no_overheads = SimConfig(probe_cost_per_chunk=0.0, include_handoff_residual=False)
        lean = simulate_pipelined(one_span, small, large, no_overheads)
        speedup = large_only.total_seconds / lean.total_seconds
        assert 8.5 <= speedup <= 9.1, speedup

        five_spans = SegmentedTrace.from_offload(10_000, 0.05, 5)
        loaded = simulate_pipelined(five_spans, small, large, SimConfig())
        speedup5 = large_only.total_seconds / loaded.total_seconds
        assert 4.0 <= speedup5 <= 7.0, speedup5

    _report("speedup-reproduction", body)


def test_fig4_calibration_band():
    """Calibrate tokens so small-only = 683 s; 5.54% offload lands within
    +-25% of 918 s pipelined and +-35% of 1805 s non-pipelined."""

    def body():
        small = ThroughputProfile.constant("small-1.5b", 30_000, 150)
        large = ThroughputProfile.constant("large-32b", 2_500, 15)
        total_tokens = int(683 * 150)
        assert simulate_single_model(total_tokens, small).total_seconds == pytest.approx(
            683, rel=1e-6
        )
        trace = SegmentedTrace.from_offload(total_tokens, 0.0554, 10)

        pipelined = simulate_pipelined(trace, small, large, SimConfig())
        assert 918 * 0.75 <= pipelined.total_seconds <= 918 * 1.25, pipelined.total_seconds

        nonpipelined = simulate_nonpipelined(
            trace, small, large, SimConfig(mode=NON_PIPELINED, cache_retention=False)
        )
        assert 1805 * 0.65 <= nonpipelined.total_seconds <= 1805 * 1.35, (
            nonpipelined.total_seconds
        )

    _report("fig4-calibration-band", body)


def test_protocol_determinism_and_exactness():
    """>=10 scripted scenarios reproduce frozen traces byte-exactly twice over;
    large-decoded characters equal the union of recorded spans."""

    def body():
        assert len(SCENARIOS) >= 10
        names = {s.name for s in SCENARIOS}
        for required in ("no-offload", "single-span", "forced-takeback", "split-tag-chunks"):
            assert required in names
        assert any("spans" in n for n in names)  # multi-span coverage
        started = time.monotonic()
        for scenario in SCENARIOS:
            first = run_scenario(scenario)
            second = run_scenario(scenario)
            assert first.trace.text == scenario.expected_text, scenario.name
            assert first.to_dict() == second.to_dict(), scenario.name
            stripped = strip_tags(first.trace.text)
            union = "".join(stripped[s.start : s.end] for s in first.trace.spans)
            assert union == scenario.expected_large_union, scenario.name
        assert time.monotonic() - started < 5.0

    _report("protocol-determinism", body)


def test_scanner_chunking_invariance_1000_texts():
    """Streamed tag events equal whole-text events for 1000 random texts and
    random chunkings."""

    def body():
        tags = ControlTags()
        rng = random.Random(424242)
        pieces = [
            "<bigmodel>", "</bigmodel>", "<big", "model>", "</bi", "gmodel>",
            "<", ">", "/", "a", "b ", "think", "<think>", " ",
        ]
        started = time.monotonic()
        for _ in range(1000):
            text = "".join(rng.choice(pieces) for _ in range(rng.randint(0, 40)))
            whole = scan_text(text, tags)
            state = ScannerState()
            streamed = []
            i = 0
            while i < len(text):
                step = rng.randint(1, 9)
                state, events = scan_chunk(state, text[i : i + step], tags)
                streamed.extend(events)
                i += step
            assert streamed == whole, repr(text)
        assert time.monotonic() - started < 10.0

    _report("scanner-chunking-invariance", body)


WORDS = (
    "solve integral derive factor expand bound compare verify simplify guess "
    "substitute estimate check compute reduce combine transform observe conclude repeat"
).split()


def _make_trace(rng: random.Random, n_words: int) -> str:
    return " ".join(rng.choice(WORDS) for _ in range(n_words))


def _mutate(rng: random.Random, text: str, rate: float) -> str:
    chars = list(text)
    for _ in range(int(len(chars) * rate)):
        op = rng.choice("sdi")
        pos = rng.randrange(len(chars)) if chars else 0
        if op == "s" and chars:
            chars[pos] = rng.choice("abcdefghij ")
        elif op == "d" and chars:
            del chars[pos]
        else:
            chars.insert(pos, rng.choice("abcdefghij "))
    return "".join(chars)


def test_fuzzy_match_oracle_equivalence_200_traces():
    """fuzzy_match equals the exhaustive all-windows scorer on window and score
    for 200 random traces (<=2000 chars) with up to 10% character noise."""

    def body():
        rng = random.Random(20250810)
        config = MatchConfig(similarity_threshold=0.0001)
        started = time.monotonic()
        checked = 0
        for _ in range(200):
            trace = _make_trace(rng, rng.randint(35, 95))
            assert len(trace) <= 2000
            start = rng.randrange(max(1, len(trace) - 40))
            snippet = _mutate(
                rng, trace[start : start + rng.randint(18, 32)], rng.uniform(0, 0.10)
            )
            if not snippet.strip():
                continue
            got = fuzzy_match(trace, snippet, config)
            oracle = brute_force_best_window(trace, snippet)
            assert got is not None and oracle is not None
            span, similarity = got
            assert (span.start, span.end) == (oracle[0], oracle[1]), (snippet, trace)
            assert abs(similarity - oracle[2]) <= 1e-12
            checked += 1
        # Spot checks near the stated trace-length ceiling.
        for _ in range(4):
            trace = _make_trace(rng, 220)
            assert len(trace) <= 2000
            start = rng.randrange(len(trace) - 50)
            snippet = _mutate(rng, trace[start : start + 40], 0.08)
            got = fuzzy_match(trace, snippet, config)
            oracle = brute_force_best_window(trace, snippet)
            span, similarity = got
            assert (span.start, span.end) == (oracle[0], oracle[1])
            assert abs(similarity - oracle[2]) <= 1e-12
            checked += 1
        assert checked >= 195
        assert time.monotonic() - started < 60.0

    _report("fuzzy-oracle-equivalence", body)


def test_annotation_round_trip():
    """Stripping tags from annotated_text reproduces the trace byte-exactly and
    extraction equals matched_spans, for every fixture record."""

    def body():
        rng = random.Random(7)
        started = time.monotonic()
        for _ in range(60):
            trace = _make_trace(rng, rng.randint(30, 90))
            snippets = []
            for _ in range(rng.randint(1, 3)):
                start = rng.randrange(max(1, len(trace) - 30))
                snippets.append(trace[start : start + rng.randint(10, 25)])
            record = annotate_record(
                "q", trace, snippets, MatchConfig(max_total_fraction=0.9)
            )
            assert strip_tags(record.annotated_text) == trace
            extracted = extract_spans(record.annotated_text, origin=SpanOrigin.ANNOTATED)
            assert extracted == list(record.matched_spans)
        assert time.monotonic() - started < 5.0

    _report("annotation-round-trip", body)


def test_random_policy_coverage_grid():
    """Mean planned offload fraction over 100 seeds within +-0.02 of p for
    p in {0.05, 0.10, 0.25, 0.50, 0.75}."""

    def body():
        started = time.monotonic()
        for p in (0.05, 0.10, 0.25, 0.50, 0.75):
            fractions = [
                sum(s.token_estimate for s in random_offload_policy(10_000, p, seed, 200))
                / 10_000
                for seed in range(100)
            ]
            mean = float(np.mean(fractions))
            assert abs(mean - p) <= 0.02, (p, mean)
        assert time.monotonic() - started < 10.0

    _report("random-policy-coverage", body)


def test_desk_scale_statement_and_http_end_to_end():
    """Full-scale LLM accuracy reproduction is out of scope at desk scale; in
    its place, a cooperative run executes end to end against a local stub
    server speaking the OpenAI-compatible completions protocol."""

    def body():
        question = "What is 3x7?"
        marker = "LARGE-DONE"

        def small_behavior(payload):
            prompt = payload["prompt"]
            if payload.get("stream"):
                if marker in prompt:
                    return "</bigmodel> wrap up </think><answer>21</answer>"
                return "<think>start here <bigmodel>"
            # probe: greedy single-token lookahead
            if marker in prompt:
                return "</bigmodel> next"
            return "keep going"

        def large_behavior(payload):
            return "crunch numbers LARGE-DONE plus overshoot words"

        with StubServer(small_behavior) as small_server, StubServer(
            large_behavior
        ) as large_server:
            small = HTTPBackend(base_url=small_server.url, model="small-http").new_session(
                "small"
            )
            large = HTTPBackend(base_url=large_server.url, model="large-http").new_session(
                "large"
            )
            try:
                result = run_cooperative(
                    question, small, large, RunConfig(chunk_size=2, probe_tokens=2)
                )
            finally:
                small.close()
                large.close()
        assert result.error is None
        expected = (
            "<think>start here <bigmodel>crunch numbers LARGE-DONE plus</bigmodel>"
            " wrap up </think><answer>21</answer>"
        )
        assert result.trace.text == expected
        validation = validate_trace(result.trace.text)
        assert validation.ok
        assert len(result.trace.spans) == 1
        stripped = strip_tags(result.trace.text)
        span = result.trace.spans[0]
        assert stripped[span.start : span.end] == "crunch numbers LARGE-DONE plus"
        print(
            "\nNOTE: full-scale benchmark accuracies (the 17.3% -> "
            "44.0/45.3/45.6% gains this scheme targets) require full-scale "
            "LLMs and are out of scope at desk scale; the property suites "
            "plus this scripted HTTP end-to-end run stand in for them."
        )

    _report("desk-scale-e2e", body)
