"""One cooperative generation, end to end, on deterministic scripted models.

The small model decodes until it emits `<bigmodel>`; the large model (kept hot
by streaming prefills) takes over; the small model watches the large output
through controlling prefills and greedy probes, and takes control back by
emitting `</bigmodel>`. A second run shows the forced takeback that fires when
the close tag never comes within the per-span token budget.
"""

from tandem import (
    PolicyConfig,
    RunConfig,
    ScriptEntry,
    ScriptedBackend,
    coverage,
    run_cooperative,
    strip_tags,
    validate_trace,
)


def show(result, title):
    print(f"--- {title} ---")
    print(f"trace: {result.trace.text!r}")
    stripped = strip_tags(result.trace.text)
    for span in result.trace.spans:
        print(
            f"  span [{span.start},{span.end}) origin={span.origin.value} "
            f"tokens={span.token_estimate}: {stripped[span.start:span.end]!r}"
        )
    for h in result.handoff_log:
        print(f"  handoff {h.direction} at {h.offset} ({h.reason})")
    for t in result.timings:
        print(f"  {t.phase:>5} phase: {t.tokens} tokens in {t.seconds:.3f} simulated s")
    print(f"  coverage: {coverage(result.trace):.3f}")
    print(f"  well-formed: {validate_trace(result.trace.text).ok}\n")


# The small model opens an offload; the large model works until its output
# contains HARD-DONE, at which point the small model's next-word prediction
# becomes the close tag and it takes back control.
small = ScriptedBackend(
    entries=[
        ScriptEntry(turn=1, emission="<think>the setup is routine <bigmodel>", rate=150),
        ScriptEntry(
            context_contains="HARD-DONE",
            emission="</bigmodel> so we can finish </think><answer>42</answer>",
            rate=150,
        ),
    ],
    chunk_tokens=4,
)
large = ScriptedBackend(
    entries=[
        ScriptEntry(
            context_contains="<bigmodel>",
            emission="a careful derivation with many steps HARD-DONE",
            rate=15,
        )
    ],
    chunk_tokens=4,
)
result = run_cooperative(
    "What is 6 times 7?",
    small.new_session("small"),
    large.new_session("large"),
    RunConfig(chunk_size=4),
)
show(result, "probe-driven takeback")

# Same protocol, but the large model never triggers the close probe: after
# max_offload_tokens_per_span tokens the orchestrator injects the close tag.
small2 = ScriptedBackend(
    entries=[
        ScriptEntry(turn=1, emission="<think>here we go <bigmodel>", rate=150),
        ScriptEntry(
            context_contains="</bigmodel>",
            emission=" back in control </think><answer>7</answer>",
            rate=150,
        ),
    ],
    chunk_tokens=4,
)
large2 = ScriptedBackend(
    entries=[
        ScriptEntry(
            context_contains="<bigmodel>",
            emission=" ".join(f"word{i}" for i in range(40)),
            rate=15,
        )
    ],
    chunk_tokens=4,
)
result2 = run_cooperative(
    "Q?",
    small2.new_session("small"),
    large2.new_session("large"),
    RunConfig(chunk_size=4, max_offload_tokens_per_span=8),
)
show(result2, "forced takeback at the span budget")

# Content-blind random offloading: handoffs at planned token offsets.
small3 = ScriptedBackend(
    entries=[ScriptEntry(turn=1, emission=" ".join(f"s{i}" for i in range(60)))]
    + [
        ScriptEntry(turn=n, emission=" " + " ".join(f"s{n}_{i}" for i in range(60)))
        for n in range(2, 6)
    ],
    chunk_tokens=4,
)
large3 = ScriptedBackend(
    entries=[
        ScriptEntry(turn=n, emission=" " + " ".join(f"L{n}_{i}" for i in range(80)))
        for n in range(1, 6)
    ],
    chunk_tokens=4,
)
result3 = run_cooperative(
    "Q?",
    small3.new_session("small"),
    large3.new_session("large"),
    RunConfig(
        chunk_size=8,
        max_total_tokens=120,
        stop_on_answer_close=False,
        policy=PolicyConfig(kind="random-offload", p=0.3, seed=9, mean_span_tokens=15),
    ),
)
show(result3, "random-offload policy (seeded)")
