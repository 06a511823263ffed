"""Scripted replay scenarios: each builds fresh backends and carries the
hand-derived expected trace, so runs can be checked byte-exactly.

``expected_large_union`` is the exact text the large backend decoded into the
trace; provenance tests compare it against the union of recorded spans.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

from tandem import PolicyConfig, RunConfig, ScriptedBackend, ScriptEntry


@dataclass
class Scenario:
    name: str
    question: str
    make_small: Callable[[], ScriptedBackend]
    make_large: Callable[[], ScriptedBackend | None]
    config: RunConfig
    expected_text: str
    expected_large_union: str
    expected_origins: tuple[str, ...] = ()
    expect_valid: bool = True


def _backend(entries, **kwargs) -> Callable[[], ScriptedBackend]:
    return lambda: ScriptedBackend(entries=list(entries), **kwargs)


SCENARIOS: list[Scenario] = []


def _add(scenario: Scenario) -> None:
    SCENARIOS.append(scenario)


# 1. No offload: the small model handles everything; the large model only
#    receives streaming prefills.
_add(
    Scenario(
        name="no-offload",
        question="What is 2+2?",
        make_small=_backend(
            [ScriptEntry(turn=1, emission="<think>two plus two is four</think><answer>4</answer>")],
            chunk_tokens=3,
        ),
        make_large=_backend([], chunk_tokens=3),
        config=RunConfig(chunk_size=4),
        expected_text="<think>two plus two is four</think><answer>4</answer>",
        expected_large_union="",
        expected_origins=(),
    )
)

# 2. Single mid-trace span, takeback via the controlling-prefill probe.
_add(
    Scenario(
        name="single-span",
        question="What is 6x7?",
        make_small=_backend(
            [
                ScriptEntry(turn=1, emission="<think>step one is easy <bigmodel>"),
                ScriptEntry(
                    context_contains="HARD-DONE",
                    emission="</bigmodel> so the result is clear </think><answer>42</answer>",
                ),
            ],
            chunk_tokens=3,
        ),
        make_large=_backend(
            [
                ScriptEntry(
                    context_contains="<bigmodel>",
                    emission="deep derivation alpha beta gamma HARD-DONE",
                )
            ],
            chunk_tokens=3,
        ),
        config=RunConfig(chunk_size=4, max_offload_tokens_per_span=64),
        expected_text=(
            "<think>step one is easy <bigmodel>deep derivation alpha beta gamma "
            "HARD-DONE</bigmodel> so the result is clear </think><answer>42</answer>"
        ),
        expected_large_union="deep derivation alpha beta gamma HARD-DONE",
        expected_origins=("emitted",),
    )
)

# 3. Two spans with distinct context triggers.
_add(
    Scenario(
        name="two-spans",
        question="Q?",
        make_small=_backend(
            [
                ScriptEntry(turn=1, emission="<think>part one <bigmodel>"),
                ScriptEntry(context_contains="ONE-DONE", emission="</bigmodel> middle part <bigmodel>"),
                ScriptEntry(
                    context_contains="TWO-DONE",
                    emission="</bigmodel> final part </think><answer>7</answer>",
                ),
            ],
            chunk_tokens=3,
        ),
        make_large=_backend(
            [
                ScriptEntry(context_contains="<bigmodel>", emission="alpha beta ONE-DONE"),
                ScriptEntry(context_contains="middle part", emission="gamma delta TWO-DONE"),
            ],
            chunk_tokens=3,
        ),
        config=RunConfig(chunk_size=4),
        expected_text=(
            "<think>part one <bigmodel>alpha beta ONE-DONE</bigmodel> middle part "
            "<bigmodel>gamma delta TWO-DONE</bigmodel> final part </think><answer>7</answer>"
        ),
        expected_large_union="alpha beta ONE-DONE" + "gamma delta TWO-DONE",
        expected_origins=("emitted", "emitted"),
    )
)

# 4. Three spans of assorted sizes.
_add(
    Scenario(
        name="three-spans",
        question="Q?",
        make_small=_backend(
            [
                ScriptEntry(turn=1, emission="<think>s1 <bigmodel>"),
                ScriptEntry(context_contains="A-END", emission="</bigmodel> s2 <bigmodel>"),
                ScriptEntry(context_contains="B-END", emission="</bigmodel> s3 <bigmodel>"),
                ScriptEntry(
                    context_contains="C-END",
                    emission="</bigmodel> s4 </think><answer>1</answer>",
                ),
            ],
            chunk_tokens=3,
        ),
        make_large=_backend(
            [
                ScriptEntry(context_contains="<bigmodel>", emission="a1 A-END"),
                ScriptEntry(context_contains="s2", emission="b1 b2 b3 b4 B-END"),
                ScriptEntry(context_contains="s3", emission="c1 C-END"),
            ],
            chunk_tokens=3,
        ),
        config=RunConfig(chunk_size=4),
        expected_text=(
            "<think>s1 <bigmodel>a1 A-END</bigmodel> s2 <bigmodel>b1 b2 b3 b4 B-END"
            "</bigmodel> s3 <bigmodel>c1 C-END</bigmodel> s4 </think><answer>1</answer>"
        ),
        expected_large_union="a1 A-END" + "b1 b2 b3 b4 B-END" + "c1 C-END",
        expected_origins=("emitted", "emitted", "emitted"),
    )
)

# 5. Forced takeback: the probe never confirms, the per-span budget fires.
_add(
    Scenario(
        name="forced-takeback",
        question="Q?",
        make_small=_backend(
            [
                ScriptEntry(turn=1, emission="<think>easy part <bigmodel>"),
                ScriptEntry(
                    context_contains="</bigmodel>",
                    emission=" resuming after force </think><answer>7</answer>",
                ),
            ],
            chunk_tokens=3,
        ),
        make_large=_backend(
            [
                ScriptEntry(
                    context_contains="<bigmodel>",
                    emission="w1 w2 w3 w4 w5 w6 w7 w8 w9 w10 w11 w12",
                )
            ],
            chunk_tokens=3,
        ),
        config=RunConfig(chunk_size=4, max_offload_tokens_per_span=6),
        expected_text=(
            "<think>easy part <bigmodel>w1 w2 w3 w4 w5 w6</bigmodel>"
            " resuming after force </think><answer>7</answer>"
        ),
        expected_large_union="w1 w2 w3 w4 w5 w6",
        expected_origins=("forced-takeback",),
    )
)

# 6. Tags split across stream chunks: five-character chunks slice the open
#    tag, the close tag, and the answer tag mid-literal.
_add(
    Scenario(
        name="split-tag-chunks",
        question="Q?",
        make_small=_backend(
            [
                ScriptEntry(turn=1, emission="<think>ab <bigmodel>"),
                ScriptEntry(
                    context_contains="SPLIT-DONE",
                    emission="</bigmodel> tail</think><answer>3</answer>",
                ),
            ],
            chunk_chars=5,
        ),
        make_large=_backend(
            [ScriptEntry(context_contains="<bigmodel>", emission="mid words here SPLIT-DONE")],
            chunk_chars=7,
        ),
        config=RunConfig(chunk_size=4),
        expected_text=(
            "<think>ab <bigmodel>mid words here SPLIT-DONE</bigmodel>"
            " tail</think><answer>3</answer>"
        ),
        expected_large_union="mid words here SPLIT-DONE",
        expected_origins=("emitted",),
    )
)

# 7. The large model emits the close tag itself (stop-sequence halting);
#    its overshoot past the tag is discarded.
_add(
    Scenario(
        name="large-emits-close",
        question="Q?",
        make_small=_backend(
            [
                ScriptEntry(turn=1, emission="<think>lead in <bigmodel>"),
                ScriptEntry(
                    context_contains="</bigmodel>",
                    emission=" concluding </think><answer>5</answer>",
                ),
            ],
            chunk_tokens=3,
        ),
        make_large=_backend(
            [
                ScriptEntry(
                    context_contains="<bigmodel>",
                    emission="heavy stuff done</bigmodel> overquota text",
                )
            ],
            chunk_tokens=3,
        ),
        config=RunConfig(chunk_size=4),
        expected_text=(
            "<think>lead in <bigmodel>heavy stuff done</bigmodel>"
            " concluding </think><answer>5</answer>"
        ),
        expected_large_union="heavy stuff done",
        expected_origins=("emitted",),
    )
)

# 8. Offload region opens at the very start of generation.
_add(
    Scenario(
        name="span-at-start",
        question="Q?",
        make_small=_backend(
            [
                ScriptEntry(turn=1, emission="<think><bigmodel>"),
                ScriptEntry(
                    context_contains="START-DONE",
                    emission="</bigmodel> easy rest</think><answer>8</answer>",
                ),
            ],
            chunk_tokens=3,
        ),
        make_large=_backend(
            [ScriptEntry(context_contains="<bigmodel>", emission="opening gambit START-DONE")],
            chunk_tokens=3,
        ),
        config=RunConfig(chunk_size=4),
        expected_text=(
            "<think><bigmodel>opening gambit START-DONE</bigmodel>"
            " easy rest</think><answer>8</answer>"
        ),
        expected_large_union="opening gambit START-DONE",
        expected_origins=("emitted",),
    )
)

# 9. Text after the answer close is discarded.
_add(
    Scenario(
        name="answer-stop-discard",
        question="Q?",
        make_small=_backend(
            [
                ScriptEntry(
                    turn=1,
                    emission="<think>only easy</think><answer>11</answer> trailing junk beyond",
                )
            ],
            chunk_tokens=3,
        ),
        make_large=_backend([], chunk_tokens=3),
        config=RunConfig(chunk_size=4),
        expected_text="<think>only easy</think><answer>11</answer>",
        expected_large_union="",
        expected_origins=(),
    )
)

# 10. The total token budget truncates generation mid-scaffold.
_add(
    Scenario(
        name="total-budget-cut",
        question="Q?",
        make_small=_backend(
            [
                ScriptEntry(
                    turn=1,
                    emission="<think>one two three four five six seven eight nine ten",
                )
            ],
            chunk_tokens=3,
        ),
        make_large=_backend([], chunk_tokens=3),
        config=RunConfig(chunk_size=4, max_total_tokens=5),
        expected_text="<think>one two three four five",
        expected_large_union="",
        expected_origins=(),
        expect_valid=False,  # truncation leaves the scaffold unfinished
    )
)

# 11. never-offload ignores emitted tags: the trace equals the small model's
#     own full output.
_add(
    Scenario(
        name="never-offload",
        question="Q?",
        make_small=_backend(
            [
                ScriptEntry(
                    turn=1,
                    emission="<think>alpha <bigmodel>beta</bigmodel> gamma</think><answer>6</answer>",
                )
            ],
            chunk_tokens=3,
        ),
        make_large=lambda: None,
        config=RunConfig(chunk_size=4, policy=PolicyConfig(kind="never-offload")),
        expected_text="<think>alpha <bigmodel>beta</bigmodel> gamma</think><answer>6</answer>",
        expected_large_union="",
        expected_origins=(),
    )
)

# 12. Random-offload replay: plan for (budget=40, p=0.5, seed=3, mean=8) is
#     [(0,3), (14,32), (35,37)]; the run realizes it exactly.
_add(
    Scenario(
        name="random-offload",
        question="Q?",
        make_small=_backend(
            [ScriptEntry(turn=1, emission=" ".join(f"s1{c}" for c in "abcdefghijklmno"))]
            + [
                ScriptEntry(
                    turn=n, emission=" " + " ".join(f"s{n}{c}" for c in "abcdefghijklmno")
                )
                for n in range(2, 7)
            ],
            chunk_tokens=3,
        ),
        make_large=_backend(
            [
                ScriptEntry(
                    turn=n, emission=" " + " ".join(f"L{n}{c}" for c in "abcdefghijklmnopqrst")
                )
                for n in range(1, 7)
            ],
            chunk_tokens=3,
        ),
        config=RunConfig(
            chunk_size=4,
            max_total_tokens=40,
            stop_on_answer_close=False,
            policy=PolicyConfig(kind="random-offload", p=0.5, seed=3, mean_span_tokens=8),
        ),
        expected_text=(
            "<bigmodel> L1a L1b L1c</bigmodel> s2a s2b s2c s2d s2e s2f s2g s2h s2i s2j s2k"
            "<bigmodel> L2a L2b L2c L2d L2e L2f L2g L2h L2i L2j L2k L2l L2m L2n L2o L2p L2q L2r"
            "</bigmodel> s3a s3b s3c<bigmodel> L3a L3b</bigmodel> s4a s4b s4c"
        ),
        expected_large_union=(
            " L1a L1b L1c"
            " L2a L2b L2c L2d L2e L2f L2g L2h L2i L2j L2k L2l L2m L2n L2o L2p L2q L2r"
            " L3a L3b"
        ),
        expected_origins=("random-policy", "random-policy", "random-policy"),
        expect_valid=False,  # no think/answer scaffold in this fixture
    )
)
