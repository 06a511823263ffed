"""Building training data: locate annotator snippets in a trace by fuzzy
matching, wrap them in control tags, and summarize the corpus.

The annotator returns snippet texts, not offsets, and it often paraphrases
slightly; the matcher finds the best window by normalized edit distance over
windows within 20% of the snippet length.
"""

import random

from tandem import (
    MatchConfig,
    ScriptEntry,
    ScriptedBackend,
    annotate_record,
    dataset_stats,
    fuzzy_match,
    request_snippets,
    strip_tags,
)

trace = (
    "First restate the problem in simpler terms. Then notice the symmetry "
    "between the two cases. The crucial step is bounding the remainder by a "
    "geometric series whose ratio is less than one half. After that bound is "
    "in place, summing the series and checking the base case finishes it."
)

# A scripted annotator that answers with delimited snippets, one of them
# slightly paraphrased relative to the trace.
annotator = ScriptedBackend(
    entries=[
        ScriptEntry(
            turn=1,
            emission=(
                "<snippet>bounding the remainder by a geometric serie whose ratio"
                "</snippet><snippet>summing the series and checking the base case"
                "</snippet>"
            ),
        )
    ]
)
session = annotator.new_session("annotator")
snippets = request_snippets(
    trace, session, "Mark the hardest ~20% of this trace with snippets:\n{trace}"
)
print("annotator snippets:")
for s in snippets:
    print(f"  {s!r}")

print("\nfuzzy matches:")
for s in snippets:
    span, similarity = fuzzy_match(trace, s, MatchConfig(similarity_threshold=0.7))
    print(f"  similarity {similarity:.3f} at [{span.start},{span.end}): "
          f"{trace[span.start:span.end]!r}")

record = annotate_record("prove the bound", trace, snippets, MatchConfig(max_total_fraction=0.5))
print(f"\nannotated text:\n  {record.annotated_text}")
print(f"\nstatus: {record.status.value}, offload fraction {record.offload_fraction:.2f}")
print(f"strip round-trip exact: {strip_tags(record.annotated_text) == trace}")

# Corpus-level statistics over synthetic records with known span placement.
rng = random.Random(1)
words = [f"w{i}" for i in range(120)]
records = []
for _ in range(200):
    body = " ".join(words)
    start = rng.randrange(10, 90)
    snippet = " ".join(words[start : start + 18])
    records.append(annotate_record("q", body, [snippet]))
stats = dataset_stats(records)
print("\nspan midpoint histogram over the corpus (20 bins):")
peak = max(stats.position_histogram) or 1.0
for i, mass in enumerate(stats.position_histogram):
    lo, hi = stats.bin_edges[i], stats.bin_edges[i + 1]
    print(f"  [{lo:.2f},{hi:.2f}) {'#' * int(40 * mass / peak):<40} {mass:.3f}")
print(f"status counts: {stats.status_counts}")
