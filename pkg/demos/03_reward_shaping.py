"""The scalar reward that teaches a model to offload well.

Three equally weighted components: answer accuracy, scaffold/tag formatting,
and a tag-count term whose coverage piece peaks at 40% offload and punishes
both hoarding (never offloading) and dumping (offloading everything).
"""

from tandem import coverage_reward, total_reward

print("coverage shaping term (peak at 0.4):\n")
print("  c      reward")
for i in range(11):
    c = i / 10
    r = coverage_reward(c)
    bar = "#" * int((r + 1) * 20)
    print(f"  {c:.1f}  {r:+.2f}  {bar}")

samples = [
    (
        "ideal: right answer, clean scaffold, 40% offloaded",
        "<think>one two three <bigmodel>alpha beta gamma delta</bigmodel>"
        " four five six</think><answer>42</answer>",
    ),
    (
        "right answer but no offloading at all",
        "<think>one two three four five six</think><answer>42</answer>",
    ),
    (
        "unclosed offload region",
        "<think>one <bigmodel>two three</think><answer>42</answer>",
    ),
    (
        "offloaded nearly everything",
        "<think><bigmodel>one two three four five six seven eight nine</bigmodel>"
        " ten</think><answer>42</answer>",
    ),
    ("wrong answer, good structure", "<think>one two</think><answer>41</answer>"),
    ("empty completion", ""),
]

print("\nper-completion breakdowns (gold answer: 42):\n")
header = f"  {'case':<48} {'acc':>4} {'fmt':>4} {'tags':>6} {'cov':>6} {'total':>6}"
print(header)
print("  " + "-" * (len(header) - 2))
for label, completion in samples:
    b = total_reward(completion, "42")
    print(
        f"  {label:<48} {b.accuracy:>4.1f} {b.format:>4.1f} "
        f"{b.tag_count:>6.2f} {b.coverage_term:>6.2f} {b.total:>6.2f}"
    )

print(
    "\nthe mismatch penalty and the coverage slope are what make lazy or "
    "runaway offloading lose reward even when the answer is right."
)
