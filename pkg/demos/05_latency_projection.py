"""How much does offloading cost, and how much does pipelining save?

Profiles use the measured two-model rates (decode 150 vs 15 tokens/s, prefill
30,000 vs 2,500 tokens/s): large-model decode is the only slow lane, so a
small offload fraction preserves most of the small model's speed.
"""

from tandem.perfsim import (
    NON_PIPELINED,
    SegmentedTrace,
    SimConfig,
    ThroughputProfile,
    simulate_nonpipelined,
    simulate_pipelined,
    simulate_single_model,
)

small = ThroughputProfile.constant("small-1.5b", 30_000, 150)
large = ThroughputProfile.constant("large-32b", 2_500, 15)
total_tokens = 10_000

small_only = simulate_single_model(total_tokens, small)
large_only = simulate_single_model(total_tokens, large)
print(f"baselines over {total_tokens} tokens: "
      f"small-only {small_only.total_seconds:.1f}s, "
      f"large-only {large_only.total_seconds:.1f}s\n")

print("pipelined totals and speedups vs the large model:")
print(f"  {'offload':>8} {'spans':>6} {'total s':>9} {'speedup':>8}")
for fraction, spans in [(0.0, 0), (0.0135, 1), (0.05, 5), (0.10, 8), (0.25, 12), (1.0, 1)]:
    trace = SegmentedTrace.from_offload(total_tokens, fraction, spans or 1)
    result = simulate_pipelined(trace, small, large, SimConfig())
    ratio = large_only.total_seconds / result.total_seconds
    print(f"  {fraction:>8.2%} {trace.handoff_count:>6} "
          f"{result.total_seconds:>9.1f} {ratio:>7.1f}x")

print("\npipelined vs non-pipelined at 5.54% offload across 10 spans,")
print("calibrated so the small-only baseline is 683 s:")
calibrated = int(683 * 150)
trace = SegmentedTrace.from_offload(calibrated, 0.0554, 10)
pipe = simulate_pipelined(trace, small, large, SimConfig())
serial_cached = simulate_nonpipelined(trace, small, large, SimConfig(mode=NON_PIPELINED))
serial_cold = simulate_nonpipelined(
    trace, small, large, SimConfig(mode=NON_PIPELINED, cache_retention=False)
)
for name, result in [
    ("pipelined", pipe),
    ("serial, caches retained", serial_cached),
    ("serial, cold re-prefill", serial_cold),
]:
    parts = ", ".join(f"{k}={v:.1f}" for k, v in result.components.items() if v)
    print(f"  {name:<26} {result.total_seconds:>8.1f} s   ({parts})")

print("\nthe cold-re-prefill column is what an unoptimized prototype pays when")
print("every handoff and every controlling check reprocesses the full context.")
