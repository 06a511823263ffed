"""Drive every CLI subcommand against the bundled assets.

Everything is scripted and seeded, so repeated invocations reproduce the same
bytes; outputs land in demos/assets/out/.
"""

import json
from pathlib import Path

from tandem.cli import main

ASSETS = Path(__file__).parent / "assets"
CONFIG = str(ASSETS / "config.json")
OUT = ASSETS / "out"


def show_jsonl(path: Path, fields: list[str]) -> None:
    for line in path.read_text().splitlines():
        record = json.loads(line)
        print("   ", {k: record.get(k) for k in fields})


print("== tandem run ==")
main(["run", "--config", CONFIG, "--questions", str(ASSETS / "questions.jsonl")])
show_jsonl(OUT / "runs.jsonl", ["id", "handoff_count", "small_tokens", "large_tokens"])

print("\n== tandem reward ==")
main(["reward", "--config", CONFIG, "--completions", str(ASSETS / "completions.jsonl")])
show_jsonl(OUT / "rewards.jsonl", ["id", "accuracy", "format", "tag_count", "total"])

print("\n== tandem annotate ==")
main(["annotate", "--config", CONFIG, "--corpus", str(ASSETS / "corpus.jsonl")])
show_jsonl(OUT / "annotations.jsonl", ["status", "offload_fraction"])

print("\n== tandem simulate ==")
main(["simulate", "--config", CONFIG, "--scenarios", str(ASSETS / "scenarios.json")])
print((OUT / "sim_speedup.csv").read_text())

print("== tandem trace-plotdata ==")
main(
    [
        "trace-plotdata",
        "--runs",
        str(OUT / "runs.jsonl"),
        "--bins",
        "20",
        "--out",
        str(OUT),
    ]
)
print("   offloaded bins per run:")
rows = (OUT / "trace_raster.csv").read_text().splitlines()[1:]
for run_id in ("q1", "q2"):
    bins = [r.split(",")[1] for r in rows if r.startswith(run_id + ",") and r.split(",")[2] == "1"]
    legal = all(r.split(",")[3] == "1" for r in rows if r.startswith(run_id + ","))
    print(f"    {run_id}: offloaded bins {bins}, legal={legal}")

print("\n== tandem run (policy override) ==")
main(
    [
        "run",
        "--config",
        CONFIG,
        "--questions",
        str(ASSETS / "questions.jsonl"),
        "--policy",
        "never-offload",
    ]
)
show_jsonl(OUT / "runs.jsonl", ["id", "handoff_count"])
