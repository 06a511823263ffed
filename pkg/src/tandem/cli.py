"""Operator entry point: run cooperative generations, annotate corpora, score
rewards, run latency simulations, and emit plot-ready statistics.

All file formats are JSON/JSON-Lines in, JSON-Lines/CSV out; every stochastic
path requires an explicit seed so batches replay bit-exactly.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

from . import annotate as annotate_mod
from . import perfsim
from .backends import BackendError, HTTPBackend, ScriptedBackend, load_script
from .orchestrator import (
    LEARNED_TAGS,
    NEVER_OFFLOAD,
    RANDOM_OFFLOAD,
    PolicyConfig,
    RunConfig,
    result_from_dict,
    run_cooperative,
)
from .protocol import validate_trace
from .reward import RewardConfig, total_reward
from .spans import strip_tags
from .tags import ControlTags


class ConfigError(ValueError):
    pass


def read_jsonl(path: Path) -> list[dict]:
    records = []
    with open(path) as handle:
        for line_number, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as exc:
                records.append({"_malformed": str(exc), "_line": line_number})
    return records


def write_jsonl(path: Path, records) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as handle:
        for record in records:
            handle.write(json.dumps(record, sort_keys=True) + "\n")


def write_csv(path: Path, header: list[str], rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(header)
        writer.writerows(rows)


class ToolConfig:
    """Validated view over the JSON config file."""

    def __init__(self, data: dict, base_dir: Path) -> None:
        self.data = data
        self.base_dir = base_dir
        self.backends = data.get("backends", {})
        for name, spec in self.backends.items():
            kind = spec.get("kind")
            if kind not in ("scripted", "http"):
                raise ConfigError(f"backend {name!r}: kind must be scripted or http")
            if kind == "scripted":
                script = spec.get("script")
                if script is None or not (base_dir / script).exists():
                    raise ConfigError(f"backend {name!r}: script file {script!r} not found")
            else:
                if not spec.get("endpoint") or not spec.get("model"):
                    raise ConfigError(f"backend {name!r}: http backends need endpoint and model")
        out_dir = Path(data.get("out_dir", "out"))
        self.out_dir = out_dir if out_dir.is_absolute() else base_dir / out_dir

    @classmethod
    def load(cls, path: str | Path) -> "ToolConfig":
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file {path} not found")
        return cls(json.loads(path.read_text()), path.parent)

    def backend(self, name: str):
        if name not in self.backends:
            raise ConfigError(f"backend {name!r} is not defined in the config")
        spec = self.backends[name]
        if spec["kind"] == "scripted":
            return ScriptedBackend(
                entries=load_script(self.base_dir / spec["script"]),
                chunk_tokens=spec.get("chunk_tokens", 4),
                prefill_rate=spec.get("prefill_rate", 30000.0),
                probe_supported=spec.get("probe_supported", True),
            )
        return HTTPBackend(
            base_url=spec["endpoint"],
            model=spec["model"],
            path=spec.get("path", "/v1/completions"),
            auth_env=spec.get("auth_env"),
            timeout=spec.get("timeout", 30.0),
        )

    def run_config(self, policy_override: str | None = None, seed: int | None = None) -> RunConfig:
        raw = dict(self.data.get("run", {}))
        policy_raw = dict(raw.pop("policy", {}))
        if policy_override:
            policy_raw = _parse_policy(policy_override)
        if seed is not None:
            policy_raw["seed"] = seed
        try:
            policy = PolicyConfig(**policy_raw)
            return RunConfig(policy=policy, **raw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad run config: {exc}") from exc

    def reward_config(self) -> RewardConfig:
        raw = dict(self.data.get("reward", {}))
        if "weights" in raw:
            raw["weights"] = tuple(raw["weights"])
        if "essential_tags" in raw:
            raw["essential_tags"] = tuple(raw["essential_tags"])
        try:
            return RewardConfig(**raw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad reward config: {exc}") from exc

    def match_config(self) -> annotate_mod.MatchConfig:
        raw = dict(self.data.get("match", {}))
        if "normalization" in raw:
            raw["normalization"] = annotate_mod.Normalization(raw["normalization"])
        try:
            return annotate_mod.MatchConfig(**raw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad match config: {exc}") from exc

    def sim_config(self, mode: str | None = None) -> perfsim.SimConfig:
        raw = dict(self.data.get("sim", {}))
        if mode:
            raw["mode"] = mode
        try:
            return perfsim.SimConfig(**raw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad sim config: {exc}") from exc


def _parse_policy(spec: str) -> dict:
    """Parse ``name[:key=value,...]`` policy overrides from the command line."""
    name, _, params = spec.partition(":")
    if name not in (LEARNED_TAGS, RANDOM_OFFLOAD, NEVER_OFFLOAD):
        raise ConfigError(f"unknown policy {name!r}")
    out: dict = {"kind": name}
    if params:
        for pair in params.split(","):
            key, _, value = pair.partition("=")
            if key not in ("p", "seed", "mean_span_tokens"):
                raise ConfigError(f"unknown policy parameter {key!r}")
            out[key] = float(value) if key == "p" else int(value)
    return out


# --------------------------------------------------------------------------- #
# subcommands


def cmd_run(args) -> int:
    config = ToolConfig.load(args.config)
    run_config = config.run_config(args.policy, args.seed)
    small_backend = config.backend("small")
    large_needed = run_config.policy.kind != NEVER_OFFLOAD
    large_backend = config.backend("large") if large_needed else None

    if args.question:
        questions = [{"id": "inline-0", "question": args.question}]
    else:
        questions = read_jsonl(Path(args.questions))
    out_dir = Path(args.out) if args.out else config.out_dir

    def one(item: tuple[int, dict]) -> dict:
        index, record = item
        if "_malformed" in record or "question" not in record:
            return {"id": record.get("id", f"q{index}"), "error": "malformed question record"}
        small = small_backend.new_session("small")
        large = large_backend.new_session("large") if large_backend is not None else None
        config = run_config
        if config.policy.kind == RANDOM_OFFLOAD:
            # Derive a per-question seed so batches sample the policy while
            # staying replayable from the base seed.
            policy = replace(config.policy, seed=config.policy.seed + index)
            config = replace(config, policy=policy)
        try:
            result = run_cooperative(record["question"], small, large, config)
        except BackendError as exc:
            return {"id": record.get("id", f"q{index}"), "error": str(exc)}
        out = result.to_dict()
        out["id"] = record.get("id", f"q{index}")
        out["question"] = record["question"]
        if config.policy.kind == RANDOM_OFFLOAD:
            out["policy_seed"] = config.policy.seed
        return out

    with ThreadPoolExecutor(max_workers=args.workers) as pool:
        results = list(pool.map(one, enumerate(questions)))
    write_jsonl(out_dir / "runs.jsonl", results)
    failures = sum(1 for r in results if r.get("error"))
    print(f"run: {len(results)} questions, {failures} failed -> {out_dir / 'runs.jsonl'}")
    return 1 if failures else 0


def cmd_annotate(args) -> int:
    config = ToolConfig.load(args.config)
    match_config = config.match_config()
    tags = ControlTags()
    corpus = read_jsonl(Path(args.corpus))
    out_dir = Path(args.out) if args.out else config.out_dir
    annotator_backend = (
        config.backend("annotator") if "annotator" in config.backends else None
    )
    if "annotator_prompt_file" in config.data:
        template_path = config.base_dir / config.data["annotator_prompt_file"]
        if not template_path.exists():
            raise ConfigError(f"annotator prompt file {template_path} not found")
        template = template_path.read_text()
    else:
        template = config.data.get(
            "annotator_prompt",
            "List the most difficult spans of this reasoning trace, each wrapped in "
            + annotate_mod.SNIPPET_OPEN
            + "..."
            + annotate_mod.SNIPPET_CLOSE
            + " tags, covering about 20% of it.\n\n{trace}",
        )

    def one(item: tuple[int, dict]) -> annotate_mod.AnnotationRecord | dict:
        index, record = item
        if "_malformed" in record or "trace" not in record:
            return {"error": "malformed corpus record", "line": record.get("_line", index + 1)}
        question = record.get("question", "")
        trace = record["trace"]
        snippets = record.get("snippets")
        if snippets is None:
            if annotator_backend is None:
                return {"error": "no snippets supplied and no annotator backend", "line": index + 1}
            snippets = _snippets_with_retry(trace, annotator_backend, template)
            if snippets is None:
                return annotate_mod.AnnotationRecord(
                    question=question,
                    trace=trace,
                    snippets=(),
                    matched_spans=(),
                    annotated_text=trace,
                    offload_fraction=0.0,
                    status=annotate_mod.RecordStatus.PARTIAL,
                )
        return annotate_mod.annotate_record(question, trace, snippets, match_config, tags)

    with ThreadPoolExecutor(max_workers=args.workers) as pool:
        results = list(pool.map(one, enumerate(corpus)))

    records = [r for r in results if isinstance(r, annotate_mod.AnnotationRecord)]
    rows = [r.to_dict() if isinstance(r, annotate_mod.AnnotationRecord) else r for r in results]
    write_jsonl(out_dir / "annotations.jsonl", rows)
    stats = annotate_mod.dataset_stats(records)
    _write_histogram(out_dir / "stats_positions.csv", stats.bin_edges, stats.position_histogram)
    _write_histogram(
        out_dir / "stats_fractions.csv", stats.bin_edges, stats.offload_fraction_histogram
    )
    counts = ", ".join(f"{k}={v}" for k, v in sorted(stats.status_counts.items())) or "empty"
    if not corpus:
        print("annotate: empty corpus, empty outputs written")
    print(f"annotate: {len(records)} records ({counts}) -> {out_dir / 'annotations.jsonl'}")
    return 0


def _snippets_with_retry(trace, backend, template, attempts: int = 2):
    for attempt in range(attempts):
        session = backend.new_session("annotator")
        try:
            return annotate_mod.request_snippets(trace, session, template)
        except BackendError as exc:
            if not exc.retriable or attempt == attempts - 1:
                return None
        except annotate_mod.AnnotationFormatError:
            return None
    return None


def _write_histogram(path: Path, edges, masses) -> None:
    rows = [
        (f"{edges[i]:.6g}", f"{edges[i + 1]:.6g}", f"{masses[i]:.10g}")
        for i in range(len(masses))
    ]
    write_csv(path, ["bin_start", "bin_end", "mass"], rows)


def cmd_reward(args) -> int:
    config = ToolConfig.load(args.config)
    reward_config = config.reward_config()
    lines = read_jsonl(Path(args.completions))
    out_dir = Path(args.out) if args.out else config.out_dir

    def one(item: tuple[int, dict]) -> dict:
        index, record = item
        if "_malformed" in record or "completion" not in record or "gold" not in record:
            return {"error": "malformed completion record", "line": record.get("_line", index + 1)}
        breakdown = total_reward(record["completion"], record["gold"], reward_config)
        out = breakdown.to_dict()
        if "id" in record:
            out["id"] = record["id"]
        return out

    with ThreadPoolExecutor(max_workers=args.workers) as pool:
        results = list(pool.map(one, enumerate(lines)))
    write_jsonl(out_dir / "rewards.jsonl", results)
    print(f"reward: {len(results)} completions -> {out_dir / 'rewards.jsonl'}")
    return 0


def _load_scenario_profile(spec, base_dir: Path) -> perfsim.ThroughputProfile:
    if isinstance(spec, str):
        return perfsim.load_profile(base_dir / spec)
    return perfsim.load_profile(spec)


def cmd_simulate(args) -> int:
    config = ToolConfig.load(args.config)
    scenario_path = Path(args.scenarios)
    if not scenario_path.exists():
        raise ConfigError(f"scenario file {scenario_path} not found")
    data = json.loads(scenario_path.read_text())
    out_dir = Path(args.out) if args.out else config.out_dir
    profiles = {
        name: _load_scenario_profile(spec, scenario_path.parent)
        for name, spec in data.get("profiles", {}).items()
    }
    for required in ("small", "large"):
        if required not in profiles:
            raise ConfigError(f"scenario file must define a {required!r} profile")

    breakdown_rows = []
    speedup_rows = []
    for scenario in data.get("scenarios", []):
        name = scenario.get("name", "scenario")
        try:
            trace = _scenario_trace(scenario)
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"scenario {name!r}: {exc}") from exc
        sim_config = config.sim_config(args.mode or scenario.get("mode"))
        for key in ("chunk_size", "probe_cost_per_chunk", "include_handoff_residual", "cache_retention"):
            if key in scenario:
                sim_config = replace(sim_config, **{key: scenario[key]})
        result = perfsim.simulate(trace, profiles["small"], profiles["large"], sim_config, name)
        total_tokens = trace.small_tokens + trace.large_tokens
        references = {
            "large-only": perfsim.simulate_single_model(total_tokens, profiles["large"]),
            "small-only": perfsim.simulate_single_model(total_tokens, profiles["small"]),
        }
        reference_name = scenario.get("reference", "large-only")
        if reference_name not in references:
            raise ConfigError(f"scenario {name!r}: unknown reference {reference_name!r}")
        reference = references[reference_name]
        for component, seconds in result.components.items():
            breakdown_rows.append((name, sim_config.mode, component, f"{seconds:.9g}"))
        breakdown_rows.append((name, sim_config.mode, "total", f"{result.total_seconds:.9g}"))
        for ref_name, ratio in perfsim.speedup_report([result], reference):
            speedup_rows.append(
                (
                    name,
                    reference_name,
                    f"{reference.total_seconds:.9g}",
                    f"{result.total_seconds:.9g}",
                    f"{ratio:.9g}",
                )
            )
    write_csv(
        out_dir / "sim_breakdown.csv", ["scenario", "mode", "component", "seconds"], breakdown_rows
    )
    write_csv(
        out_dir / "sim_speedup.csv",
        ["scenario", "reference", "reference_seconds", "total_seconds", "speedup"],
        speedup_rows,
    )
    print(f"simulate: {len(data.get('scenarios', []))} scenarios -> {out_dir / 'sim_speedup.csv'}")
    return 0


def _scenario_trace(scenario: dict) -> perfsim.SegmentedTrace:
    if "segments" in scenario:
        return perfsim.SegmentedTrace.normalized(
            [(owner, int(tokens)) for owner, tokens in scenario["segments"]]
        )
    return perfsim.SegmentedTrace.from_offload(
        int(scenario["total_tokens"]),
        float(scenario["offload_fraction"]),
        int(scenario.get("spans", 1)),
    )


def cmd_trace_plotdata(args) -> int:
    records = read_jsonl(Path(args.runs))
    out_dir = Path(args.out) if args.out else Path(".")
    bins = args.bins
    rows = []
    tags = ControlTags()
    for index, record in enumerate(records):
        if "_malformed" in record or "text" not in record:
            continue
        run_id = record.get("id", f"run{index}")
        result = result_from_dict(record)
        validation = validate_trace(result.trace.text, tags)
        legal = 1 if validation.ok else 0
        reason = "" if validation.ok else validation.illegal_reasons[0].value
        stripped_length = len(strip_tags(result.trace.text, tags))
        for b in range(bins):
            lo = b / bins * stripped_length
            hi = (b + 1) / bins * stripped_length
            offloaded = any(s.start < hi and s.end > lo for s in result.trace.spans)
            rows.append((run_id, b, 1 if offloaded else 0, legal, reason))
    write_csv(
        out_dir / "trace_raster.csv",
        ["run_id", "position_bin", "offloaded", "legal", "reason"],
        rows,
    )
    print(f"trace-plotdata: {len(records)} runs x {bins} bins -> {out_dir / 'trace_raster.csv'}")
    return 0


# --------------------------------------------------------------------------- #


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tandem",
        description="Two-model cooperative decoding: run, annotate, reward, simulate.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="drive cooperative generations over questions")
    run.add_argument("--config", required=True)
    run.add_argument("--questions", help="JSONL file of {id, question} records")
    run.add_argument("--question", help="single inline question")
    run.add_argument("--policy", help="policy override, e.g. random-offload:p=0.05,seed=7")
    run.add_argument("--seed", type=int)
    run.add_argument("--out")
    run.add_argument("--workers", type=int, default=1)
    run.set_defaults(func=cmd_run)

    ann = sub.add_parser("annotate", help="annotate a CoT corpus with offload spans")
    ann.add_argument("--config", required=True)
    ann.add_argument("--corpus", required=True, help="JSONL of {question, trace[, snippets]}")
    ann.add_argument("--out")
    ann.add_argument("--workers", type=int, default=1)
    ann.set_defaults(func=cmd_annotate)

    rew = sub.add_parser("reward", help="score completions against gold answers")
    rew.add_argument("--config", required=True)
    rew.add_argument("--completions", required=True, help="JSONL of {completion, gold}")
    rew.add_argument("--out")
    rew.add_argument("--workers", type=int, default=1)
    rew.set_defaults(func=cmd_reward)

    sim = sub.add_parser("simulate", help="project latency for offload scenarios")
    sim.add_argument("--config", required=True)
    sim.add_argument("--scenarios", required=True)
    sim.add_argument("--mode", choices=[perfsim.PIPELINED, perfsim.NON_PIPELINED])
    sim.add_argument("--out")
    sim.set_defaults(func=cmd_simulate)

    plot = sub.add_parser("trace-plotdata", help="emit span raster CSV from run records")
    plot.add_argument("--runs", required=True, help="JSONL of persisted run records")
    plot.add_argument("--bins", type=int, default=100)
    plot.add_argument("--out")
    plot.set_defaults(func=cmd_trace_plotdata)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "run" and not (args.questions or args.question):
        parser.error("run requires --questions or --question")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
