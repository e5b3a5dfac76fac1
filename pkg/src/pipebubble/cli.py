"""Command-line front end: profile, run, sweep and check."""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path
from typing import Any, Sequence

from pipebubble import config as cfgmod
from pipebubble.engine import RunTrace, run
from pipebubble.metrics import bubble_breakdown, build_report
from pipebubble.pipeline import ConfigError
from pipebubble.profiler import profile_bubbles, profile_task
from pipebubble.replay import TraceFormatError, read_trace, replay_check, trace_lines

OUT_ENV = "PIPEBUBBLE_OUT"

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_SCHEMA = 2
EXIT_INVARIANT = 3


class InvariantViolation(RuntimeError):
    def __init__(self, where: str, violations: list[str]):
        self.violations = violations
        super().__init__(f"{where}: {len(violations)} invariant violation(s)")


def _dumps(doc: Any) -> str:
    return json.dumps(doc, sort_keys=True, indent=2) + "\n"


def write_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.{os.getpid()}.tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def table_text(rows: list[dict[str, Any]], fmt: str) -> str:
    if fmt == "json-lines":
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in rows)
    buf = io.StringIO()
    if rows:
        writer = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
    return buf.getvalue()


def table_suffix(fmt: str) -> str:
    return ".jsonl" if fmt == "json-lines" else ".csv"


# ------------------------------------------------------------------ commands


def profiles_document(exp: cfgmod.ExperimentConfig) -> dict[str, Any]:
    tick = exp.pipeline.tick
    bp = profile_bubbles(exp.pipeline)
    tasks = []
    for spec in exp.tasks:
        prof = profile_task(spec, exp.runtime.profile_steps, exp.seed)
        est = prof.est_per_step_duration
        tasks.append(
            {
                "id": spec.id,
                "interface": spec.interface.value,
                "est_per_step_duration": None if est is None else est * tick,
                "max_step_duration": None if prof.max_step_duration is None else prof.max_step_duration * tick,
                "est_memory": prof.est_memory,
                "profiled_steps": prof.profiled_steps,
            }
        )
    return {
        "name": exp.name,
        "bubble_rate": bp.bubble_rate,
        "stages": [
            {
                "stage": s,
                "available_memory": st.available_memory,
                "bubble_durations": [d * tick for d in st.durations],
            }
            for s, st in enumerate(bp.stages)
        ],
        "tasks": tasks,
    }


def cmd_profile(config_path: str, out_dir: Path | None = None) -> dict[str, Any]:
    exp = cfgmod.load(config_path)
    doc = profiles_document(exp)
    if out_dir is not None:
        write_atomic(out_dir / "profiles.json", _dumps(doc))
    return doc


def trace_summary(trace: RunTrace) -> dict[str, Any]:
    tick = trace.pipeline.tick
    return {
        "seed": trace.seed,
        "makespan": trace.makespan * tick,
        "makespan_ticks": trace.makespan,
        "num_ops": len(trace.schedule.ops),
        "num_bubbles": len(trace.bubbles),
        "num_records": len(trace.records),
        "outcomes": {
            tid: {"disposition": o.disposition, "worker": o.worker, "steps": o.steps_completed}
            for tid, o in sorted(trace.outcomes.items())
        },
    }


def breakdown_rows(trace: RunTrace) -> list[dict[str, Any]]:
    tick = trace.pipeline.tick
    return [
        {
            "stage": b.stage,
            "total": b.total * tick,
            "used_by_side_tasks": b.used_by_side_tasks * tick,
            "runtime_overhead": b.runtime_overhead * tick,
            "idle_oom": b.idle_oom * tick,
            "idle_insufficient_time": b.idle_insufficient_time * tick,
        }
        for b in bubble_breakdown(trace)
    ]


def execute(exp: cfgmod.ExperimentConfig) -> tuple[RunTrace, RunTrace, dict[str, Any]]:
    """Baseline and treatment runs on the same seed, both re-checked."""
    baseline = run(exp.pipeline, (), exp.limits, exp.seed, exp.runtime)
    treatment = run(exp.pipeline, exp.tasks, exp.limits, exp.seed, exp.runtime)
    for label, trace in (("baseline", baseline), ("treatment", treatment)):
        violations = replay_check(trace)
        if violations:
            raise InvariantViolation(label, violations)
    report = build_report(baseline, treatment, exp.prices).to_dict()
    report["name"] = exp.name
    report["seed"] = exp.seed
    return baseline, treatment, report


def write_run(out_dir: Path, baseline: RunTrace, treatment: RunTrace, report: dict, fmt: str) -> None:
    for label, trace in (("baseline", baseline), ("trace", treatment)):
        write_atomic(out_dir / f"{label}.jsonl", "".join(line + "\n" for line in trace_lines(trace)))
        write_atomic(out_dir / f"{label}.summary.json", _dumps(trace_summary(trace)))
    write_atomic(out_dir / "report.json", _dumps(report))
    write_atomic(out_dir / f"breakdown{table_suffix(fmt)}", table_text(breakdown_rows(treatment), fmt))


def cmd_run(config_path: str, out_dir: Path, seed: int | None = None, fmt: str = "csv") -> dict[str, Any]:
    exp = cfgmod.load(config_path)
    if seed is not None:
        exp = replace(exp, seed=seed)
    baseline, treatment, report = execute(exp)
    write_run(out_dir, baseline, treatment, report, fmt)
    return report


def _point_label(point: dict[str, Any]) -> str:
    return "-".join(f"{k}={v}" for k, v in point.items())


def _run_point(args: tuple[int, dict[str, Any], cfgmod.ExperimentConfig, str, str]) -> dict[str, Any]:
    index, point, exp, out_dir, fmt = args
    baseline, treatment, report = execute(exp)
    write_run(Path(out_dir) / "points" / f"{index:03d}-{_point_label(point)}", baseline, treatment, report, fmt)
    tick = exp.pipeline.tick
    bubbles = baseline.bubbles
    return {
        "point": index,
        **{k: point.get(k, "") for k in ("micro_batches", "model_size", "batch_size")},
        "bubble_rate": report["bubble_rate"],
        "mean_bubble_duration": (sum(b.duration for b in bubbles) / len(bubbles) * tick) if bubbles else 0.0,
        "min_available_memory": min(exp.pipeline.available_memory(s) for s in range(exp.pipeline.num_stages)),
        "t_no_side": report["t_no_side"],
        "t_with_side": report["t_with_side"],
        "delta_t": report["delta_t"],
        "s": report["s"],
        "rejected": sum(1 for d in report["dispositions"].values() if d == "rejected"),
        "killed": sum(1 for d in report["dispositions"].values() if d.startswith("killed")),
    }


def model_size_trend(rows: list[dict[str, Any]]) -> bool | None:
    """True when, for every other axis setting, mean bubble duration and free
    memory do not grow with model size. None without a model-size axis."""
    if not any(r["model_size"] != "" for r in rows):
        return None
    groups: dict[tuple, list[dict[str, Any]]] = {}
    for r in rows:
        groups.setdefault((r["micro_batches"], r["batch_size"]), []).append(r)
    for items in groups.values():
        items = sorted(items, key=lambda r: cfgmod.MODEL_SIZES[r["model_size"]].params)
        for a, b in zip(items, items[1:]):
            if b["mean_bubble_duration"] > a["mean_bubble_duration"]:
                return False
            if b["min_available_memory"] > a["min_available_memory"]:
                return False
    return True


def cmd_sweep(config_path: str, out_dir: Path, jobs: int = 1, fmt: str = "csv") -> dict[str, Any]:
    exp = cfgmod.load(config_path)
    points = cfgmod.sweep_points(exp)
    work = [(i, pt, e, str(out_dir), fmt) for i, (pt, e) in enumerate(points)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_run_point, work))
    else:
        rows = [_run_point(w) for w in work]
    trend = model_size_trend(rows)
    if trend is not None:
        for r in rows:
            r["model_size_trend_monotone"] = trend
    write_atomic(out_dir / f"aggregate{table_suffix(fmt)}", table_text(rows, fmt))
    summary = {"name": exp.name, "points": len(rows), "model_size_trend_monotone": trend}
    write_atomic(out_dir / "sweep.json", _dumps(summary))
    return {"rows": rows, **summary}


def cmd_check(trace_path: str) -> list[str]:
    return replay_check(read_trace(trace_path))


# ---------------------------------------------------------------------- main


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pipebubble",
        description="Simulate side tasks served in pipeline-training bubbles.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    default_out = os.environ.get(OUT_ENV)

    p = sub.add_parser("profile", help="print bubble and task profiles")
    p.add_argument("config", help="config file or preset name")
    p.add_argument("--out", type=Path, default=None)

    for name, help_ in (("run", "run baseline and treatment"), ("sweep", "run every sweep point")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("config", help="config file or preset name")
        p.add_argument("--out", type=Path, default=default_out, required=default_out is None)
        p.add_argument("--format", choices=("csv", "json-lines"), default="csv", help="table format")
        if name == "run":
            p.add_argument("--seed", type=int, default=None)
        else:
            p.add_argument("--jobs", type=int, default=1)

    p = sub.add_parser("check", help="re-validate a written trace")
    p.add_argument("trace")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "profile":
            doc = cmd_profile(args.config, args.out)
            sys.stdout.write(_dumps(doc))
        elif args.command == "run":
            report = cmd_run(args.config, Path(args.out), args.seed, args.format)
            print(f"delta_t={report['delta_t']:.6g} s={report['s']:.6g} -> {args.out}")
        elif args.command == "sweep":
            if args.jobs < 1:
                raise ConfigError("jobs", "must be at least 1")
            result = cmd_sweep(args.config, Path(args.out), args.jobs, args.format)
            print(f"{result['points']} points -> {args.out}")
        else:
            violations = cmd_check(args.trace)
            for v in violations:
                print(v, file=sys.stderr)
            if violations:
                return EXIT_INVARIANT
            print("ok")
    except (cfgmod.SchemaError, TraceFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except InvariantViolation as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        for v in exc.violations:
            print(f"  {v}", file=sys.stderr)
        return EXIT_INVARIANT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
