"""Trace serialisation and the invariant re-checker used by tests and ``check``."""

from __future__ import annotations

import json
from collections import defaultdict
from pathlib import Path
from typing import IO, Any, Iterable

from pipebubble import kernels
from pipebubble.engine import RunTrace, RuntimeConfig, TaskOutcome
from pipebubble.limits import LimitConfig
from pipebubble.metrics import RUNTIME_KINDS, USED_KINDS, bubble_breakdown
from pipebubble.pipeline import (
    OpEvent,
    OpKind,
    PipelineConfig,
    ScheduleTrace,
    extract_bubbles,
    issue_order,
)
from pipebubble.tasks import (
    LEGAL_TRANSITIONS,
    Interface,
    Misbehavior,
    SideTaskSpec,
    SideTaskState,
    TransitionKind,
)

TRACE_FORMAT = "pipebubble-trace/1"


def pipeline_to_dict(cfg: PipelineConfig) -> dict[str, Any]:
    def plain(v):
        return list(v) if isinstance(v, tuple) else v

    return {
        "num_stages": cfg.num_stages,
        "num_micro_batches": cfg.num_micro_batches,
        "fp_duration": plain(cfg.fp_duration),
        "bp_duration": plain(cfg.bp_duration),
        "num_epochs": cfg.num_epochs,
        "gpu_memory_total": cfg.gpu_memory_total,
        "stage_memory": plain(cfg.stage_memory),
        "tick": cfg.tick,
    }


def task_to_dict(spec: SideTaskSpec) -> dict[str, Any]:
    return {
        "id": spec.id,
        "interface": spec.interface.value,
        "per_step_duration": spec.per_step_duration,
        "total_steps": spec.total_steps,
        "init_duration": spec.init_duration,
        "memory_demand": spec.memory_demand,
        "misbehavior": spec.misbehavior.value,
        "leak_rate": spec.leak_rate,
        "submit_time": spec.submit_time,
        "step_jitter": spec.step_jitter,
    }


def task_from_dict(d: dict[str, Any]) -> SideTaskSpec:
    d = dict(d)
    d["interface"] = Interface(d["interface"])
    d["misbehavior"] = Misbehavior(d["misbehavior"])
    return SideTaskSpec(**d)


def _dumps(obj: dict[str, Any]) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def trace_lines(trace: RunTrace) -> Iterable[str]:
    header = {
        "type": "header",
        "format": TRACE_FORMAT,
        "seed": trace.seed,
        "pipeline": pipeline_to_dict(trace.pipeline),
        "tasks": [task_to_dict(t) for t in trace.tasks],
        "limits": {
            "grace_period": trace.limits.grace_period,
            "memory_headroom": trace.limits.memory_headroom,
            "memory_limits": dict(sorted(trace.limits.memory_limits.items())),
            "reclamation_delay": trace.limits.reclamation_delay,
        },
        "runtime": {
            "check_overhead": trace.runtime.check_overhead,
            "rpc_latency": trace.runtime.rpc_latency,
            "profile_steps": trace.runtime.profile_steps,
            "gate_estimate": trace.runtime.gate_estimate,
        },
    }
    yield _dumps(header)
    for rec in trace.records:
        yield _dumps(rec)


def write_trace(trace: RunTrace, out: IO[str] | str | Path) -> None:
    if isinstance(out, (str, Path)):
        with open(out, "w", encoding="utf-8") as fh:
            write_trace(trace, fh)
        return
    for line in trace_lines(trace):
        out.write(line + "\n")


class TraceFormatError(ValueError):
    pass


def read_trace(source: IO[str] | str | Path) -> RunTrace:
    if isinstance(source, (str, Path)):
        with open(source, encoding="utf-8") as fh:
            return read_trace(fh)
    lines = [line for line in source if line.strip()]
    if not lines:
        raise TraceFormatError("empty trace")
    try:
        header = json.loads(lines[0])
        records = [json.loads(line) for line in lines[1:]]
    except json.JSONDecodeError as exc:
        raise TraceFormatError(f"malformed trace line: {exc}") from exc
    if header.get("type") != "header" or header.get("format") != TRACE_FORMAT:
        raise TraceFormatError("missing or unknown trace header")
    cfg = PipelineConfig(**header["pipeline"])
    tasks = tuple(task_from_dict(t) for t in header["tasks"])
    limits = LimitConfig(**header["limits"])
    runtime = RuntimeConfig(**header["runtime"])

    ops = [
        OpEvent(r["stage"], OpKind(r["kind"]), r["micro_batch"], r["epoch"], r["start"], r["end"])
        for r in records
        if r["type"] == "op"
    ]
    ops.sort(key=lambda o: (o.start, o.stage))
    epochs = sorted((r for r in records if r["type"] == "epoch"), key=lambda r: r["epoch"])
    spans = tuple((r["release"], r["end"]) for r in epochs)
    schedule = ScheduleTrace(tuple(ops), spans, cfg)
    est = {r["task"]: r["est_memory"] for r in records if r["type"] == "profile"}
    outcomes = {
        r["task"]: TaskOutcome(
            r["task"], r["disposition"], r["worker"], r["steps"], r["pauses"], est.get(r["task"])
        )
        for r in records
        if r["type"] == "outcome"
    }
    return RunTrace(
        cfg,
        tasks,
        limits,
        runtime,
        header["seed"],
        schedule,
        extract_bubbles(schedule) if spans else [],
        records,
        outcomes,
    )


# --------------------------------------------------------------------- checks


def _check_ops(trace: RunTrace) -> list[str]:
    cfg = trace.pipeline
    out = []
    by_key = {}
    for op in trace.schedule.ops:
        if op.key in by_key:
            out.append(f"op {op.key} appears twice")
        by_key[op.key] = op
        if op.end - op.start < cfg.duration(op.stage, op.kind):
            out.append(f"op {op.key} shorter than its configured duration")
    expected = cfg.num_stages * 2 * cfg.num_micro_batches * cfg.num_epochs
    if len(by_key) != expected:
        out.append(f"expected {expected} ops, trace has {len(by_key)}")
        return out

    def get(s, kind, mb, e):
        return by_key[(s, kind.value, mb, e)]

    for (s, kind, mb, e), op in by_key.items():
        kind = OpKind(kind)
        if kind is OpKind.FP and s > 0 and op.start < get(s - 1, OpKind.FP, mb, e).end:
            out.append(f"FP({s},{mb}) epoch {e} starts before FP({s - 1},{mb}) ends")
        if kind is OpKind.BP:
            if s < cfg.num_stages - 1 and op.start < get(s + 1, OpKind.BP, mb, e).end:
                out.append(f"BP({s},{mb}) epoch {e} starts before BP({s + 1},{mb}) ends")
            if op.start < get(s, OpKind.FP, mb, e).end:
                out.append(f"BP({s},{mb}) epoch {e} starts before its FP ends")

    epoch_end = defaultdict(int)
    epoch_start: dict[int, int] = {}
    for op in trace.schedule.ops:
        epoch_end[op.epoch] = max(epoch_end[op.epoch], op.end)
        epoch_start[op.epoch] = min(epoch_start.get(op.epoch, op.start), op.start)
    for e in range(1, cfg.num_epochs):
        if epoch_start[e] < epoch_end[e - 1]:
            out.append(f"epoch {e} starts before epoch {e - 1} has finished")

    for s, ops in trace.schedule.stage_ops().items():
        for a, b in zip(ops, ops[1:]):
            if b.start < a.end:
                out.append(f"stage {s}: ops {a.key} and {b.key} overlap")
        for e in range(cfg.num_epochs):
            got = [(o.kind, o.micro_batch) for o in ops if o.epoch == e]
            if got != issue_order(cfg.num_stages, cfg.num_micro_batches, s):
                out.append(f"stage {s} epoch {e}: issue order violated")
    return out


def _check_work(trace: RunTrace) -> list[str]:
    out = []
    per_worker: dict[int, list[tuple[int, int, str]]] = defaultdict(list)
    for r in trace.records:
        if r["type"] == "work":
            if r["end"] < r["start"]:
                out.append(f"work interval of {r['task']} ends before it starts")
            if r["end"] > r["start"]:
                per_worker[r["worker"]].append((r["start"], r["end"], r["task"]))
    ops = trace.schedule.stage_ops()
    for w, items in per_worker.items():
        items.sort()
        for a, b in zip(items, items[1:]):
            if b[0] < a[1]:
                out.append(f"worker {w}: side-task work of {a[2]} and {b[2]} overlaps")
        os_ = [o.start for o in ops[w]]
        oe = [o.end for o in ops[w]]
        clash = kernels.overlap_total(os_, oe, [i[0] for i in items], [i[1] for i in items])
        if clash:
            out.append(f"worker {w}: side-task work overlaps pipeline ops for {clash} ticks")
    return out


def _check_transitions(trace: RunTrace) -> list[str]:
    out = []
    state = {t.id: SideTaskState.SUBMITTED for t in trace.tasks}
    killed = set()
    running: dict[int, set[str]] = defaultdict(set)
    last_time = None
    for r in trace.records:
        if last_time is not None and r["time"] < last_time:
            out.append(f"record at {r['time']} logged after {last_time}: causality")
        last_time = r["time"]
        if r["type"] == "rpc" and r["deliver_at"] != r["time"] + trace.runtime.rpc_latency:
            out.append(f"rpc for {r['task']} does not respect the configured latency")
        if r["type"] == "kill":
            killed.add(r["task"])
        if r["type"] != "transition":
            continue
        tid = r["task"]
        if tid in killed:
            out.append(f"{tid} transitioned after being killed")
        src = SideTaskState(r["src"])
        kind = TransitionKind(r["transition"])
        if src is not state[tid]:
            out.append(f"{tid}: transition logged from {src.value} but task was {state[tid].value}")
        dst = LEGAL_TRANSITIONS.get((state[tid], kind))
        if dst is None or dst.value != r["dst"]:
            out.append(f"{tid}: illegal {kind.value} from {state[tid].value}")
            continue
        state[tid] = dst
        if dst in (SideTaskState.SUBMITTED, SideTaskState.CREATED, SideTaskState.STOPPED):
            if r["memory"] != 0:
                out.append(f"{tid}: holds {r['memory']} GiB in state {dst.value}")
        w = r["worker"]
        if dst is SideTaskState.RUNNING:
            running[w].add(tid)
            if len(running[w]) > 1:
                out.append(f"worker {w}: tasks {sorted(running[w])} running at once")
        else:
            running[w].discard(tid)
    return out


def _check_tasks(trace: RunTrace) -> list[str]:
    out = []
    specs = {t.id: t for t in trace.tasks}
    steps = defaultdict(int)
    for r in trace.records:
        if r["type"] == "work" and r["kind"] in USED_KINDS and r["completed"]:
            steps[r["task"]] += 1
    if set(trace.outcomes) != set(specs):
        out.append("every task needs exactly one terminal disposition")
    for tid, o in trace.outcomes.items():
        if steps[tid] != o.steps_completed:
            out.append(f"{tid}: {steps[tid]} completed steps in trace, outcome says {o.steps_completed}")
        total = specs[tid].total_steps
        if total is not None and o.steps_completed > total:
            out.append(f"{tid}: completed {o.steps_completed} of {total} steps")
    for r in trace.records:
        if r["type"] == "assign" and r["worker"] is not None:
            est = next(p["est_memory"] for p in trace.records if p["type"] == "profile" and p["task"] == r["task"])
            if not trace.pipeline.available_memory(r["worker"]) > est:
                out.append(f"{r['task']} admitted to worker {r['worker']} without enough memory")
    return out


def _check_bubbles(trace: RunTrace) -> list[str]:
    out = []
    if trace.bubbles != extract_bubbles(trace.schedule):
        out.append("bubble list differs from the idle gaps of the op timeline")
    breakdown = bubble_breakdown(trace)
    for b in breakdown:
        if b.components_sum != b.total or min(
            b.used_by_side_tasks, b.runtime_overhead, b.idle_oom, b.idle_insufficient_time
        ) < 0:
            out.append(f"stage {b.stage}: breakdown does not partition bubble time")
    work = defaultdict(int)
    for r in trace.records:
        if r["type"] == "work" and r["kind"] in USED_KINDS + RUNTIME_KINDS:
            work[r["worker"]] += r["end"] - r["start"]
    for b in breakdown:
        if b.used_by_side_tasks + b.runtime_overhead != work[b.stage]:
            out.append(f"stage {b.stage}: side-task work outside bubble time")
    return out


def replay_check(trace: RunTrace) -> list[str]:
    """Re-validate a finished trace; returns a list of violations (empty if sound)."""
    violations = []
    for check in (_check_ops, _check_work, _check_transitions, _check_tasks, _check_bubbles):
        try:
            violations += check(trace)
        except (KeyError, ValueError, TypeError, StopIteration) as exc:
            violations.append(f"{check.__name__[7:]}: malformed trace ({exc!r})")
    return violations
