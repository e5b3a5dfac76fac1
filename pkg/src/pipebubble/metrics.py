"""Overhead and cost-savings metrics, and the per-stage bubble time breakdown."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Mapping

from pipebubble import kernels
from pipebubble.pipeline import bubble_rate, stage_bubble_rates

SECONDS_PER_HOUR = 3600.0

USED_KINDS = ("step", "kernel")
RUNTIME_KINDS = ("overhead", "init")


@dataclass(frozen=True)
class PriceConfig:
    """Hourly prices of the training server and of the cheaper reference server.

    ``reference_throughput`` maps task id to work units per hour when the
    task runs alone on the reference server.
    """

    price_server_1: float = 3.96
    price_server_2: float = 0.18
    reference_throughput: dict[str, float] = field(default_factory=dict)

    def validate(self) -> "PriceConfig":
        from pipebubble.pipeline import ConfigError

        if not self.price_server_1 > 0:
            raise ConfigError("prices.price_server_1", "must be positive")
        if not self.price_server_2 > 0:
            raise ConfigError("prices.price_server_2", "must be positive")
        for task_id, th in self.reference_throughput.items():
            if not th > 0:
                raise ConfigError(f"prices.reference_throughput.{task_id}", "must be positive")
        return self


def time_increase(t_no: float, t_with: float) -> float:
    if not t_no > 0:
        raise ValueError(f"baseline time must be positive, got {t_no}")
    return (t_with - t_no) / t_no


@dataclass(frozen=True)
class CostSummary:
    c_no_side: float
    c_extra: float
    c_side_tasks: float
    s: float


def cost_summary(
    t_no: float, delta_t: float, work_done: Mapping[str, float], prices: PriceConfig
) -> CostSummary:
    """Dollar costs for a run; ``t_no`` is in seconds, prices are hourly."""
    for value in (t_no, delta_t, *work_done.values()):
        if not math.isfinite(value):
            raise ValueError("cost inputs must be finite")
    c_no = prices.price_server_1 * t_no / SECONDS_PER_HOUR
    if not c_no > 0:
        raise ValueError("baseline cost must be positive")
    c_extra = delta_t * c_no
    c_side = 0.0
    for task_id in sorted(work_done):
        work = work_done[task_id]
        if work == 0:
            continue
        th = prices.reference_throughput.get(task_id)
        if th is None:
            raise KeyError(f"no reference throughput for task {task_id!r}")
        c_side += prices.price_server_2 * (work / th)
    return CostSummary(c_no, c_extra, c_side, (c_side - c_extra) / c_no)


def cost_savings(
    t_no: float, delta_t: float, work_done: Mapping[str, float], prices: PriceConfig
) -> float:
    return cost_summary(t_no, delta_t, work_done, prices).s


@dataclass(frozen=True)
class StageBreakdown:
    stage: int
    total: int
    used_by_side_tasks: int
    runtime_overhead: int
    idle_oom: int
    idle_insufficient_time: int

    @property
    def components_sum(self) -> int:
        return (
            self.used_by_side_tasks
            + self.runtime_overhead
            + self.idle_oom
            + self.idle_insufficient_time
        )


def oom_stages(trace) -> set[int]:
    """Stages whose free memory cannot admit any submitted task."""
    est = [r["est_memory"] for r in trace.records if r["type"] == "profile"]
    if not est:
        return set()
    cfg = trace.pipeline
    return {
        s
        for s in range(cfg.num_stages)
        if not any(cfg.available_memory(s) > m for m in est)
    }


def _intervals(pairs: list[tuple[int, int]]) -> tuple[list[int], list[int]]:
    pairs = sorted(p for p in pairs if p[1] > p[0])
    return [a for a, _ in pairs], [b for _, b in pairs]


def bubble_breakdown(trace) -> list[StageBreakdown]:
    """Split each stage's bubble time into used, runtime and two idle causes.

    Idle time counts as OOM on stages no submitted task fits in, otherwise as
    insufficient time. Components add up to the stage's bubble time exactly.
    """
    p = trace.pipeline.num_stages
    bubbles: dict[int, list[tuple[int, int]]] = {s: [] for s in range(p)}
    for b in trace.bubbles:
        bubbles[b.stage].append((b.start, b.end))
    used: dict[int, list[tuple[int, int]]] = {s: [] for s in range(p)}
    runtime: dict[int, list[tuple[int, int]]] = {s: [] for s in range(p)}
    for r in trace.records:
        if r["type"] != "work":
            continue
        if r["kind"] in USED_KINDS:
            used[r["worker"]].append((r["start"], r["end"]))
        elif r["kind"] in RUNTIME_KINDS:
            runtime[r["worker"]].append((r["start"], r["end"]))
    oom = oom_stages(trace)
    out = []
    for s in range(p):
        bs, be = _intervals(bubbles[s])
        total = sum(be) - sum(bs)
        us, ue = _intervals(used[s])
        rs, re_ = _intervals(runtime[s])
        u = kernels.overlap_total(bs, be, us, ue)
        r = kernels.overlap_total(bs, be, rs, re_)
        idle = total - u - r
        out.append(
            StageBreakdown(s, total, u, r, idle if s in oom else 0, 0 if s in oom else idle)
        )
    return out


def work_done(trace) -> dict[str, int]:
    """Work units per task: completed steps (iterative) or kernels (imperative)."""
    return {tid: o.steps_completed for tid, o in sorted(trace.outcomes.items())}


@dataclass
class MetricsReport:
    t_no_side: float
    t_with_side: float
    delta_t: float
    c_no_side: float
    c_extra: float
    c_side_tasks: float
    s: float
    work_done: dict[str, int]
    bubble_breakdown: list[dict[str, float]]
    bubble_rate: float
    stage_bubble_rates: list[float]
    placement: dict[str, int | None]
    dispositions: dict[str, str]

    def to_dict(self) -> dict:
        return asdict(self)


def build_report(baseline, treatment, prices: PriceConfig) -> MetricsReport:
    """Compare a run without side tasks to one with them; times in seconds."""
    tick = treatment.pipeline.tick
    t_no = baseline.makespan * tick
    t_with = treatment.makespan * tick
    dt = time_increase(t_no, t_with)
    work = work_done(treatment)
    costs = cost_summary(t_no, dt, work, prices)
    breakdown = [
        {
            "stage": b.stage,
            "total": b.total * tick,
            "used_by_side_tasks": b.used_by_side_tasks * tick,
            "runtime_overhead": b.runtime_overhead * tick,
            "idle_oom": b.idle_oom * tick,
            "idle_insufficient_time": b.idle_insufficient_time * tick,
        }
        for b in bubble_breakdown(treatment)
    ]
    return MetricsReport(
        t_no_side=t_no,
        t_with_side=t_with,
        delta_t=dt,
        c_no_side=costs.c_no_side,
        c_extra=costs.c_extra,
        c_side_tasks=costs.c_side_tasks,
        s=costs.s,
        work_done=work,
        bubble_breakdown=breakdown,
        bubble_rate=bubble_rate(treatment.schedule, treatment.bubbles),
        stage_bubble_rates=stage_bubble_rates(treatment.schedule, treatment.bubbles),
        placement={tid: o.worker for tid, o in sorted(treatment.outcomes.items())},
        dispositions={tid: o.disposition for tid, o in sorted(treatment.outcomes.items())},
    )
