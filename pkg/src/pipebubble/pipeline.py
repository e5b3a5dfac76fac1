"""Pipeline-parallel training schedule and bubble extraction.

All simulated times are integer ticks; ``PipelineConfig.tick`` gives the
length of one tick in seconds. Stages are 0-based, micro-batches 1-based.
"""

from __future__ import annotations

import enum
from collections import defaultdict
from dataclasses import dataclass, field

from pipebubble import kernels


class ConfigError(ValueError):
    """A config value violates an invariant. ``field`` names the offender."""

    def __init__(self, field: str, message: str) -> None:
        super().__init__(f"{field}: {message}")
        self.field = field


class OpKind(enum.Enum):
    FP = "FP"
    BP = "BP"


class BubbleType(enum.Enum):
    A = "A"
    B = "B"
    C = "C"


def _per_stage(value: int | tuple[int, ...] | list[int], p: int, name: str) -> tuple[int, ...]:
    if isinstance(value, (list, tuple)):
        if len(value) != p:
            raise ConfigError(name, f"expected {p} per-stage values, got {len(value)}")
        return tuple(value)
    return (value,) * p


@dataclass(frozen=True)
class PipelineConfig:
    num_stages: int
    num_micro_batches: int
    fp_duration: int | tuple[int, ...] = 1
    bp_duration: int | tuple[int, ...] = 2
    num_epochs: int = 1
    gpu_memory_total: float = 48.0
    stage_memory: tuple[float, ...] | None = None
    tick: float = 0.001

    def __post_init__(self) -> None:
        for name in ("fp_duration", "bp_duration", "stage_memory"):
            value = getattr(self, name)
            if isinstance(value, list):
                object.__setattr__(self, name, tuple(value))

    def validate(self) -> "PipelineConfig":
        p, m = self.num_stages, self.num_micro_batches
        if not isinstance(p, int) or p < 1:
            raise ConfigError("num_stages", f"must be a positive integer, got {p!r}")
        if not isinstance(m, int) or m < 1:
            raise ConfigError("num_micro_batches", f"must be a positive integer, got {m!r}")
        if not isinstance(self.num_epochs, int) or self.num_epochs < 1:
            raise ConfigError("num_epochs", f"must be a positive integer, got {self.num_epochs!r}")
        for name in ("fp_duration", "bp_duration"):
            for d in _per_stage(getattr(self, name), p, name):
                if not isinstance(d, int) or d <= 0:
                    raise ConfigError(name, f"durations must be positive tick counts, got {d!r}")
        if self.tick <= 0:
            raise ConfigError("tick", "must be positive")
        if self.gpu_memory_total < 0:
            raise ConfigError("gpu_memory_total", "must be non-negative")
        if self.stage_memory is not None:
            if len(self.stage_memory) != p:
                raise ConfigError("stage_memory", f"expected {p} entries, got {len(self.stage_memory)}")
            for s, mem in enumerate(self.stage_memory):
                if mem < 0 or mem > self.gpu_memory_total:
                    raise ConfigError(
                        "stage_memory", f"stage {s} uses {mem} GiB of {self.gpu_memory_total}"
                    )
        return self

    def fp(self, stage: int) -> int:
        return _per_stage(self.fp_duration, self.num_stages, "fp_duration")[stage]

    def bp(self, stage: int) -> int:
        return _per_stage(self.bp_duration, self.num_stages, "bp_duration")[stage]

    def duration(self, stage: int, kind: OpKind) -> int:
        return self.fp(stage) if kind is OpKind.FP else self.bp(stage)

    def stage_mem(self, stage: int) -> float:
        return 0.0 if self.stage_memory is None else float(self.stage_memory[stage])

    def available_memory(self, stage: int) -> float:
        return self.gpu_memory_total - self.stage_mem(stage)


@dataclass(frozen=True, slots=True)
class OpEvent:
    stage: int
    kind: OpKind
    micro_batch: int
    epoch: int
    start: int
    end: int

    @property
    def key(self) -> tuple[int, str, int, int]:
        return (self.stage, self.kind.value, self.micro_batch, self.epoch)


@dataclass(frozen=True)
class ScheduleTrace:
    ops: tuple[OpEvent, ...]
    epoch_spans: tuple[tuple[int, int], ...]
    config: PipelineConfig

    @property
    def makespan(self) -> int:
        return self.epoch_spans[-1][1] - self.epoch_spans[0][0]

    def stage_ops(self) -> dict[int, list[OpEvent]]:
        by_stage: dict[int, list[OpEvent]] = {s: [] for s in range(self.config.num_stages)}
        for op in self.ops:
            by_stage[op.stage].append(op)
        for ops in by_stage.values():
            ops.sort(key=lambda o: o.start)
        return by_stage


@dataclass(frozen=True, slots=True)
class Bubble:
    stage: int
    epoch: int
    start: int
    duration: int
    available_memory: float
    btype: BubbleType
    # index (within the stage's ops of this epoch) of the op preceding the gap; -1 before the first
    after_op: int = field(default=-1, compare=False)

    @property
    def end(self) -> int:
        return self.start + self.duration


def issue_order(num_stages: int, num_micro_batches: int, stage: int) -> list[tuple[OpKind, int]]:
    """1F1B issue order of one stage for one epoch.

    Warm-up forwards for micro-batches ``1..min(m, p - stage)``, then one
    backward per forward, then the remaining backwards.
    """
    m = num_micro_batches
    warm = min(m, num_stages - stage)
    order = [(OpKind.FP, i) for i in range(1, warm + 1)]
    nxt = warm + 1
    for i in range(1, m + 1):
        order.append((OpKind.BP, i))
        if nxt <= m:
            order.append((OpKind.FP, nxt))
            nxt += 1
    return order


def epoch_dag(config: PipelineConfig):
    """Flat op arrays for one epoch: ``(labels, orders, durations, dep_a, dep_b)``.

    ``labels[i]`` is ``(stage, kind, micro_batch)``.
    """
    p, m = config.num_stages, config.num_micro_batches
    labels: list[tuple[int, OpKind, int]] = []
    index: dict[tuple[int, OpKind, int], int] = {}
    orders: list[list[int]] = []
    for s in range(p):
        row = []
        for kind, mb in issue_order(p, m, s):
            index[(s, kind, mb)] = len(labels)
            row.append(len(labels))
            labels.append((s, kind, mb))
        orders.append(row)
    durations = [config.duration(s, kind) for s, kind, _ in labels]
    dep_a = [-1] * len(labels)
    dep_b = [-1] * len(labels)
    for i, (s, kind, mb) in enumerate(labels):
        if kind is OpKind.FP:
            if s > 0:
                dep_a[i] = index[(s - 1, OpKind.FP, mb)]
        else:
            if s < p - 1:
                dep_a[i] = index[(s + 1, OpKind.BP, mb)]
            dep_b[i] = index[(s, OpKind.FP, mb)]
    return labels, orders, durations, dep_a, dep_b


def build_schedule(config: PipelineConfig) -> ScheduleTrace:
    """Earliest-start 1F1B schedule, epochs separated by a synchronous barrier."""
    config.validate()
    labels, orders, durations, dep_a, dep_b = epoch_dag(config)
    start, end = kernels.schedule_times(orders, durations, dep_a, dep_b, 0)
    span = max(end)
    ops = []
    for e in range(config.num_epochs):
        shift = e * span
        for i, (s, kind, mb) in enumerate(labels):
            ops.append(OpEvent(s, kind, mb, e, start[i] + shift, end[i] + shift))
    ops.sort(key=lambda o: (o.start, o.stage))
    spans = tuple((e * span, (e + 1) * span) for e in range(config.num_epochs))
    return ScheduleTrace(tuple(ops), spans, config)


def extract_bubbles(trace: ScheduleTrace) -> list[Bubble]:
    """Every maximal idle interval of every stage inside each epoch span, classified.

    Gaps at the epoch edges are Type A, a gap right before the stage's first
    backward is Type B, any other interior gap is Type C.
    """
    config = trace.config
    grouped: dict[tuple[int, int], list[OpEvent]] = defaultdict(list)
    for op in trace.ops:
        grouped[(op.epoch, op.stage)].append(op)
    bubbles = []
    for e, (lo, hi) in enumerate(trace.epoch_spans):
        for s in range(config.num_stages):
            ops = sorted(grouped.get((e, s), ()), key=lambda o: o.start)
            first_bp = next((i for i, o in enumerate(ops) if o.kind is OpKind.BP), -1)
            gaps = kernels.idle_gaps([o.start for o in ops], [o.end for o in ops], lo, hi)
            for g_start, g_end, nxt in gaps:
                if nxt == 0 or nxt == len(ops):
                    btype = BubbleType.A
                elif nxt == first_bp:
                    btype = BubbleType.B
                else:
                    btype = BubbleType.C
                bubbles.append(
                    Bubble(s, e, g_start, g_end - g_start, config.available_memory(s), btype, nxt - 1)
                )
    bubbles.sort(key=lambda b: (b.start, b.stage))
    return bubbles


def bubble_rate(trace: ScheduleTrace, bubbles: list[Bubble]) -> float:
    """Total bubble time over ``num_stages x`` wall time of the trace."""
    wall = trace.makespan
    if wall <= 0:
        return 0.0
    return sum(b.duration for b in bubbles) / (trace.config.num_stages * wall)


def stage_bubble_rates(trace: ScheduleTrace, bubbles: list[Bubble]) -> list[float]:
    """Per-stage alternative normalisation: stage bubble time over wall time."""
    wall = trace.makespan
    totals = [0] * trace.config.num_stages
    for b in bubbles:
        totals[b.stage] += b.duration
    return [t / wall if wall else 0.0 for t in totals]


def default_stage_memory(
    num_stages: int,
    gpu_memory_total: float,
    weight_mem: float,
    activation_mem_per_microbatch: float,
) -> list[float]:
    """Training memory per stage: weights plus activations of in-flight micro-batches.

    Stage ``s`` holds ``p - s`` micro-batches of activations at the end of
    1F1B warm-up, so later stages use less memory.
    """
    if min(num_stages, gpu_memory_total, weight_mem, activation_mem_per_microbatch) < 0:
        raise ConfigError("memory_model", "inputs must be non-negative")
    if weight_mem + num_stages * activation_mem_per_microbatch > gpu_memory_total:
        raise ConfigError(
            "memory_model",
            f"stage 0 needs {weight_mem + num_stages * activation_mem_per_microbatch} GiB "
            f"but the GPU has {gpu_memory_total}",
        )
    return [
        min(gpu_memory_total, weight_mem + (num_stages - s) * activation_mem_per_microbatch)
        for s in range(num_stages)
    ]
