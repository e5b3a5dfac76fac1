"""Discrete-event engine coupling the pipeline, the side task manager and the tasks.

One logical clock in integer ticks. Events pop in ``(time, class, worker,
sequence)`` order, so every run is bit-reproducible. Each stage's GPU has at
most one occupant; a ready pipeline op always wins the GPU at the side task's
next yield point (end of a step, kernel or initialisation).
"""

from __future__ import annotations

import enum
import heapq
import random
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Any

from pipebubble import limits as lim
from pipebubble.limits import KillReason, LimitAction, LimitConfig
from pipebubble.manager import (
    Rpc,
    WorkerState,
    on_bubble_ended,
    on_bubble_started,
    on_task_finished,
    submit_task,
)
from pipebubble.pipeline import (
    Bubble,
    ConfigError,
    OpEvent,
    OpKind,
    PipelineConfig,
    ScheduleTrace,
    build_schedule,
    epoch_dag,
    extract_bubbles,
)
from pipebubble.profiler import TaskProfile, profile_task, step_lengths, task_rng
from pipebubble.tasks import (
    Interface,
    SideTaskRuntime,
    SideTaskSpec,
    SideTaskState,
    TransitionKind,
    apply_transition,
    complete_work,
    imperative_run,
    iterative_run,
)


class EventClass(enum.IntEnum):
    OP_END = 0
    WORK_END = 1
    OP_READY = 2
    BUBBLE_ENDED = 3
    TASK_FINISHED = 4
    TASK_SUBMITTED = 5
    BUBBLE_STARTED = 6
    RPC = 7
    LIMIT = 8
    OP_START = 9
    DISPATCH = 10


@dataclass(frozen=True)
class RuntimeConfig:
    """Knobs of the simulated runtime, in ticks.

    ``check_overhead`` is the cost of each iterative dispatch (the check that
    precedes a step); it is host-side time, so a ready pipeline op never waits
    for it. ``gate_estimate`` picks the profiled mean or max step length for
    the remaining-time check.
    """

    check_overhead: int = 1
    rpc_latency: int = 0
    profile_steps: int = 32
    gate_estimate: str = "mean"

    def validate(self, limits: LimitConfig | None = None) -> "RuntimeConfig":
        if self.check_overhead < 0:
            raise ConfigError("runtime.check_overhead", "must be non-negative")
        if self.rpc_latency < 0:
            raise ConfigError("runtime.rpc_latency", "must be non-negative")
        if self.profile_steps < 1:
            raise ConfigError("runtime.profile_steps", "must be at least 1")
        if self.gate_estimate not in ("mean", "max"):
            raise ConfigError("runtime.gate_estimate", "must be 'mean' or 'max'")
        if limits is not None and limits.grace_period <= self.rpc_latency:
            raise ConfigError("limits.grace_period", "must exceed runtime.rpc_latency")
        return self


@dataclass
class TaskOutcome:
    task_id: str
    disposition: str
    worker: int | None
    steps_completed: int
    pauses_requested: int
    est_memory: float | None


@dataclass
class RunTrace:
    pipeline: PipelineConfig
    tasks: tuple[SideTaskSpec, ...]
    limits: LimitConfig
    runtime: RuntimeConfig
    seed: int
    schedule: ScheduleTrace
    bubbles: list[Bubble]
    records: list[dict[str, Any]]
    outcomes: dict[str, TaskOutcome]

    @property
    def makespan(self) -> int:
        return self.schedule.epoch_spans[-1][1]

    def records_of(self, kind: str) -> list[dict[str, Any]]:
        return [r for r in self.records if r["type"] == kind]


@dataclass
class _Work:
    kind: str  # step | kernel | init | overhead
    start: int
    end: int
    gen: int


@dataclass
class _TaskCtx:
    rt: SideTaskRuntime
    rng: random.Random
    profile: TaskProfile | None = None
    memory_limit: float = float("inf")
    worker: int | None = None
    work: _Work | None = None
    gen: int = 0
    init_requested: bool = False
    bubble_end: int | None = None
    yielded: bool = False
    checked: bool = False
    pause_pending: bool = False
    pauses_requested: int = 0
    disposition: str | None = None
    submitted: bool = False


@dataclass
class _Stage:
    op_running: int | None = None
    pending_op: int | None = None


_FOLLOWUP = (EventClass.OP_START, EventClass.DISPATCH)


class Engine:
    def __init__(
        self,
        pipeline: PipelineConfig,
        tasks: list[SideTaskSpec] | tuple[SideTaskSpec, ...] = (),
        limits: LimitConfig | None = None,
        seed: int = 0,
        runtime: RuntimeConfig | None = None,
    ) -> None:
        self.pipeline = pipeline.validate()
        self.specs = tuple(s.validate() for s in tasks)
        ids = [s.id for s in self.specs]
        if len(set(ids)) != len(ids):
            raise ConfigError("tasks", "task ids must be unique")
        self.limits = (limits or LimitConfig()).validate()
        self.runtime = (runtime or RuntimeConfig()).validate(self.limits)
        self.seed = seed

        self._heap: list[tuple] = []
        self._seq = 0
        self.now = 0
        self.records: list[dict[str, Any]] = []

        self._build_ops()
        self._build_bubble_profile()

        p = pipeline.num_stages
        self.stages = [_Stage() for _ in range(p)]
        self.workers = [WorkerState(s, pipeline.available_memory(s)) for s in range(p)]
        self.ctx = {
            s.id: _TaskCtx(SideTaskRuntime(s), task_rng(seed, s.id, "run")) for s in self.specs
        }
        self.runtimes = {tid: c.rt for tid, c in self.ctx.items()}
        self.pipeline_done = False

    # ------------------------------------------------------------------ setup

    def _build_ops(self) -> None:
        cfg = self.pipeline
        labels, orders, durations, dep_a, dep_b = epoch_dag(cfg)
        n = len(labels)
        self._n_per_epoch = n
        self.op_labels: list[tuple[int, OpKind, int, int]] = []
        self.op_duration: list[int] = []
        self.op_index_in_stage: list[int] = []
        deps: list[list[int]] = []
        self._epoch_first_ops: list[list[int]] = []
        position = {}
        for s, row in enumerate(orders):
            for k, i in enumerate(row):
                position[i] = k
        for e in range(cfg.num_epochs):
            base = e * n
            firsts = []
            for i, (s, kind, mb) in enumerate(labels):
                self.op_labels.append((s, kind, mb, e))
                self.op_duration.append(durations[i])
                self.op_index_in_stage.append(position[i])
                d = [base + x for x in (dep_a[i], dep_b[i]) if x >= 0]
                k = position[i]
                if k > 0:
                    d.append(base + orders[s][k - 1])
                else:
                    firsts.append(base + i)
                deps.append(d)
            self._epoch_first_ops.append(firsts)
        self.op_dependents: list[list[int]] = [[] for _ in self.op_labels]
        for i, d in enumerate(deps):
            for j in set(d):
                self.op_dependents[j].append(i)
        self.op_remaining = [len(set(d)) for d in deps]
        for e in range(1, cfg.num_epochs):
            for i in self._epoch_first_ops[e]:
                self.op_remaining[i] += 1  # the epoch barrier
        self.op_ready_at: list[int | None] = [None] * len(self.op_labels)
        self.op_start: list[int | None] = [None] * len(self.op_labels)
        self.op_end: list[int | None] = [None] * len(self.op_labels)
        self._epoch_left = [n] * cfg.num_epochs
        self._stage_epoch_last = {}
        for s, row in enumerate(orders):
            self._stage_epoch_last[s] = len(row) - 1
        self.epoch_release = [0] + [None] * (cfg.num_epochs - 1)
        self.epoch_done_at: list[int | None] = [None] * cfg.num_epochs

    def _build_bubble_profile(self) -> None:
        one = build_schedule(
            PipelineConfig(
                self.pipeline.num_stages,
                self.pipeline.num_micro_batches,
                self.pipeline.fp_duration,
                self.pipeline.bp_duration,
                1,
                self.pipeline.gpu_memory_total,
                self.pipeline.stage_memory,
                self.pipeline.tick,
            )
        )
        # (stage, index of preceding op within the stage's epoch) -> profiled bubble
        self.profiled = {(b.stage, b.after_op): b for b in extract_bubbles(one)}

    # ------------------------------------------------------------- plumbing

    def push(self, time: int, cls: EventClass, worker: int, payload: Any = None) -> None:
        heapq.heappush(self._heap, (time, int(cls), worker, self._seq, payload))
        self._seq += 1

    def log(self, record_type: str, /, **fields: Any) -> None:
        fields["type"] = record_type
        fields.setdefault("time", self.now)
        self.records.append(fields)

    def _transition(self, c: _TaskCtx, kind: TransitionKind) -> None:
        before = c.rt.state
        apply_transition(c.rt, kind, self.now)
        self.log(
            "transition",
            task=c.rt.id,
            worker=c.worker,
            transition=kind.value,
            src=before.value,
            dst=c.rt.state.value,
            memory=c.rt.memory_allocated,
        )

    # ------------------------------------------------------------------- run

    def run(self) -> RunTrace:
        for i in self._epoch_first_ops[0]:
            if self.op_remaining[i] == 0:
                self.op_ready_at[i] = 0
                self.push(0, EventClass.OP_READY, self.op_labels[i][0], i)
        self._open_leading_bubbles(0)
        for spec in sorted(self.specs, key=lambda s: (s.submit_time, s.id)):
            self.push(spec.submit_time, EventClass.TASK_SUBMITTED, -1, spec.id)

        handlers = {
            EventClass.OP_END: self._on_op_end,
            EventClass.WORK_END: self._on_work_end,
            EventClass.OP_READY: self._on_op_ready,
            EventClass.BUBBLE_ENDED: self._on_bubble_ended,
            EventClass.TASK_FINISHED: self._on_task_finished,
            EventClass.TASK_SUBMITTED: self._on_task_submitted,
            EventClass.BUBBLE_STARTED: self._on_bubble_started,
            EventClass.RPC: self._on_rpc,
            EventClass.LIMIT: self._on_limit,
            EventClass.OP_START: self._on_op_start,
            EventClass.DISPATCH: self._on_dispatch,
        }
        horizon = None
        while self._heap:
            time, cls, worker, _, payload = self._heap[0]
            if horizon is not None and time > horizon:
                break
            heapq.heappop(self._heap)
            self.now = time
            handlers[EventClass(cls)](worker, payload)
            if self.pipeline_done and horizon is None:
                horizon = self.now
        return self._finish(horizon if horizon is not None else self.now)

    # ------------------------------------------------------- pipeline events

    def _on_op_ready(self, stage: int, op: int) -> None:
        st = self.stages[stage]
        st.pending_op = op
        if self.workers[stage].current_bubble is not None:
            self.push(self.now, EventClass.BUBBLE_ENDED, stage)
        self.push(self.now, EventClass.OP_START, stage)

    def _on_op_start(self, stage: int, _: Any) -> None:
        st = self.stages[stage]
        if st.pending_op is None or st.op_running is not None:
            return
        c = self._current_ctx(stage)
        if c is not None and c.work is not None:
            if c.work.kind != "overhead":
                return
            self._cut_work(c, completed=False)
        op = st.pending_op
        st.pending_op = None
        st.op_running = op
        self.op_start[op] = self.now
        self.push(self.now + self.op_duration[op], EventClass.OP_END, stage, op)

    def _on_op_end(self, stage: int, op: int) -> None:
        st = self.stages[stage]
        st.op_running = None
        self.op_end[op] = self.now
        s, kind, mb, e = self.op_labels[op]
        self.log(
            "op",
            stage=s,
            kind=kind.value,
            micro_batch=mb,
            epoch=e,
            ready=self.op_ready_at[op],
            start=self.op_start[op],
            end=self.now,
        )
        for d in self.op_dependents[op]:
            self._dep_done(d)
        k = self.op_index_in_stage[op]
        bubble = self.profiled.get((s, k))
        if bubble is not None:
            self.push(self.now, EventClass.BUBBLE_STARTED, s, (e, bubble))
        self._epoch_left[e] -= 1
        if self._epoch_left[e] == 0:
            self._epoch_barrier(e)
        for cls in _FOLLOWUP:
            self.push(self.now, cls, stage)

    def _dep_done(self, op: int) -> None:
        self.op_remaining[op] -= 1
        if self.op_remaining[op] == 0:
            self.op_ready_at[op] = self.now
            self.push(self.now, EventClass.OP_READY, self.op_labels[op][0], op)

    def _epoch_barrier(self, epoch: int) -> None:
        self.epoch_done_at[epoch] = self.now
        self.log("epoch", epoch=epoch, release=self.epoch_release[epoch], end=self.now)
        for w in self.workers:
            if w.current_bubble is not None:
                self.push(self.now, EventClass.BUBBLE_ENDED, w.worker_id)
        if epoch + 1 == self.pipeline.num_epochs:
            self.pipeline_done = True
            return
        self.epoch_release[epoch + 1] = self.now
        for i in self._epoch_first_ops[epoch + 1]:
            self._dep_done(i)
        self._open_leading_bubbles(epoch + 1)

    def _open_leading_bubbles(self, epoch: int) -> None:
        for s in range(self.pipeline.num_stages):
            bubble = self.profiled.get((s, -1))
            if bubble is not None:
                self.push(self.now, EventClass.BUBBLE_STARTED, s, (epoch, bubble))

    # -------------------------------------------------------- manager events

    def _issue(self, rpcs: list[Rpc]) -> None:
        for rpc in rpcs:
            self.log(
                "rpc",
                task=rpc.task_id,
                worker=rpc.worker_id,
                transition=rpc.kind.value,
                deliver_at=rpc.deliver_at,
                bubble_end=rpc.bubble_end,
            )
            if rpc.kind is TransitionKind.PauseSideTask:
                c = self.ctx[rpc.task_id]
                c.pauses_requested += 1
                self.push(
                    rpc.issued_at + self.limits.grace_period,
                    EventClass.LIMIT,
                    rpc.worker_id,
                    ("grace", rpc.task_id, rpc.issued_at),
                )
            if rpc.deliver_at == self.now:
                self._on_rpc(rpc.worker_id, rpc)
            else:
                self.push(rpc.deliver_at, EventClass.RPC, rpc.worker_id, rpc)

    def _on_bubble_ended(self, stage: int, _: Any) -> None:
        w = self.workers[stage]
        if w.current_bubble is None:
            return
        self.log("bubble_end", worker=stage, epoch=w.current_bubble.epoch)
        self._issue(on_bubble_ended(w, self.now, self.runtime.rpc_latency))

    def _on_bubble_started(self, stage: int, payload: tuple[int, Bubble]) -> None:
        epoch, profiled = payload
        st = self.stages[stage]
        if self.pipeline_done or st.pending_op is not None or st.op_running is not None:
            return
        is_trailing = profiled.after_op == self._stage_epoch_last[stage]
        if is_trailing and self.epoch_done_at[epoch] is not None:
            return
        bubble = Bubble(
            stage,
            epoch,
            self.now,
            profiled.duration,
            profiled.available_memory,
            profiled.btype,
            profiled.after_op,
        )
        w = self.workers[stage]
        if w.current_bubble is not None:
            self._issue(on_bubble_ended(w, self.now, self.runtime.rpc_latency))
        self.log(
            "bubble_start",
            worker=stage,
            epoch=epoch,
            btype=bubble.btype.value,
            planned_end=bubble.end,
        )
        self._issue(on_bubble_started(w, bubble, self.runtimes, self.now, self.runtime.rpc_latency))

    def _on_task_finished(self, stage: int, task_id: str) -> None:
        c = self.ctx[task_id]
        if c.rt.state is SideTaskState.STOPPED:
            return
        c.disposition = "completed"
        self._issue(on_task_finished(self.workers[stage], task_id, self.now, self.runtime.rpc_latency))

    def _on_task_submitted(self, _: int, task_id: str) -> None:
        c = self.ctx[task_id]
        c.submitted = True
        profile = profile_task(c.rt.spec, self.runtime.profile_steps, self.seed)
        c.profile = profile
        c.memory_limit = self.limits.memory_limit_for(task_id, profile.est_memory)
        self.log(
            "profile",
            task=task_id,
            est_step=profile.est_per_step_duration,
            max_step=profile.max_step_duration,
            est_memory=profile.est_memory,
            memory_limit=c.memory_limit,
        )
        wid = submit_task(profile, self.workers)
        self.log("assign", task=task_id, worker=wid)
        if wid is None:
            c.disposition = "rejected"
            return
        c.worker = wid
        c.rt.assigned_worker = wid
        self._issue(
            [
                Rpc(
                    self.now,
                    self.now + self.runtime.rpc_latency,
                    task_id,
                    wid,
                    TransitionKind.CreateSideTask,
                )
            ]
        )

    # ----------------------------------------------------------- task events

    def _current_ctx(self, stage: int) -> _TaskCtx | None:
        tid = self.workers[stage].current_task
        return None if tid is None else self.ctx[tid]

    def _on_rpc(self, stage: int, rpc: Rpc) -> None:
        c = self.ctx[rpc.task_id]
        rt = c.rt
        kind = rpc.kind
        if rt.state is SideTaskState.STOPPED:
            return
        if kind is TransitionKind.CreateSideTask:
            if rt.state is SideTaskState.SUBMITTED:
                self._transition(c, kind)
        elif kind is TransitionKind.InitSideTask:
            if rt.state is SideTaskState.CREATED:
                c.init_requested = True
                self.push(self.now, EventClass.DISPATCH, stage)
        elif kind is TransitionKind.StartSideTask:
            if rt.state is SideTaskState.PAUSED:
                self._transition(c, kind)
                c.bubble_end = rpc.bubble_end
                c.yielded = False
                c.checked = False
                c.pause_pending = False
                self.push(self.now, EventClass.DISPATCH, stage)
        elif kind is TransitionKind.PauseSideTask:
            self._deliver_pause(c)
        elif kind is TransitionKind.StopSideTask:
            self._cut_work(c, completed=False)
            self._transition(c, kind)
            if c.disposition is None:
                c.disposition = "stopped"
            for cls in _FOLLOWUP:
                self.push(self.now, cls, stage)

    def _deliver_pause(self, c: _TaskCtx) -> None:
        rt = c.rt
        busy = c.work is not None and c.work.kind != "overhead"
        if rt.state is SideTaskState.PAUSED:
            if not busy:
                rt.last_paused_timestamp = self.now
            return
        if rt.state is not SideTaskState.RUNNING or rt.spec.ignores_pause:
            return
        if busy:
            c.pause_pending = True
            return
        self._cut_work(c, completed=False)
        self._transition(c, TransitionKind.PauseSideTask)

    def _log_step_transition(self, c: _TaskCtx) -> None:
        self.log(
            "transition",
            task=c.rt.id,
            worker=c.worker,
            transition=TransitionKind.RunNextStep.value,
            src=SideTaskState.RUNNING.value,
            dst=SideTaskState.RUNNING.value,
            memory=c.rt.memory_allocated,
        )

    def _start_work(self, c: _TaskCtx, kind: str, length: int) -> None:
        c.gen += 1
        c.work = _Work(kind, self.now, self.now + length, c.gen)
        self.push(self.now + length, EventClass.WORK_END, c.worker, (c.rt.id, c.gen))
        if kind in ("step", "kernel") and c.rt.spec.leaks:
            k = lim.first_exceeding_busy_tick(c.rt, c.memory_limit)
            if k is not None and c.rt.gpu_busy_ticks < k < c.rt.gpu_busy_ticks + length:
                self.push(
                    self.now + (k - c.rt.gpu_busy_ticks),
                    EventClass.LIMIT,
                    c.worker,
                    ("oom", c.rt.id, c.gen),
                )

    def _cut_work(self, c: _TaskCtx, completed: bool) -> None:
        w = c.work
        if w is None:
            return
        end = w.end if completed else self.now
        self.log(
            "work", task=c.rt.id, worker=c.worker, kind=w.kind, start=w.start, end=end, completed=completed
        )
        c.work = None
        if not completed and w.kind in ("step", "kernel"):
            c.rt.gpu_busy_ticks += end - w.start
            c.rt.busy_until = None

    def _on_work_end(self, stage: int, payload: tuple[str, int]) -> None:
        task_id, gen = payload
        c = self.ctx[task_id]
        if c.work is None or c.work.gen != gen:
            return
        w = c.work
        self._cut_work(c, completed=True)
        rt = c.rt
        if w.kind == "overhead":
            c.checked = True
        elif w.kind == "init":
            rt.init_until = None
            rt.last_paused_timestamp = self.now
            if self._memory_exceeded(c):
                return
            if rt.state is SideTaskState.RUNNING and c.pause_pending:
                c.pause_pending = False
                self._transition(c, TransitionKind.PauseSideTask)
        else:
            complete_work(rt, self.now, w.end - w.start)
            self.log("step", task=task_id, worker=stage, steps=rt.steps_completed)
            if self._memory_exceeded(c):
                return
            if c.pause_pending:
                c.pause_pending = False
                self._transition(c, TransitionKind.PauseSideTask)
            if rt.finished:
                self.push(self.now, EventClass.TASK_FINISHED, stage, task_id)
        for cls in _FOLLOWUP:
            self.push(self.now, cls, stage)

    def _memory_exceeded(self, c: _TaskCtx) -> bool:
        if lim.check_memory(c.rt, c.memory_limit) is LimitAction.KILL:
            self._kill(c, KillReason.OOM)
            return True
        return False

    def _on_limit(self, stage: int, payload: tuple) -> None:
        what, task_id, ref = payload
        c = self.ctx[task_id]
        rt = c.rt
        if rt.state is SideTaskState.STOPPED:
            return
        if what == "oom":
            if c.work is None or c.work.gen != ref:
                return
            rt.memory_allocated = rt.current_memory(self.now - c.work.start)
            self._memory_exceeded(c)
            return
        if rt.state not in (SideTaskState.PAUSED, SideTaskState.RUNNING):
            return
        verdict = lim.framework_enforce(rt, ref, self.now, self.limits.grace_period)
        if verdict is LimitAction.KILL:
            initialising = c.work is not None and c.work.kind == "init"
            self._kill(c, KillReason.INIT_TIMEOUT if initialising else KillReason.PAUSE_TIMEOUT)

    def _kill(self, c: _TaskCtx, reason: KillReason) -> None:
        stage = c.worker
        memory = c.rt.memory_allocated
        self._cut_work(c, completed=False)
        self._transition(c, TransitionKind.StopSideTask)
        c.disposition = f"killed-{reason.value}"
        self.log(
            "kill",
            task=c.rt.id,
            worker=stage,
            reason=reason.value,
            memory=memory,
            released_at=self.now + self.limits.reclamation_delay,
        )
        w = self.workers[stage]
        if w.current_task == c.rt.id:
            w.current_task = None
        for cls in _FOLLOWUP:
            self.push(self.now, cls, stage)

    def _on_dispatch(self, stage: int, _: Any) -> None:
        if self.pipeline_done:
            return
        st = self.stages[stage]
        c = self._current_ctx(stage)
        if c is None or c.work is not None or st.op_running is not None or st.pending_op is not None:
            return
        rt = c.rt
        if c.init_requested and rt.state is SideTaskState.CREATED:
            c.init_requested = False
            self._transition(c, TransitionKind.InitSideTask)
            if self._memory_exceeded(c):
                return
            if rt.spec.init_duration > 0:
                self._start_work(c, "init", rt.spec.init_duration)
            else:
                rt.init_until = None
                rt.last_paused_timestamp = self.now
            return
        if rt.state is not SideTaskState.RUNNING or c.pause_pending or rt.finished:
            return
        if rt.spec.interface is Interface.IMPERATIVE:
            length = step_lengths(rt.spec, c.rng, 1)[0]
            imperative_run(rt, self.now, length)
            self._log_step_transition(c)
            self._start_work(c, "kernel", length)
            return
        if c.yielded:
            return
        overhead = self.runtime.check_overhead
        if overhead > 0 and not c.checked:
            self._start_work(c, "overhead", overhead)
            return
        c.checked = False
        profile = c.profile
        est = profile.est_per_step_duration
        if self.runtime.gate_estimate == "max" and profile.max_step_duration is not None:
            est = profile.max_step_duration
        bubble_end = c.bubble_end if c.bubble_end is not None else self.now
        length = step_lengths(rt.spec, c.rng, 1)[0]
        end = iterative_run(rt, bubble_end, self.now, est, length)
        if end is None:
            c.yielded = True
            self.log("yield", task=rt.id, worker=stage, remaining=bubble_end - self.now)
            return
        self._log_step_transition(c)
        self._start_work(c, "step", length)

    # ---------------------------------------------------------------- finish

    def _finish(self, horizon: int) -> RunTrace:
        self.now = horizon
        for tid in sorted(self.ctx):
            c = self.ctx[tid]
            if c.work is not None:
                self._cut_work(c, completed=False)
        for w in self.workers:
            w.current_bubble = None

        ops = []
        for i, (s, kind, mb, e) in enumerate(self.op_labels):
            ops.append(OpEvent(s, kind, mb, e, self.op_start[i], self.op_end[i]))
        ops.sort(key=lambda o: (o.start, o.stage))
        spans = tuple(
            (self.epoch_release[e], self.epoch_done_at[e]) for e in range(self.pipeline.num_epochs)
        )
        schedule = ScheduleTrace(tuple(ops), spans, self.pipeline)
        bubbles = extract_bubbles(schedule)

        outcomes = {}
        for spec in self.specs:
            c = self.ctx[spec.id]
            disposition = c.disposition
            state = c.rt.state
            if disposition is None or disposition == "stopped":
                disposition = {
                    SideTaskState.SUBMITTED: "queued",
                    SideTaskState.CREATED: "queued",
                    SideTaskState.PAUSED: "paused",
                    SideTaskState.RUNNING: "running",
                    SideTaskState.STOPPED: "stopped",
                }[state]
            outcomes[spec.id] = TaskOutcome(
                spec.id,
                disposition,
                c.worker,
                c.rt.steps_completed,
                c.pauses_requested,
                None if c.profile is None else c.profile.est_memory,
            )
            self.log(
                "outcome",
                task=spec.id,
                disposition=disposition,
                worker=c.worker,
                steps=c.rt.steps_completed,
                pauses=c.pauses_requested,
                state=state.value,
            )
        return RunTrace(
            self.pipeline,
            self.specs,
            self.limits,
            self.runtime,
            self.seed,
            schedule,
            bubbles,
            self.records,
            outcomes,
        )


def run(
    pipeline: PipelineConfig,
    tasks: list[SideTaskSpec] | tuple[SideTaskSpec, ...] = (),
    limits: LimitConfig | None = None,
    seed: int = 0,
    runtime: RuntimeConfig | None = None,
) -> RunTrace:
    """Simulate the whole experiment once and return its trace."""
    return Engine(pipeline, tasks, limits, seed, runtime).run()
