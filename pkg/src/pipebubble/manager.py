"""Side task manager: worker assignment and bubble-driven state transitions."""

from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass, field
from typing import Mapping

from pipebubble.pipeline import Bubble
from pipebubble.profiler import TaskProfile
from pipebubble.tasks import SideTaskRuntime, SideTaskState, TransitionKind


@dataclass
class WorkerState:
    worker_id: int
    gpu_mem: float
    task_queue: deque[str] = field(default_factory=deque)
    current_task: str | None = None
    current_bubble: Bubble | None = None

    def task_count(self) -> int:
        return len(self.task_queue) + (1 if self.current_task is not None else 0)


class ManagerEventKind(enum.IntEnum):
    # value is the processing priority among events at the same tick
    BubbleEnded = 0
    TaskFinished = 1
    TaskSubmitted = 2
    BubbleStarted = 3


@dataclass(frozen=True)
class ManagerEvent:
    kind: ManagerEventKind
    time: int
    worker: int | None = None
    bubble: Bubble | None = None
    profile: TaskProfile | None = None
    task_id: str | None = None


@dataclass(frozen=True)
class Rpc:
    """A transition request from the manager; it lands at ``deliver_at``."""

    issued_at: int
    deliver_at: int
    task_id: str
    worker_id: int
    kind: TransitionKind
    bubble_end: int | None = None


def submit_task(profile: TaskProfile, workers: list[WorkerState]) -> int | None:
    """Assign a new task to the least-loaded worker with strictly more free memory.

    Ties go to the lowest worker id. Returns the worker id, or ``None`` when
    the task is rejected for lack of memory everywhere.
    """
    selected = None
    min_tasks = None
    for worker in workers:
        if worker.gpu_mem > profile.est_memory:
            n = worker.task_count()
            if min_tasks is None or n < min_tasks:
                min_tasks = n
                selected = worker
    if selected is None:
        return None
    selected.task_queue.append(profile.task_id)
    return selected.worker_id


def on_bubble_ended(worker: WorkerState, now: int, rpc_latency: int = 0) -> list[Rpc]:
    rpcs = []
    if worker.current_task is not None:
        rpcs.append(
            Rpc(now, now + rpc_latency, worker.current_task, worker.worker_id, TransitionKind.PauseSideTask)
        )
    worker.current_bubble = None
    return rpcs


def on_bubble_started(
    worker: WorkerState,
    bubble: Bubble,
    tasks: Mapping[str, SideTaskRuntime],
    now: int,
    rpc_latency: int = 0,
) -> list[Rpc]:
    worker.current_bubble = bubble
    if worker.current_task is None:
        if not worker.task_queue:
            return []
        worker.current_task = worker.task_queue.popleft()
    rt = tasks[worker.current_task]
    deliver = now + rpc_latency
    if rt.state is SideTaskState.CREATED:
        return [Rpc(now, deliver, rt.id, worker.worker_id, TransitionKind.InitSideTask)]
    if rt.state is SideTaskState.PAUSED:
        return [Rpc(now, deliver, rt.id, worker.worker_id, TransitionKind.StartSideTask, bubble.end)]
    return []


def on_task_finished(worker: WorkerState, task_id: str, now: int, rpc_latency: int = 0) -> list[Rpc]:
    if worker.current_task == task_id:
        worker.current_task = None
    return [Rpc(now, now + rpc_latency, task_id, worker.worker_id, TransitionKind.StopSideTask)]


@dataclass
class TickResult:
    rpcs: list[Rpc] = field(default_factory=list)
    assignments: dict[str, int | None] = field(default_factory=dict)


def manager_tick(
    workers: list[WorkerState],
    events: list[ManagerEvent],
    tasks: Mapping[str, SideTaskRuntime],
    now: int,
    rpc_latency: int = 0,
) -> TickResult:
    """Process every event due at ``now`` in the fixed order, then by worker id.

    Order: bubble ends, task completions, submissions, bubble starts. A
    worker's pause is therefore always issued before a same-tick bubble start.
    """
    result = TickResult()
    due = sorted(
        (ev for ev in events if ev.time <= now),
        key=lambda ev: (ev.time, ev.kind, -1 if ev.worker is None else ev.worker),
    )
    for ev in due:
        if ev.kind is ManagerEventKind.BubbleEnded:
            result.rpcs += on_bubble_ended(workers[ev.worker], now, rpc_latency)
        elif ev.kind is ManagerEventKind.TaskFinished:
            result.rpcs += on_task_finished(workers[ev.worker], ev.task_id, now, rpc_latency)
        elif ev.kind is ManagerEventKind.TaskSubmitted:
            wid = submit_task(ev.profile, workers)
            result.assignments[ev.profile.task_id] = wid
            if wid is not None:
                result.rpcs.append(
                    Rpc(now, now + rpc_latency, ev.profile.task_id, wid, TransitionKind.CreateSideTask)
                )
        else:
            result.rpcs += on_bubble_started(workers[ev.worker], ev.bubble, tasks, now, rpc_latency)
    return result
