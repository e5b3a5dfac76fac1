"""Side-task lifecycle state machine and the two programming interfaces."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field


class SideTaskState(enum.Enum):
    SUBMITTED = "SUBMITTED"
    CREATED = "CREATED"
    PAUSED = "PAUSED"
    RUNNING = "RUNNING"
    STOPPED = "STOPPED"


class TransitionKind(enum.Enum):
    CreateSideTask = "CreateSideTask"
    InitSideTask = "InitSideTask"
    StartSideTask = "StartSideTask"
    RunNextStep = "RunNextStep"
    PauseSideTask = "PauseSideTask"
    StopSideTask = "StopSideTask"


class Interface(enum.Enum):
    ITERATIVE = "iterative"
    IMPERATIVE = "imperative"


class Misbehavior(enum.Enum):
    NONE = "none"
    IGNORES_PAUSE = "ignores_pause"
    MEMORY_LEAK = "memory_leak"


_S = SideTaskState
_T = TransitionKind

LEGAL_TRANSITIONS: dict[tuple[SideTaskState, TransitionKind], SideTaskState] = {
    (_S.SUBMITTED, _T.CreateSideTask): _S.CREATED,
    (_S.CREATED, _T.InitSideTask): _S.PAUSED,
    (_S.PAUSED, _T.StartSideTask): _S.RUNNING,
    (_S.RUNNING, _T.RunNextStep): _S.RUNNING,
    (_S.RUNNING, _T.PauseSideTask): _S.PAUSED,
    (_S.CREATED, _T.StopSideTask): _S.STOPPED,
    (_S.PAUSED, _T.StopSideTask): _S.STOPPED,
    (_S.RUNNING, _T.StopSideTask): _S.STOPPED,
}


class IllegalTransition(Exception):
    def __init__(self, from_state: SideTaskState, kind: TransitionKind) -> None:
        super().__init__(f"{kind.value} is not allowed from {from_state.value}")
        self.from_state = from_state
        self.kind = kind


@dataclass(frozen=True)
class SideTaskSpec:
    """Behaviour of one side task. Durations are in ticks, memory in GiB.

    For imperative tasks ``per_step_duration`` is the length of one GPU
    kernel; ``total_steps=None`` means the task runs until the experiment ends.
    ``leak_rate`` is GiB per tick of GPU work and only matters for
    ``Misbehavior.MEMORY_LEAK``. ``step_jitter`` is the half-width of the
    uniform multiplicative noise on each step's length.
    """

    id: str
    interface: Interface = Interface.ITERATIVE
    per_step_duration: int = 1
    total_steps: int | None = None
    init_duration: int = 0
    memory_demand: float = 0.0
    misbehavior: Misbehavior = Misbehavior.NONE
    leak_rate: float = 0.0
    submit_time: int = 0
    step_jitter: float = 0.0

    def validate(self) -> "SideTaskSpec":
        from pipebubble.pipeline import ConfigError

        where = f"tasks[{self.id}]"
        if not self.id:
            raise ConfigError(f"{where}.id", "must be non-empty")
        if not isinstance(self.per_step_duration, int) or self.per_step_duration <= 0:
            raise ConfigError(f"{where}.per_step_duration", "must be a positive tick count")
        if self.total_steps is not None and self.total_steps < 1:
            raise ConfigError(f"{where}.total_steps", "must be positive or unbounded")
        if self.init_duration < 0:
            raise ConfigError(f"{where}.init_duration", "must be non-negative")
        if self.memory_demand < 0:
            raise ConfigError(f"{where}.memory_demand", "must be non-negative")
        if self.leak_rate < 0:
            raise ConfigError(f"{where}.leak_rate", "must be non-negative")
        if self.submit_time < 0:
            raise ConfigError(f"{where}.submit_time", "must be non-negative")
        if not 0 <= self.step_jitter < 1:
            raise ConfigError(f"{where}.step_jitter", "must be in [0, 1)")
        return self

    @property
    def leaks(self) -> bool:
        return self.misbehavior is Misbehavior.MEMORY_LEAK and self.leak_rate > 0

    @property
    def ignores_pause(self) -> bool:
        return self.misbehavior is Misbehavior.IGNORES_PAUSE


@dataclass
class SideTaskRuntime:
    spec: SideTaskSpec
    state: SideTaskState = SideTaskState.SUBMITTED
    steps_completed: int = 0
    memory_allocated: float = 0.0
    last_paused_timestamp: int | None = None
    assigned_worker: int | None = None
    busy_until: int | None = None
    # GPU ticks spent on steps/kernels; drives leak accrual
    gpu_busy_ticks: int = 0
    # set while InitSideTask occupies the GPU (state is already PAUSED)
    init_until: int | None = None
    history: list[tuple[int, TransitionKind, SideTaskState]] = field(default_factory=list)

    @property
    def id(self) -> str:
        return self.spec.id

    @property
    def finished(self) -> bool:
        total = self.spec.total_steps
        return total is not None and self.steps_completed >= total

    def current_memory(self, extra_busy_ticks: int = 0) -> float:
        """Allocation after ``extra_busy_ticks`` more ticks of GPU work."""
        if self.state in (SideTaskState.PAUSED, SideTaskState.RUNNING):
            return memory_after(self.spec, self.gpu_busy_ticks + extra_busy_ticks)
        return 0.0


def memory_after(spec: SideTaskSpec, busy_ticks: int) -> float:
    if spec.leaks:
        return spec.memory_demand + spec.leak_rate * busy_ticks
    return spec.memory_demand


def apply_transition(rt: SideTaskRuntime, kind: TransitionKind, now: int) -> SideTaskRuntime:
    """Move ``rt`` along one edge of the lifecycle graph, in place."""
    target = LEGAL_TRANSITIONS.get((rt.state, kind))
    if target is None:
        raise IllegalTransition(rt.state, kind)
    rt.state = target
    if kind is TransitionKind.InitSideTask:
        rt.memory_allocated = rt.spec.memory_demand
        rt.init_until = now + rt.spec.init_duration
    elif kind is TransitionKind.StartSideTask:
        rt.busy_until = None
    elif kind is TransitionKind.PauseSideTask:
        rt.busy_until = None
        rt.last_paused_timestamp = now
    elif kind is TransitionKind.StopSideTask:
        rt.memory_allocated = 0.0
        rt.busy_until = None
        rt.init_until = None
    rt.history.append((now, kind, target))
    return rt


def iterative_run(
    rt: SideTaskRuntime,
    bubble_end: int,
    now: int,
    est_step: float | None = None,
    step_length: int | None = None,
) -> int | None:
    """One pass of the iterative loop: run the next step if it fits.

    The next step runs only when the time left in the bubble strictly exceeds
    the profiled step estimate. Returns the step's end tick, or ``None`` when
    the task yields until its next transition.
    """
    if rt.state is not SideTaskState.RUNNING or rt.spec.interface is not Interface.ITERATIVE:
        raise IllegalTransition(rt.state, TransitionKind.RunNextStep)
    if rt.finished:
        return None
    est = rt.spec.per_step_duration if est_step is None else est_step
    if not rt.spec.ignores_pause and not bubble_end - now > est:
        return None
    apply_transition(rt, TransitionKind.RunNextStep, now)
    rt.busy_until = now + (rt.spec.per_step_duration if step_length is None else step_length)
    return rt.busy_until


def imperative_run(rt: SideTaskRuntime, now: int, kernel_length: int | None = None) -> int:
    """Launch the next kernel back to back; no remaining-time check."""
    if rt.state is not SideTaskState.RUNNING or rt.spec.interface is not Interface.IMPERATIVE:
        raise IllegalTransition(rt.state, TransitionKind.RunNextStep)
    apply_transition(rt, TransitionKind.RunNextStep, now)
    rt.busy_until = now + (rt.spec.per_step_duration if kernel_length is None else kernel_length)
    return rt.busy_until


def complete_work(rt: SideTaskRuntime, now: int, ticks: int) -> None:
    """Book a finished step or kernel."""
    rt.steps_completed += 1
    rt.gpu_busy_ticks += ticks
    rt.memory_allocated = memory_after(rt.spec, rt.gpu_busy_ticks)
    rt.busy_until = None


def pause_effective_time(rt: SideTaskRuntime, requested_at: int) -> int | None:
    """When a pause requested at ``requested_at`` actually takes hold.

    In-flight kernels cannot be interrupted, so a busy task pauses at the end
    of its current step or kernel. ``None`` means it never pauses.
    """
    if rt.spec.ignores_pause:
        return None
    if rt.busy_until is not None and rt.busy_until > requested_at:
        return rt.busy_until
    return requested_at
