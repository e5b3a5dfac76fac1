"""GPU resource limits for side tasks: memory cap and the two execution-time limits."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

from pipebubble.tasks import SideTaskRuntime, SideTaskState


class LimitAction(enum.Enum):
    OK = "ok"
    KILL = "kill"


class KillReason(enum.Enum):
    OOM = "oom"
    PAUSE_TIMEOUT = "pause-timeout"
    INIT_TIMEOUT = "init-timeout"


@dataclass(frozen=True)
class LimitConfig:
    """Durations in ticks, memory in GiB.

    The per-task memory limit is the profiled estimate plus ``memory_headroom``
    unless ``memory_limits`` names the task explicitly.
    """

    grace_period: int = 100
    memory_headroom: float = 0.0
    memory_limits: dict[str, float] = field(default_factory=dict)
    reclamation_delay: int = 0

    def validate(self) -> "LimitConfig":
        from pipebubble.pipeline import ConfigError

        if self.grace_period <= 0:
            raise ConfigError("limits.grace_period", "must be positive")
        if self.memory_headroom < 0:
            raise ConfigError("limits.memory_headroom", "must be non-negative")
        for task_id, limit in self.memory_limits.items():
            if limit < 0:
                raise ConfigError(f"limits.memory_limits.{task_id}", "must be non-negative")
        if self.reclamation_delay < 0:
            raise ConfigError("limits.reclamation_delay", "must be non-negative")
        return self

    def memory_limit_for(self, task_id: str, est_memory: float) -> float:
        if task_id in self.memory_limits:
            return self.memory_limits[task_id]
        return est_memory + self.memory_headroom


def check_memory(rt: SideTaskRuntime, limit: float) -> LimitAction:
    """Kill when the allocation strictly exceeds the limit."""
    return LimitAction.KILL if rt.memory_allocated > limit else LimitAction.OK


def first_exceeding_busy_tick(rt: SideTaskRuntime, limit: float) -> int | None:
    """Smallest total of GPU-busy ticks at which a leaking task exceeds ``limit``.

    Searches around the analytic crossing with the same float expression used
    for the allocation itself, so the result agrees with ``check_memory``.
    """
    spec = rt.spec
    if not spec.leaks:
        return 0 if spec.memory_demand > limit else None
    if spec.memory_demand > limit:
        return 0
    k = max(0, int((limit - spec.memory_demand) / spec.leak_rate))
    while k > 0 and spec.memory_demand + spec.leak_rate * (k - 1) > limit:
        k -= 1
    while not spec.memory_demand + spec.leak_rate * k > limit:
        k += 1
    return k


def program_directed_gate(remaining: float, est_step: float) -> bool:
    """True when the next step may run: remaining time strictly exceeds the estimate."""
    return remaining > est_step


def framework_enforce(rt: SideTaskRuntime, pause_issued_at: int, now: int, grace: int) -> LimitAction:
    """Grace-period check after a pause (or an initialisation that had to end).

    Kills when, once the grace period has elapsed, the last paused timestamp
    has not moved since the pause was issued.
    """
    if now < pause_issued_at + grace or rt.state is SideTaskState.STOPPED:
        return LimitAction.OK
    if rt.last_paused_timestamp is None or rt.last_paused_timestamp < pause_issued_at:
        return LimitAction.KILL
    return LimitAction.OK
