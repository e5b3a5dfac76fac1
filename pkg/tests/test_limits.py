import pytest

from pipebubble.limits import (
    LimitAction,
    LimitConfig,
    check_memory,
    first_exceeding_busy_tick,
    framework_enforce,
    program_directed_gate,
)
from pipebubble.pipeline import ConfigError
from pipebubble.tasks import Misbehavior, SideTaskRuntime, SideTaskSpec, SideTaskState, memory_after


def rt_with(mem, state=SideTaskState.RUNNING, **spec):
    return SideTaskRuntime(SideTaskSpec("t", **spec), state=state, memory_allocated=mem)


def test_allocation_equal_to_limit_is_fine():
    assert check_memory(rt_with(8.0), 8.0) is LimitAction.OK


def test_allocation_above_limit_kills():
    assert check_memory(rt_with(8.0001), 8.0) is LimitAction.KILL


def test_first_exceeding_tick_matches_scan():
    for rate in (0.5, 0.01, 0.3, 2e-4):
        spec = SideTaskSpec("l", memory_demand=2.63, misbehavior=Misbehavior.MEMORY_LEAK, leak_rate=rate)
        rt = SideTaskRuntime(spec)
        k = first_exceeding_busy_tick(rt, 8.0)
        assert memory_after(spec, k) > 8.0
        assert not memory_after(spec, k - 1) > 8.0


def test_well_behaved_task_never_exceeds():
    rt = SideTaskRuntime(SideTaskSpec("t", memory_demand=2.0))
    assert first_exceeding_busy_tick(rt, 3.0) is None
    assert first_exceeding_busy_tick(rt, 1.0) == 0


def test_gate_examples():
    assert program_directed_gate(500, 304) is True
    assert program_directed_gate(304, 304) is False
    assert program_directed_gate(0.05, 0.0304) is True
    assert program_directed_gate(0.0304, 0.0304) is False


def test_missed_pause_is_killed_after_grace():
    # 10 ms ticks: pause at 10.0 s, grace 0.1 s
    rt = rt_with(1.0)
    assert framework_enforce(rt, 1000, 1009, 10) is LimitAction.OK
    assert framework_enforce(rt, 1000, 1010, 10) is LimitAction.KILL


def test_pause_within_grace_is_not_killed():
    rt = rt_with(1.0, state=SideTaskState.PAUSED)
    rt.last_paused_timestamp = 1005
    assert framework_enforce(rt, 1000, 1010, 10) is LimitAction.OK


def test_stopped_task_is_left_alone():
    assert framework_enforce(rt_with(0.0, state=SideTaskState.STOPPED), 0, 100, 10) is LimitAction.OK


def test_limit_for_uses_override_or_headroom():
    cfg = LimitConfig(memory_headroom=0.5, memory_limits={"x": 8.0})
    assert cfg.memory_limit_for("x", 2.0) == 8.0
    assert cfg.memory_limit_for("y", 2.0) == 2.5


@pytest.mark.parametrize(
    "kwargs,field",
    [
        (dict(grace_period=0), "limits.grace_period"),
        (dict(memory_headroom=-1), "limits.memory_headroom"),
        (dict(memory_limits={"a": -1}), "limits.memory_limits.a"),
        (dict(reclamation_delay=-1), "limits.reclamation_delay"),
    ],
)
def test_limit_config_validation(kwargs, field):
    with pytest.raises(ConfigError) as info:
        LimitConfig(**kwargs).validate()
    assert info.value.field == field
