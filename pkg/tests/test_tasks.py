import itertools

import pytest

from pipebubble.pipeline import ConfigError
from pipebubble.tasks import (
    LEGAL_TRANSITIONS,
    IllegalTransition,
    Interface,
    Misbehavior,
    SideTaskRuntime,
    SideTaskSpec,
    SideTaskState,
    TransitionKind,
    apply_transition,
    complete_work,
    imperative_run,
    iterative_run,
    memory_after,
    pause_effective_time,
)
from tests.oracles import iterative_steps_in

S = SideTaskState
T = TransitionKind


def running(spec):
    rt = SideTaskRuntime(spec)
    for kind in (T.CreateSideTask, T.InitSideTask, T.StartSideTask):
        apply_transition(rt, kind, 0)
    return rt


def test_create_leaves_gpu_memory_untouched():
    rt = SideTaskRuntime(SideTaskSpec("a", memory_demand=3.0))
    apply_transition(rt, T.CreateSideTask, 5)
    assert rt.state is S.CREATED and rt.memory_allocated == 0


def test_init_claims_memory_and_parks_paused():
    rt = SideTaskRuntime(SideTaskSpec("a", memory_demand=3.0, init_duration=4))
    apply_transition(rt, T.CreateSideTask, 0)
    apply_transition(rt, T.InitSideTask, 2)
    assert rt.state is S.PAUSED and rt.memory_allocated == 3.0 and rt.init_until == 6


def test_start_then_pause_records_timestamp():
    rt = running(SideTaskSpec("a"))
    apply_transition(rt, T.PauseSideTask, 17)
    assert rt.state is S.PAUSED and rt.last_paused_timestamp == 17


def test_stop_releases_memory():
    rt = running(SideTaskSpec("a", memory_demand=2.0))
    apply_transition(rt, T.StopSideTask, 3)
    assert rt.state is S.STOPPED and rt.memory_allocated == 0


def test_run_next_step_from_created_is_illegal():
    rt = SideTaskRuntime(SideTaskSpec("a"))
    apply_transition(rt, T.CreateSideTask, 0)
    with pytest.raises(IllegalTransition):
        apply_transition(rt, T.RunNextStep, 1)


def test_transition_table_is_exactly_the_lifecycle_graph():
    expected = {
        (S.SUBMITTED, T.CreateSideTask): S.CREATED,
        (S.CREATED, T.InitSideTask): S.PAUSED,
        (S.PAUSED, T.StartSideTask): S.RUNNING,
        (S.RUNNING, T.RunNextStep): S.RUNNING,
        (S.RUNNING, T.PauseSideTask): S.PAUSED,
        (S.CREATED, T.StopSideTask): S.STOPPED,
        (S.PAUSED, T.StopSideTask): S.STOPPED,
        (S.RUNNING, T.StopSideTask): S.STOPPED,
    }
    assert LEGAL_TRANSITIONS == expected


@pytest.mark.parametrize("state,kind", list(itertools.product(S, T)))
def test_every_pair_is_either_legal_or_rejected(state, kind):
    rt = SideTaskRuntime(SideTaskSpec("a"), state=state)
    if (state, kind) in LEGAL_TRANSITIONS:
        assert apply_transition(rt, kind, 0).state is LEGAL_TRANSITIONS[(state, kind)]
    else:
        with pytest.raises(IllegalTransition):
            apply_transition(rt, kind, 0)
        assert rt.state is state


def test_stopped_is_terminal():
    rt = SideTaskRuntime(SideTaskSpec("a"), state=S.STOPPED)
    for kind in T:
        with pytest.raises(IllegalTransition):
            apply_transition(rt, kind, 0)


# --------------------------------------------------------------- iterative


def test_resnet_like_steps_in_one_second_bubble():
    # 0.1 ms ticks: a 30.4 ms step is 304 ticks, a 1 s bubble is 10000
    rt = running(SideTaskSpec("r", per_step_duration=304))
    now, steps = 0, 0
    while (end := iterative_run(rt, 10000, now)) is not None:
        complete_work(rt, end, end - now)
        now, steps = end, steps + 1
    assert steps == 32 == iterative_steps_in(10000, 304)
    assert rt.steps_completed == 32


def test_gate_is_strict():
    rt = running(SideTaskSpec("r", per_step_duration=304))
    assert iterative_run(rt, 304, 0) is None
    assert iterative_run(rt, 305, 0) == 304


@pytest.mark.parametrize("bubble", range(1, 40))
@pytest.mark.parametrize("step", [1, 3, 7])
def test_steps_per_bubble_match_loop(bubble, step):
    rt = running(SideTaskSpec("r", per_step_duration=step))
    now = 0
    while (end := iterative_run(rt, bubble, now)) is not None:
        complete_work(rt, end, step)
        now = end
    assert rt.steps_completed == iterative_steps_in(bubble, step)
    assert rt.steps_completed == max(0, -(-bubble // step) - 1)


def test_finished_task_does_not_step():
    rt = running(SideTaskSpec("r", per_step_duration=2, total_steps=1))
    end = iterative_run(rt, 100, 0)
    complete_work(rt, end, 2)
    assert rt.finished and iterative_run(rt, 100, end) is None


def test_ignores_pause_task_skips_the_gate():
    rt = running(SideTaskSpec("r", per_step_duration=5, misbehavior=Misbehavior.IGNORES_PAUSE))
    assert iterative_run(rt, 2, 0) == 5


# -------------------------------------------------------------- imperative


def test_pause_lands_at_kernel_boundary():
    # 0.1 s ticks: kernel from 10.0 s for 0.5 s, pause asked at 10.2 s
    spec = SideTaskSpec("k", interface=Interface.IMPERATIVE, per_step_duration=5)
    rt = running(spec)
    assert imperative_run(rt, 100) == 105
    assert pause_effective_time(rt, 102) == 105
    assert pause_effective_time(rt, 102) - 102 == 3


def test_idle_task_pauses_immediately():
    rt = running(SideTaskSpec("k", interface=Interface.IMPERATIVE))
    assert pause_effective_time(rt, 40) == 40


def test_ignores_pause_never_pauses():
    rt = running(SideTaskSpec("k", misbehavior=Misbehavior.IGNORES_PAUSE))
    assert pause_effective_time(rt, 40) is None


def test_kernels_tile_a_bubble_and_spill_less_than_one_kernel():
    for bubble in range(1, 50):
        for k in (1, 4, 9):
            rt = running(SideTaskSpec("k", interface=Interface.IMPERATIVE, per_step_duration=k))
            now = 0
            while now < bubble:
                now = imperative_run(rt, now)
                complete_work(rt, now, k)
            assert rt.steps_completed == -(-bubble // k)
            assert 0 <= now - bubble < k


def test_imperative_run_rejects_iterative_tasks():
    rt = running(SideTaskSpec("r"))
    with pytest.raises(IllegalTransition):
        imperative_run(rt, 0)


# ------------------------------------------------------------------ memory


def test_leak_grows_with_busy_ticks():
    spec = SideTaskSpec("l", memory_demand=1.0, misbehavior=Misbehavior.MEMORY_LEAK, leak_rate=0.25)
    assert memory_after(spec, 0) == 1.0
    assert memory_after(spec, 8) == 3.0
    assert memory_after(SideTaskSpec("n", memory_demand=1.0, leak_rate=0.25), 8) == 1.0


@pytest.mark.parametrize(
    "kwargs,field",
    [
        (dict(id=""), "id"),
        (dict(id="a", per_step_duration=0), "per_step_duration"),
        (dict(id="a", total_steps=0), "total_steps"),
        (dict(id="a", memory_demand=-1), "memory_demand"),
        (dict(id="a", step_jitter=1.0), "step_jitter"),
    ],
)
def test_spec_validation(kwargs, field):
    with pytest.raises(ConfigError) as info:
        SideTaskSpec(**kwargs).validate()
    assert info.value.field.endswith(field)
