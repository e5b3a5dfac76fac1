import random

import pytest

from pipebubble.pipeline import ConfigError, PipelineConfig, build_schedule, extract_bubbles
from pipebubble.profiler import profile_bubbles, profile_task, step_lengths, task_rng
from pipebubble.tasks import Interface, Misbehavior, SideTaskSpec


def test_resnet_like_profile():
    spec = SideTaskSpec("r", per_step_duration=304, memory_demand=2.63)
    prof = profile_task(spec, n_steps=10)
    assert prof.est_per_step_duration * 0.0001 == pytest.approx(0.0304)
    assert prof.est_memory == 2.63


def test_imperative_profile_has_no_step_estimate():
    spec = SideTaskSpec("k", interface=Interface.IMPERATIVE, per_step_duration=50, memory_demand=4.0)
    prof = profile_task(spec)
    assert prof.est_per_step_duration is None and prof.est_memory == 4.0


def test_leak_visible_in_profile():
    spec = SideTaskSpec("l", per_step_duration=10, memory_demand=1.0, misbehavior=Misbehavior.MEMORY_LEAK, leak_rate=0.01)
    prof = profile_task(spec, n_steps=32)
    assert prof.est_memory == pytest.approx(1.0 + 0.01 * 10 * 32)


def test_jitter_profile_is_sample_mean_and_seeded():
    spec = SideTaskSpec("j", per_step_duration=100, step_jitter=0.3)
    a = profile_task(spec, 32, seed=4)
    b = profile_task(spec, 32, seed=4)
    assert a == b
    lengths = step_lengths(spec, task_rng(4, "j", "profile"), 32)
    assert a.est_per_step_duration == sum(lengths) / 32
    assert a.max_step_duration == max(lengths)
    assert all(70 <= x <= 130 for x in lengths)


def test_noise_free_lengths_are_exact():
    spec = SideTaskSpec("n", per_step_duration=7)
    assert step_lengths(spec, random.Random(0), 5) == [7] * 5


def test_profile_needs_a_step():
    with pytest.raises(ValueError):
        profile_task(SideTaskSpec("a"), n_steps=0)


def test_single_stage_bubble_profile_is_empty():
    prof = profile_bubbles(PipelineConfig(1, 4, 1, 2))
    assert prof.stages[0].durations == () and prof.bubble_rate == 0


def test_bubble_profile_rate_equal_ops():
    assert profile_bubbles(PipelineConfig(4, 4, 1, 1)).bubble_rate == pytest.approx(3 / 7)


def test_bubble_profile_matches_one_epoch_extraction():
    cfg = PipelineConfig(4, 4, 1, 2, num_epochs=5, stage_memory=(40, 30, 20, 10))
    prof = profile_bubbles(cfg)
    one = extract_bubbles(build_schedule(PipelineConfig(4, 4, 1, 2)))
    for s in range(4):
        assert prof.stages[s].durations == tuple(b.duration for b in one if b.stage == s)
        assert prof.stages[s].available_memory == 48 - cfg.stage_memory[s]


def test_bubble_profile_propagates_validation():
    with pytest.raises(ConfigError):
        profile_bubbles(PipelineConfig(0, 4))
