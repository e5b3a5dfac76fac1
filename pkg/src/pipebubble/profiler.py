"""Offline profiling of side tasks and of the pipeline's bubbles."""

from __future__ import annotations

import random
from dataclasses import dataclass

from pipebubble.pipeline import PipelineConfig, bubble_rate, build_schedule, extract_bubbles
from pipebubble.tasks import Interface, SideTaskSpec, memory_after

DEFAULT_PROFILE_STEPS = 32


@dataclass(frozen=True)
class TaskProfile:
    task_id: str
    est_per_step_duration: float | None
    est_memory: float
    profiled_steps: int
    max_step_duration: int | None = None


@dataclass(frozen=True)
class StageBubbles:
    durations: tuple[int, ...]
    available_memory: float


@dataclass(frozen=True)
class BubbleProfile:
    stages: tuple[StageBubbles, ...]
    bubble_rate: float


def step_lengths(spec: SideTaskSpec, rng: random.Random, count: int) -> list[int]:
    """Actual step lengths in ticks under the task's multiplicative jitter."""
    if spec.step_jitter == 0:
        return [spec.per_step_duration] * count
    out = []
    for _ in range(count):
        factor = 1.0 + rng.uniform(-spec.step_jitter, spec.step_jitter)
        out.append(max(1, round(spec.per_step_duration * factor)))
    return out


def task_rng(seed: int, task_id: str, stream: str) -> random.Random:
    return random.Random(f"{seed}:{stream}:{task_id}")


def profile_task(spec: SideTaskSpec, n_steps: int = DEFAULT_PROFILE_STEPS, seed: int = 0) -> TaskProfile:
    """Run the task alone on a dedicated GPU for ``n_steps`` and measure it.

    Iterative tasks get the mean observed step length; imperative tasks are
    not step-wise from the tool's point of view, so only memory is measured.
    """
    if n_steps < 1:
        raise ValueError("n_steps must be at least 1")
    lengths = step_lengths(spec, task_rng(seed, spec.id, "profile"), n_steps)
    peak = memory_after(spec, sum(lengths))
    if spec.interface is Interface.IMPERATIVE:
        return TaskProfile(spec.id, None, peak, n_steps)
    return TaskProfile(spec.id, sum(lengths) / n_steps, peak, n_steps, max(lengths))


def profile_bubbles(config: PipelineConfig) -> BubbleProfile:
    """Dry-run one epoch of the pipeline and collect bubble shapes per stage."""
    one = PipelineConfig(
        config.num_stages,
        config.num_micro_batches,
        config.fp_duration,
        config.bp_duration,
        1,
        config.gpu_memory_total,
        config.stage_memory,
        config.tick,
    )
    trace = build_schedule(one)
    bubbles = extract_bubbles(trace)
    stages = tuple(
        StageBubbles(
            tuple(b.duration for b in bubbles if b.stage == s),
            config.available_memory(s),
        )
        for s in range(config.num_stages)
    )
    return BubbleProfile(stages, bubble_rate(trace, bubbles))
