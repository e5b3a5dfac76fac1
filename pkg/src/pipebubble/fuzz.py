"""Random small experiments for invariant fuzzing."""

from __future__ import annotations

import random
from dataclasses import dataclass

from pipebubble.engine import RunTrace, RuntimeConfig, run
from pipebubble.limits import LimitConfig
from pipebubble.pipeline import PipelineConfig
from pipebubble.tasks import Interface, Misbehavior, SideTaskSpec


@dataclass(frozen=True)
class FuzzCase:
    seed: int
    pipeline: PipelineConfig
    tasks: tuple[SideTaskSpec, ...]
    limits: LimitConfig
    runtime: RuntimeConfig

    def run(self) -> RunTrace:
        return run(self.pipeline, self.tasks, self.limits, self.seed, self.runtime)


def random_case(seed: int) -> FuzzCase:
    rng = random.Random(seed)
    p = rng.randint(1, 5)
    m = rng.randint(1, 6)

    def durations(lo, hi):
        if rng.random() < 0.3:
            return tuple(rng.randint(lo, hi) for _ in range(p))
        return rng.randint(lo, hi)

    total = 16.0
    stage_memory = tuple(round(rng.uniform(0, total), 2) for _ in range(p))
    pipeline = PipelineConfig(
        p,
        m,
        durations(1, 6),
        durations(1, 10),
        num_epochs=rng.randint(1, 3),
        gpu_memory_total=total,
        stage_memory=stage_memory,
    )
    tasks = []
    for i in range(rng.randint(0, 5)):
        misbehavior = rng.choice([Misbehavior.NONE] * 3 + [Misbehavior.IGNORES_PAUSE, Misbehavior.MEMORY_LEAK])
        tasks.append(
            SideTaskSpec(
                id=f"t{i}",
                interface=rng.choice(list(Interface)),
                per_step_duration=rng.randint(1, 6),
                total_steps=rng.choice([None, rng.randint(1, 20)]),
                init_duration=rng.choice([0, 0, rng.randint(1, 4)]),
                memory_demand=round(rng.uniform(0, 8), 2),
                misbehavior=misbehavior,
                leak_rate=round(rng.uniform(0.01, 0.5), 3) if misbehavior is Misbehavior.MEMORY_LEAK else 0.0,
                submit_time=rng.choice([0, rng.randint(0, 40)]),
                step_jitter=rng.choice([0.0, 0.0, round(rng.uniform(0, 0.5), 2)]),
            )
        )
    rpc_latency = rng.choice([0, 0, 1, 2])
    limits = LimitConfig(
        grace_period=rng.randint(rpc_latency + 1, 12),
        memory_headroom=rng.choice([0.0, 0.5]),
        reclamation_delay=rng.choice([0, 0, 2]),
    )
    runtime = RuntimeConfig(
        check_overhead=rng.choice([0, 1, 1, 2]),
        rpc_latency=rpc_latency,
        profile_steps=rng.choice([4, 32]),
        gate_estimate=rng.choice(["mean", "max"]),
    )
    return FuzzCase(seed, pipeline, tuple(tasks), limits, runtime)
