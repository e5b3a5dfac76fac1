"""Acceptance gate. Each test prints one PASS/FAIL line; tolerances are pinned below."""

import random
import time
from dataclasses import replace

import pytest
import yaml

from pipebubble import cli
from pipebubble import config as cfgmod
from pipebubble.engine import run
from pipebubble.fuzz import random_case
from pipebubble.manager import WorkerState, submit_task
from pipebubble.metrics import PriceConfig, bubble_breakdown, cost_savings
from pipebubble.pipeline import BubbleType, PipelineConfig, build_schedule, bubble_rate, extract_bubbles
from pipebubble.profiler import TaskProfile
from pipebubble.replay import replay_check
from pipebubble.tasks import Interface
from tests.oracles import assignment_exhaustive, dag_schedule

pytestmark = pytest.mark.acceptance

# pinned tolerances and budgets
RATE_TOL = 0.05
MEASURED_RATE_M4 = 0.424
MEASURED_RATE_M8 = 0.262
RATE_BUDGET_S = 1.0
ORACLE_CONFIGS = 200
ORACLE_BUDGET_S = 30.0
ASSIGN_INSTANCES = 500
FUZZ_SEEDS = 1000
COST_REL_TOL = 1e-9
OOM_LIMIT_GIB = 8.0


@pytest.fixture
def report(capsys):
    def emit(n, title, ok, detail):
        with capsys.disabled():
            print(f"\nAC{n} {'PASS' if ok else 'FAIL'} {title}: {detail}")
        assert ok, detail

    return emit


def rate_of(cfg):
    trace = build_schedule(cfg)
    return bubble_rate(trace, extract_bubbles(trace))


def test_ac1_bubble_rate(report):
    base = cfgmod.load_preset("paper-3.6B-like").pipeline
    t0 = time.perf_counter()
    r4 = rate_of(replace(base, num_micro_batches=4, bp_duration=base.fp_duration))
    r8 = rate_of(replace(base, num_micro_batches=8, bp_duration=base.fp_duration))
    shipped = rate_of(base)
    elapsed = time.perf_counter() - t0
    ok = (
        abs(r4 - MEASURED_RATE_M4) <= RATE_TOL
        and abs(r8 - MEASURED_RATE_M8) <= RATE_TOL
        and abs(shipped - MEASURED_RATE_M4) <= RATE_TOL
        and elapsed < RATE_BUDGET_S
    )
    report(1, "bubble rate", ok, f"m=4 {r4:.4f}, m=8 {r8:.4f}, preset {shipped:.4f}, {elapsed:.3f}s")


def test_ac2_taxonomy(report):
    cfg = cfgmod.load_preset("paper-3.6B-like").pipeline
    bubbles = extract_bubbles(build_schedule(replace(cfg, num_epochs=1)))

    def total(s, kind):
        return sum(b.duration for b in bubbles if b.stage == s and b.btype is kind)

    def count(s, kind):
        return sum(1 for b in bubbles if b.stage == s and b.btype is kind)

    a = [total(s, BubbleType.A) for s in range(4)]
    b = [total(s, BubbleType.B) for s in range(4)]
    ok = (
        count(0, BubbleType.A) == 0
        and count(3, BubbleType.B) == 0
        and count(3, BubbleType.C) == 0
        and all(x < y for x, y in zip(a, a[1:]))
        and all(x > y for x, y in zip(b, b[1:]))
    )
    report(2, "taxonomy", ok, f"type-A per stage {a}, type-B per stage {b}")


def test_ac3_schedule_oracle(report):
    rng = random.Random(2024)
    t0 = time.perf_counter()
    mismatches = 0
    done = 0
    while done < ORACLE_CONFIGS:
        p, m = rng.randint(1, 8), rng.randint(1, 12)
        if p * m > 48:
            continue
        fp = tuple(rng.randint(1, 6) for _ in range(p)) if rng.random() < 0.3 else rng.randint(1, 6)
        bp = tuple(rng.randint(1, 9) for _ in range(p)) if rng.random() < 0.3 else rng.randint(1, 9)
        epochs = rng.randint(1, 2)
        got = {
            (o.stage, o.kind.value, o.micro_batch, o.epoch): (o.start, o.end)
            for o in build_schedule(PipelineConfig(p, m, fp, bp, num_epochs=epochs)).ops
        }
        mismatches += got != dag_schedule(p, m, fp, bp, epochs)
        done += 1
    elapsed = time.perf_counter() - t0
    ok = mismatches == 0 and elapsed < ORACLE_BUDGET_S
    report(3, "schedule oracle", ok, f"{done} configs, {mismatches} mismatches, {elapsed:.2f}s")


def test_ac4_assignment_oracle(report):
    rng = random.Random(77)
    mismatches = rejections = 0
    for _ in range(ASSIGN_INSTANCES):
        n = rng.randint(1, 6)
        mems = [round(rng.uniform(0, 32), 1) for _ in range(n)]
        counts = [0] * n
        workers = [WorkerState(i, m) for i, m in enumerate(mems)]
        for t in range(rng.randint(1, 12)):
            est = rng.choice(mems) if rng.random() < 0.2 else round(rng.uniform(0, 32), 1)
            want = assignment_exhaustive(mems, counts, est)
            got = submit_task(TaskProfile(f"t{t}", 1.0, est, 1), workers)
            mismatches += got != want
            if want is None:
                rejections += 1
            else:
                counts[want] += 1
    ok = mismatches == 0 and rejections > 0
    report(4, "assignment oracle", ok, f"{ASSIGN_INSTANCES} instances, {mismatches} mismatches, {rejections} rejections seen")


def _delta(exp, tasks):
    base = run(exp.pipeline, (), exp.limits, exp.seed, exp.runtime)
    trace = run(exp.pipeline, tasks, exp.limits, exp.seed, exp.runtime)
    return base, trace, (trace.makespan - base.makespan) / base.makespan


def test_ac5_overhead_property(report):
    it = cfgmod.load_preset("mixed-workload")
    imp = cfgmod.load_preset("mixed-workload-imperative")
    _, _, dt_it = _delta(it, it.tasks)
    # every iterative preset task on its own, too
    singles = [_delta(it, [t])[2] for t in it.tasks]
    base, trace, dt_imp = _delta(imp, imp.tasks)
    spec = {t.id: t for t in imp.tasks}
    bound = sum(o.pauses_requested * spec[tid].per_step_duration for tid, o in trace.outcomes.items())
    bound /= base.makespan
    ok = dt_it == 0 and all(d == 0 for d in singles) and 0 < dt_imp <= bound and dt_it < dt_imp
    report(5, "overhead property", ok, f"iterative dT={dt_it}, imperative dT={dt_imp:.5f} <= bound {bound:.5f}")


def test_ac6_limit_scenarios(report):
    exp = cfgmod.load_preset("fig9-timeout")
    trace = run(exp.pipeline, exp.tasks, exp.limits, exp.seed, exp.runtime)
    started = None
    missed = None
    for r in trace.records:
        if r["type"] == "transition" and r["transition"] == "StartSideTask" and started is None:
            started = r["time"]
        if r["type"] == "rpc" and r["transition"] == "PauseSideTask" and started is not None:
            missed = r["deliver_at"]
            break
    kills = [r for r in trace.records if r["type"] == "kill"]
    timeout_ok = (
        len(kills) == 1
        and kills[0]["reason"] == "pause-timeout"
        and kills[0]["time"] == missed + exp.limits.grace_period
    )

    exp = cfgmod.load_preset("fig9-oom")
    [spec] = exp.tasks
    base = run(exp.pipeline, (), exp.limits, exp.seed, exp.runtime)
    trace = run(exp.pipeline, exp.tasks, exp.limits, exp.seed, exp.runtime)
    kills = [r for r in trace.records if r["type"] == "kill"]
    busy = sum(
        min(r["end"], kills[0]["time"]) - r["start"]
        for r in trace.records
        if r["type"] == "work" and r["kind"] == "step" and r["start"] < kills[0]["time"]
    ) if kills else 0

    def alloc(ticks):
        return spec.memory_demand + spec.leak_rate * ticks

    oom_ok = (
        len(kills) == 1
        and kills[0]["reason"] == "oom"
        and exp.limits.memory_limits[spec.id] == OOM_LIMIT_GIB
        and alloc(busy) > OOM_LIMIT_GIB
        and not alloc(busy - 1) > OOM_LIMIT_GIB
        and trace.makespan == base.makespan
    )
    kill_at = f"{kills[0]['time'] * exp.pipeline.tick:.4f}s" if kills else "never"
    detail = (
        f"timeout kill {'at missed pause + grace' if timeout_ok else 'off'}; "
        f"oom kill at {kill_at} with {alloc(busy):.4f} GiB, "
        f"makespan {trace.makespan} vs {base.makespan}"
    )
    report(6, "limit scenarios", timeout_ok and oom_ok, detail)


def test_ac7_fuzz_conservation(report):
    bad = []
    for seed in range(FUZZ_SEEDS):
        trace = random_case(seed).run()
        conserved = all(r.components_sum == r.total for r in bubble_breakdown(trace))
        if not conserved or replay_check(trace):
            bad.append(seed)
    report(7, "fuzz conservation", not bad, f"{FUZZ_SEEDS} seeds, failing seeds {bad[:10]}")


def test_ac8_cost_formula(report):
    hour = 3600.0
    prices = PriceConfig(3.96, 0.18, {"t": 1000.0})
    # hand values: C_no = 3.96 for one hour
    zero = cost_savings(hour, 0.0, {}, prices)
    # dT = 0.011: C_extra = 0.04356; 484 units -> 0.484 h * 0.18 = 0.08712 = 2 C_extra
    balanced = cost_savings(hour, 0.011, {"t": 484}, prices)
    # dT = 0.02 and nothing produced: S = -0.02
    loss = cost_savings(hour, 0.02, {"t": 0}, prices)
    expected = (0.0, (0.08712 - 0.04356) / 3.96, -0.07920 / 3.96)

    def close(a, b):
        return a == b if b == 0 else abs(a - b) <= COST_REL_TOL * abs(b)

    ok = all(close(a, b) for a, b in zip((zero, balanced, loss), expected)) and balanced > 0 > loss
    report(8, "cost formula", ok, f"zero {zero}, balanced {balanced:.12f}, loss {loss:.12f}")


def test_ac9_determinism(report, tmp_path):
    doc = yaml.safe_load(cfgmod.preset_path("mixed-workload-imperative").read_text())
    for task in doc["tasks"]:
        task["step_jitter"] = 0.2
    doc["tasks"][0]["interface"] = Interface.ITERATIVE.value
    path = tmp_path / "jitter.yaml"
    path.write_text(yaml.safe_dump(doc))
    same = []
    for cfg in (str(path), "fig9-timeout", "fig9-oom"):
        outs = []
        for k in range(2):
            out = tmp_path / f"{len(same)}-{k}"
            assert cli.main(["run", cfg, "--out", str(out), "--seed", "11"]) == 0
            outs.append(out)
        same.append(
            all((outs[0] / f).read_bytes() == (outs[1] / f).read_bytes() for f in ("trace.jsonl", "baseline.jsonl"))
        )
    report(9, "determinism", all(same), f"byte-identical traces per config: {same}")
