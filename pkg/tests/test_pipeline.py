import random
from fractions import Fraction

import pytest

from pipebubble.pipeline import (
    BubbleType,
    ConfigError,
    OpKind,
    PipelineConfig,
    build_schedule,
    bubble_rate,
    default_stage_memory,
    extract_bubbles,
    issue_order,
    stage_bubble_rates,
)
from tests.oracles import dag_schedule, idle_gap_scan, one_f_one_b


def timings(trace):
    return {(o.stage, o.kind.value, o.micro_batch, o.epoch): (o.start, o.end) for o in trace.ops}


def bubble_tuples(bubbles):
    return sorted((b.stage, b.epoch, b.start, b.duration, b.btype.value) for b in bubbles)


def test_single_stage_runs_back_to_back():
    trace = build_schedule(PipelineConfig(1, 3, 1, 2))
    ops = list(trace.ops)
    assert ops[0].start == 0
    assert all(b.start == a.end for a, b in zip(ops, ops[1:]))
    assert trace.makespan == 9
    assert extract_bubbles(trace) == []
    # the only stage is also the last one, so it alternates from the start
    assert [(o.kind.value, o.micro_batch) for o in ops] == [
        ("FP", 1), ("BP", 1), ("FP", 2), ("BP", 2), ("FP", 3), ("BP", 3)
    ]


def test_last_stage_first_fp_waits_for_cascade():
    trace = build_schedule(PipelineConfig(4, 4, 1, 2))
    first = min(o.start for o in trace.ops if o.stage == 3)
    assert first == 3


def test_timings_match_dag_oracle_reference_config():
    trace = build_schedule(PipelineConfig(4, 4, 1, 2))
    assert timings(trace) == dag_schedule(4, 4, 1, 2)


def test_timings_match_dag_oracle_randomized():
    rng = random.Random(7)
    for _ in range(60):
        p, m = rng.randint(1, 6), rng.randint(1, 8)
        fp = tuple(rng.randint(1, 4) for _ in range(p)) if rng.random() < 0.4 else rng.randint(1, 4)
        bp = rng.randint(1, 6)
        epochs = rng.randint(1, 3)
        trace = build_schedule(PipelineConfig(p, m, fp, bp, num_epochs=epochs))
        assert timings(trace) == dag_schedule(p, m, fp, bp, epochs)


@pytest.mark.parametrize("p,m", [(1, 1), (2, 3), (4, 4), (5, 2), (6, 8)])
def test_issue_order_matches_reference(p, m):
    for s in range(p):
        got = [(k.value, i) for k, i in issue_order(p, m, s)]
        assert got == one_f_one_b(p, m, s)


def test_epochs_are_translates_behind_a_barrier():
    cfg = PipelineConfig(3, 2, 2, 3, num_epochs=3)
    trace = build_schedule(cfg)
    spans = trace.epoch_spans
    assert spans[1][0] == spans[0][1] and spans[2][0] == spans[1][1]
    width = spans[0][1] - spans[0][0]
    t = timings(trace)
    for (s, k, i, e), (a, b) in t.items():
        assert (a, b) == (t[(s, k, i, 0)][0] + e * width, t[(s, k, i, 0)][1] + e * width)


def test_schedule_is_deterministic():
    cfg = PipelineConfig(4, 6, (1, 2, 1, 3), 2, num_epochs=2)
    assert build_schedule(cfg).ops == build_schedule(cfg).ops


@pytest.mark.parametrize(
    "kwargs,field",
    [
        (dict(num_stages=0, num_micro_batches=4), "num_stages"),
        (dict(num_stages=4, num_micro_batches=0), "num_micro_batches"),
        (dict(num_stages=2, num_micro_batches=2, fp_duration=0), "fp_duration"),
        (dict(num_stages=2, num_micro_batches=2, bp_duration=(1,)), "bp_duration"),
        (dict(num_stages=2, num_micro_batches=2, num_epochs=0), "num_epochs"),
        (dict(num_stages=2, num_micro_batches=2, stage_memory=(1.0,)), "stage_memory"),
        (dict(num_stages=2, num_micro_batches=2, stage_memory=(1.0, 99.0)), "stage_memory"),
    ],
)
def test_invalid_configs_name_the_field(kwargs, field):
    with pytest.raises(ConfigError) as info:
        build_schedule(PipelineConfig(**kwargs))
    assert info.value.field == field


# ----------------------------------------------------------------- bubbles


@pytest.mark.parametrize("m", [1, 3, 7])
def test_single_stage_has_no_bubbles(m):
    assert extract_bubbles(build_schedule(PipelineConfig(1, m, 2, 5))) == []


def test_bubbles_match_idle_scan_reference_config():
    trace = build_schedule(PipelineConfig(4, 4, 1, 2))
    assert bubble_tuples(extract_bubbles(trace)) == idle_gap_scan(4, 4, 1, 2)


def test_bubbles_match_idle_scan_randomized():
    rng = random.Random(11)
    for _ in range(40):
        p, m = rng.randint(1, 5), rng.randint(1, 6)
        fp, bp = rng.randint(1, 3), rng.randint(1, 5)
        epochs = rng.randint(1, 2)
        trace = build_schedule(PipelineConfig(p, m, fp, bp, num_epochs=epochs))
        assert bubble_tuples(extract_bubbles(trace)) == idle_gap_scan(p, m, fp, bp, epochs)


@pytest.mark.parametrize("fp,bp", [(1, 1), (1, 2), (2, 3)])
def test_taxonomy_presence_by_stage(fp, bp):
    bubbles = extract_bubbles(build_schedule(PipelineConfig(4, 4, fp, bp)))
    kinds = {s: {b.btype for b in bubbles if b.stage == s} for s in range(4)}
    assert BubbleType.A not in kinds[0]
    assert BubbleType.B not in kinds[3] and BubbleType.C not in kinds[3]
    for s in range(1, 4):
        assert BubbleType.A in kinds[s]
    for s in range(3):
        assert BubbleType.B in kinds[s]


def test_bubble_memory_is_stage_available_memory():
    cfg = PipelineConfig(4, 4, 1, 2, gpu_memory_total=48.0, stage_memory=(40.0, 30.0, 20.0, 10.0))
    for b in extract_bubbles(build_schedule(cfg)):
        assert b.available_memory == 48.0 - cfg.stage_memory[b.stage]


def test_bubble_rate_single_stage_is_zero():
    trace = build_schedule(PipelineConfig(1, 4, 1, 1))
    assert bubble_rate(trace, extract_bubbles(trace)) == 0.0


@pytest.mark.parametrize("p,m", [(4, 4), (4, 8), (2, 5), (6, 3)])
def test_bubble_rate_closed_form_for_equal_ops(p, m):
    trace = build_schedule(PipelineConfig(p, m, 1, 1))
    rate = bubble_rate(trace, extract_bubbles(trace))
    assert Fraction(rate).limit_denominator(1000) == Fraction(p - 1, m + p - 1)


def test_bubble_rate_values_near_measured():
    for m, measured in ((4, 0.424), (8, 0.262)):
        trace = build_schedule(PipelineConfig(4, m, 1, 1))
        assert abs(bubble_rate(trace, extract_bubbles(trace)) - measured) <= 0.05


def test_stage_rates_average_to_overall_rate():
    trace = build_schedule(PipelineConfig(4, 4, 1, 2, num_epochs=2))
    bubbles = extract_bubbles(trace)
    rates = stage_bubble_rates(trace, bubbles)
    assert sum(rates) / 4 == pytest.approx(bubble_rate(trace, bubbles))


# ------------------------------------------------------------ memory model


def test_default_memory_model_formula():
    mem = default_stage_memory(4, 48, 4, 4)
    assert mem == [20, 16, 12, 8]
    assert [48 - x for x in mem] == [28, 32, 36, 40]


def test_default_memory_model_zero():
    assert default_stage_memory(4, 48, 0, 0) == [0, 0, 0, 0]


def test_default_memory_model_spans_observed_range():
    free = [48 - x for x in default_stage_memory(4, 48.0, 21.5, 6.0)]
    assert free[0] < 3 and free[-1] > 20
    assert free == sorted(free)


def test_default_memory_model_infeasible():
    with pytest.raises(ConfigError) as info:
        default_stage_memory(4, 48, 30, 5)
    assert info.value.field == "memory_model"
