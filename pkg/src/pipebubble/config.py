"""Experiment config documents: loading, schema validation and unit conversion.

Documents are YAML or JSON with times in seconds and memory in GiB. They are
converted to the tick-based library types here; every duration has to be a
whole number of ticks.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Any

import jsonschema
import yaml

from pipebubble.engine import RuntimeConfig
from pipebubble.limits import LimitConfig
from pipebubble.metrics import PriceConfig
from pipebubble.pipeline import ConfigError, PipelineConfig, default_stage_memory
from pipebubble.tasks import Interface, Misbehavior, SideTaskSpec

PRESET_NAMES = (
    "paper-3.6B-like",
    "mixed-workload",
    "mixed-workload-imperative",
    "fig9-oom",
    "fig9-timeout",
)


@dataclass(frozen=True)
class ModelSize:
    """How a main-model size changes the pipeline relative to the base config.

    Larger models get smaller micro-batches (memory is maxed out), so their
    ops are shorter while their weights take more of each GPU.
    """

    duration_scale: float
    weight_scale: float
    params: float


MODEL_SIZES = {
    "1.2B": ModelSize(1.25, 0.5, 1.2e9),
    "3.6B": ModelSize(1.0, 1.0, 3.6e9),
    "6B": ModelSize(0.8, 1.1, 6.0e9),
}


class SchemaError(ValueError):
    """The document is unparsable or does not match the schema."""

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


@dataclass(frozen=True)
class MemoryModel:
    weight: float
    activation: float


@dataclass(frozen=True)
class SweepConfig:
    micro_batches: tuple[int, ...] = ()
    model_size: tuple[str, ...] = ()
    batch_size: tuple[int, ...] = ()

    def axes(self) -> dict[str, tuple]:
        return {
            name: values
            for name, values in (
                ("micro_batches", self.micro_batches),
                ("model_size", self.model_size),
                ("batch_size", self.batch_size),
            )
            if values
        }


@dataclass(frozen=True)
class ExperimentConfig:
    pipeline: PipelineConfig
    tasks: tuple[SideTaskSpec, ...] = ()
    limits: LimitConfig = field(default_factory=LimitConfig)
    prices: PriceConfig = field(default_factory=PriceConfig)
    runtime: RuntimeConfig = field(default_factory=RuntimeConfig)
    seed: int = 0
    sweep: SweepConfig | None = None
    name: str = "experiment"
    memory_model: MemoryModel | None = None
    # reference batch size per task, for the batch-size sweep axis
    batch_sizes: dict[str, int] = field(default_factory=dict)

    def validate(self) -> "ExperimentConfig":
        self.pipeline.validate()
        ids = [t.id for t in self.tasks]
        dup = sorted({i for i in ids if ids.count(i) > 1})
        if dup:
            raise ConfigError("tasks", f"duplicate task ids {dup}")
        for t in self.tasks:
            t.validate()
        self.limits.validate()
        for tid in self.limits.memory_limits:
            if tid not in ids:
                raise ConfigError(f"limits.memory_limits.{tid}", "names an unknown task")
        self.prices.validate()
        self.runtime.validate(self.limits)
        if self.sweep is not None:
            if not self.sweep.axes():
                raise ConfigError("sweep", "needs at least one non-empty axis")
            for size in self.sweep.model_size:
                if size not in MODEL_SIZES:
                    raise ConfigError("sweep.model_size", f"unknown preset {size!r}")
                if self.memory_model is None:
                    raise ConfigError("sweep.model_size", "needs pipeline.memory_model")
            for b in self.sweep.batch_size:
                if b < 1:
                    raise ConfigError("sweep.batch_size", "batch sizes must be positive")
            if self.sweep.batch_size and not self.batch_sizes:
                raise ConfigError("sweep.batch_size", "no task declares a batch_size")
            for m in self.sweep.micro_batches:
                if m < 1:
                    raise ConfigError("sweep.micro_batches", "must be positive")
        return self


# ------------------------------------------------------------------- loading


def schema() -> dict[str, Any]:
    text = resources.files("pipebubble").joinpath("schema/experiment.schema.json").read_text()
    return json.loads(text)


def _format_path(parts) -> str:
    out = ""
    for p in parts:
        out += f"[{p}]" if isinstance(p, int) else (f".{p}" if out else str(p))
    return out


def check_schema(doc: Any) -> None:
    validator = jsonschema.Draft202012Validator(schema())
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(map(str, e.absolute_path)))
    if errors:
        err = errors[0]
        raise SchemaError(_format_path(err.absolute_path) or "<root>", err.message)


def to_ticks(seconds: float, tick: float, where: str, allow_zero: bool = True) -> int:
    """Convert seconds to a tick count, rejecting values that are not tick multiples."""
    n = round(seconds / tick)
    if not math.isclose(n * tick, seconds, rel_tol=1e-9, abs_tol=1e-12):
        raise ConfigError(where, f"{seconds} s is not a multiple of the {tick} s tick")
    if n < 0 or (n == 0 and not allow_zero):
        raise ConfigError(where, f"must be {'non-negative' if allow_zero else 'positive'}")
    return n


def _durations(value, tick: float, where: str):
    if isinstance(value, list):
        return tuple(to_ticks(v, tick, f"{where}[{i}]", allow_zero=False) for i, v in enumerate(value))
    return to_ticks(value, tick, where, allow_zero=False)


def _pipeline(doc: dict[str, Any]) -> tuple[PipelineConfig, MemoryModel | None]:
    tick = doc.get("tick", 0.001)
    if not tick > 0:
        raise ConfigError("pipeline.tick", "must be positive")
    p = doc["num_stages"]
    total = doc.get("gpu_memory_total", 48.0)
    model = None
    stage_memory = doc.get("stage_memory")
    if "memory_model" in doc:
        if stage_memory is not None:
            raise ConfigError("pipeline.stage_memory", "give either stage_memory or memory_model")
        mm = doc["memory_model"]
        model = MemoryModel(mm["weight"], mm["activation"])
        if isinstance(p, int) and p >= 1:
            stage_memory = default_stage_memory(p, total, model.weight, model.activation)
    cfg = PipelineConfig(
        num_stages=p,
        num_micro_batches=doc["num_micro_batches"],
        fp_duration=_durations(doc["fp_duration"], tick, "pipeline.fp_duration"),
        bp_duration=_durations(doc["bp_duration"], tick, "pipeline.bp_duration"),
        num_epochs=doc.get("num_epochs", 1),
        gpu_memory_total=total,
        stage_memory=None if stage_memory is None else tuple(stage_memory),
        tick=tick,
    )
    return cfg, model


def _task(doc: dict[str, Any], tick: float) -> SideTaskSpec:
    tid = doc["id"]
    where = f"tasks[{tid}]"
    return SideTaskSpec(
        id=tid,
        interface=Interface(doc.get("interface", "iterative")),
        per_step_duration=to_ticks(doc["per_step_duration"], tick, f"{where}.per_step_duration", False),
        total_steps=doc.get("total_steps"),
        init_duration=to_ticks(doc.get("init_duration", 0.0), tick, f"{where}.init_duration"),
        memory_demand=doc.get("memory_demand", 0.0),
        misbehavior=Misbehavior(doc.get("misbehavior", "none")),
        # documents give GiB per second of GPU work
        leak_rate=doc.get("leak_rate", 0.0) * tick,
        submit_time=to_ticks(doc.get("submit_time", 0.0), tick, f"{where}.submit_time"),
        step_jitter=doc.get("step_jitter", 0.0),
    )


def default_reference_throughput(spec: SideTaskSpec, tick: float) -> float:
    """Work units per hour when the task runs alone at its configured speed."""
    return 3600.0 / (spec.per_step_duration * tick)


def from_dict(doc: Any) -> ExperimentConfig:
    """Build a validated experiment from a parsed document.

    Raises ``SchemaError`` for structural problems and ``ConfigError`` for
    semantically infeasible values.
    """
    check_schema(doc)
    pipeline, model = _pipeline(doc["pipeline"])
    tick = pipeline.tick
    tasks = tuple(_task(t, tick) for t in doc.get("tasks", []))
    ld = doc.get("limits", {})
    limits = LimitConfig(
        grace_period=to_ticks(ld.get("grace_period", 0.1), tick, "limits.grace_period"),
        memory_headroom=ld.get("memory_headroom", 0.0),
        memory_limits=dict(ld.get("memory_limits", {})),
        reclamation_delay=to_ticks(ld.get("reclamation_delay", 0.0), tick, "limits.reclamation_delay"),
    )
    pd = doc.get("prices", {})
    throughput = {t.id: default_reference_throughput(t, tick) for t in tasks}
    throughput.update(pd.get("reference_throughput", {}))
    prices = PriceConfig(pd.get("price_server_1", 3.96), pd.get("price_server_2", 0.18), throughput)
    rd = doc.get("runtime", {})
    runtime = RuntimeConfig(
        check_overhead=to_ticks(rd.get("check_overhead", 0.001), tick, "runtime.check_overhead"),
        rpc_latency=to_ticks(rd.get("rpc_latency", 0.0), tick, "runtime.rpc_latency"),
        profile_steps=rd.get("profile_steps", 32),
        gate_estimate=rd.get("gate_estimate", "mean"),
    )
    sweep = None
    if "sweep" in doc:
        sd = doc["sweep"]
        sweep = SweepConfig(
            tuple(sd.get("micro_batches", ())),
            tuple(sd.get("model_size", ())),
            tuple(sd.get("batch_size", ())),
        )
    exp = ExperimentConfig(
        pipeline=pipeline,
        tasks=tasks,
        limits=limits,
        prices=prices,
        runtime=runtime,
        seed=doc.get("seed", 0),
        sweep=sweep,
        name=doc.get("name", "experiment"),
        memory_model=model,
        batch_sizes={t["id"]: t["batch_size"] for t in doc.get("tasks", []) if "batch_size" in t},
    )
    return exp.validate()


def parse_text(text: str) -> Any:
    try:
        return yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise SchemaError("", f"cannot parse document: {exc}") from exc


def preset_path(name: str) -> Path:
    return Path(str(resources.files("pipebubble").joinpath(f"presets/{name}.yaml")))


def resolve(path_or_preset: str | Path) -> Path:
    """A file path, or the name of a bundled preset."""
    path = Path(path_or_preset)
    if path.exists():
        return path
    if str(path_or_preset) in PRESET_NAMES:
        return preset_path(str(path_or_preset))
    raise SchemaError("", f"no such config file or preset: {path_or_preset}")


def load(path_or_preset: str | Path) -> ExperimentConfig:
    path = resolve(path_or_preset)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise SchemaError("", f"cannot read {path}: {exc}") from exc
    return from_dict(parse_text(text))


def load_preset(name: str) -> ExperimentConfig:
    if name not in PRESET_NAMES:
        raise KeyError(name)
    return load(preset_path(name))


# -------------------------------------------------------------------- sweeps


def apply_model_size(exp: ExperimentConfig, size: str) -> ExperimentConfig:
    ms = MODEL_SIZES[size]
    cfg = exp.pipeline

    def scale(d):
        if isinstance(d, tuple):
            return tuple(max(1, round(x * ms.duration_scale)) for x in d)
        return max(1, round(d * ms.duration_scale))

    mm = exp.memory_model
    weight = mm.weight * ms.weight_scale
    stage_memory = default_stage_memory(cfg.num_stages, cfg.gpu_memory_total, weight, mm.activation)
    pipeline = replace(
        cfg, fp_duration=scale(cfg.fp_duration), bp_duration=scale(cfg.bp_duration), stage_memory=tuple(stage_memory)
    )
    return replace(exp, pipeline=pipeline, memory_model=MemoryModel(weight, mm.activation))


def apply_batch_size(exp: ExperimentConfig, batch: int) -> ExperimentConfig:
    """Scale step time and memory of tasks that declare a reference batch size."""
    tasks = []
    for t in exp.tasks:
        ref = exp.batch_sizes.get(t.id)
        if ref is None:
            tasks.append(t)
            continue
        f = batch / ref
        tasks.append(
            replace(t, per_step_duration=max(1, round(t.per_step_duration * f)), memory_demand=t.memory_demand * f)
        )
    tick = exp.pipeline.tick
    throughput = dict(exp.prices.reference_throughput)
    for t in tasks:
        if t.id in exp.batch_sizes:
            throughput[t.id] = default_reference_throughput(t, tick)
    return replace(exp, tasks=tuple(tasks), prices=replace(exp.prices, reference_throughput=throughput))


def sweep_points(exp: ExperimentConfig) -> list[tuple[dict[str, Any], ExperimentConfig]]:
    """Cartesian product of the sweep axes, in axis order; each point validated."""
    if exp.sweep is None or not exp.sweep.axes():
        raise ConfigError("sweep", "config has no sweep axes")
    axes = exp.sweep.axes()
    points: list[dict[str, Any]] = [{}]
    for name, values in axes.items():
        points = [{**pt, name: v} for pt in points for v in values]
    out = []
    for pt in points:
        e = replace(exp, sweep=None)
        if "micro_batches" in pt:
            e = replace(e, pipeline=replace(e.pipeline, num_micro_batches=pt["micro_batches"]))
        if "model_size" in pt:
            e = apply_model_size(e, pt["model_size"])
        if "batch_size" in pt:
            e = apply_batch_size(e, pt["batch_size"])
        out.append((pt, e.validate()))
    return out
