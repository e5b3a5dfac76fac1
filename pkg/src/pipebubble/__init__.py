"""Deterministic simulation of side tasks served inside pipeline-training bubbles."""

from pipebubble.kernels import BACKEND
from pipebubble.pipeline import (
    Bubble,
    BubbleType,
    ConfigError,
    OpEvent,
    OpKind,
    PipelineConfig,
    ScheduleTrace,
    bubble_rate,
    build_schedule,
    default_stage_memory,
    extract_bubbles,
)

__version__ = "0.1.0"
