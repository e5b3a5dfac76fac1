"""Backend selection for the hot loops.

The compiled extension is used when it imports; otherwise the pure-Python
module is used. Set ``PIPEBUBBLE_PURE=1`` to force the fallback.
"""

from __future__ import annotations

import os

from pipebubble import _kernels_py

ScheduleDeadlock = _kernels_py.ScheduleDeadlock

if os.environ.get("PIPEBUBBLE_PURE", "") not in ("", "0"):
    _impl = _kernels_py
    BACKEND = "python"
else:
    try:
        from pipebubble import _kernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        _impl = _kernels_py
        BACKEND = "python"

schedule_times = _impl.schedule_times
idle_gaps = _impl.idle_gaps
overlap_total = _impl.overlap_total

__all__ = [
    "BACKEND",
    "ScheduleDeadlock",
    "idle_gaps",
    "overlap_total",
    "schedule_times",
]
