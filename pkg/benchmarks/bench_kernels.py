"""Compare the compiled kernels with the pure-Python fallback.

    python benchmarks/bench_kernels.py [--repeat N]
"""

from __future__ import annotations

import argparse
import random
import timeit

from pipebubble import _kernels_py
from pipebubble.pipeline import PipelineConfig, epoch_dag

try:
    from pipebubble import _kernels as _kernels_c
except ImportError:
    _kernels_c = None


def workloads():
    _, orders, durations, dep_a, dep_b = epoch_dag(PipelineConfig(16, 64, 3, 5))
    rng = random.Random(0)
    pts = sorted(rng.sample(range(10**7), 40000))
    starts, ends = pts[0::2], pts[1::2]
    pts = sorted(rng.sample(range(10**7), 40000))
    b_starts, b_ends = pts[0::2], pts[1::2]
    return {
        "schedule_times p=16 m=64": lambda k: k.schedule_times(orders, durations, dep_a, dep_b, 0),
        "idle_gaps 20k ops": lambda k: k.idle_gaps(starts, ends, 0, 10**7),
        "overlap_total 20k x 20k": lambda k: k.overlap_total(starts, ends, b_starts, b_ends),
    }


def main() -> None:
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()
    if _kernels_c is None:
        print("compiled kernels are not built; only the fallback can be timed")
    print(f"{'kernel':28} {'python ms':>10} {'cython ms':>10} {'speedup':>8}")
    for name, fn in workloads().items():
        py = min(timeit.repeat(lambda: fn(_kernels_py), number=1, repeat=args.repeat)) * 1e3
        if _kernels_c is None:
            print(f"{name:28} {py:10.2f} {'-':>10} {'-':>8}")
            continue
        assert fn(_kernels_c) == fn(_kernels_py)
        cy = min(timeit.repeat(lambda: fn(_kernels_c), number=1, repeat=args.repeat)) * 1e3
        print(f"{name:28} {py:10.2f} {cy:10.2f} {py / cy:7.1f}x")


if __name__ == "__main__":
    main()
