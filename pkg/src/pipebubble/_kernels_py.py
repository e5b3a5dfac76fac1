"""Pure-Python implementations of the hot loops.

Every function here has a Cython twin in ``_kernels.pyx`` with the same
signature and the same results; ``pipebubble.kernels`` picks one at import.
"""

from __future__ import annotations


class ScheduleDeadlock(RuntimeError):
    pass


def schedule_times(
    orders: list[list[int]],
    durations: list[int],
    dep_a: list[int],
    dep_b: list[int],
    offset: int = 0,
) -> tuple[list[int], list[int]]:
    """Earliest-start times for ops issued in a fixed per-stage order.

    ``orders[s]`` lists op ids in the order stage ``s`` issues them. An op
    starts once the previous op on its stage and its (up to two) cross
    dependencies ``dep_a``/``dep_b`` (``-1`` for none) have finished.
    """
    n = len(durations)
    start = [0] * n
    end = [0] * n
    done = [False] * n
    ptr = [0] * len(orders)
    stage_free = [offset] * len(orders)
    remaining = n
    while remaining:
        progress = False
        for s, order in enumerate(orders):
            k = ptr[s]
            while k < len(order):
                op = order[k]
                a = dep_a[op]
                b = dep_b[op]
                if (a >= 0 and not done[a]) or (b >= 0 and not done[b]):
                    break
                t = stage_free[s]
                if a >= 0 and end[a] > t:
                    t = end[a]
                if b >= 0 and end[b] > t:
                    t = end[b]
                start[op] = t
                end[op] = t + durations[op]
                stage_free[s] = end[op]
                done[op] = True
                remaining -= 1
                k += 1
                progress = True
            ptr[s] = k
        if not progress:
            raise ScheduleDeadlock("issue order and dependencies form a cycle")
    return start, end


def idle_gaps(
    starts: list[int], ends: list[int], span_start: int, span_end: int
) -> list[tuple[int, int, int]]:
    """Maximal idle intervals of one stage inside ``[span_start, span_end]``.

    ``starts``/``ends`` are the stage's ops sorted by start. Each gap is
    ``(gap_start, gap_end, next_index)`` where ``next_index`` is the index of
    the op following the gap (``len(starts)`` for a trailing gap).
    """
    gaps = []
    cursor = span_start
    for i in range(len(starts)):
        if starts[i] > cursor:
            gaps.append((cursor, starts[i], i))
        if ends[i] > cursor:
            cursor = ends[i]
    if span_end > cursor:
        gaps.append((cursor, span_end, len(starts)))
    return gaps


def overlap_total(
    a_starts: list[int], a_ends: list[int], b_starts: list[int], b_ends: list[int]
) -> int:
    """Total length of the intersection of two sorted, disjoint interval lists."""
    i = j = 0
    total = 0
    na, nb = len(a_starts), len(b_starts)
    while i < na and j < nb:
        lo = a_starts[i] if a_starts[i] > b_starts[j] else b_starts[j]
        hi = a_ends[i] if a_ends[i] < b_ends[j] else b_ends[j]
        if hi > lo:
            total += hi - lo
        if a_ends[i] < b_ends[j]:
            i += 1
        else:
            j += 1
    return total
