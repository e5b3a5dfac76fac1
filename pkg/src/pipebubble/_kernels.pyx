# cython: language_level=3, boundscheck=False, wraparound=False
"""Compiled twins of the loops in ``_kernels_py``."""

from libc.stdlib cimport malloc, free
from libc.stdint cimport int64_t

from pipebubble._kernels_py import ScheduleDeadlock


def schedule_times(list orders, list durations, list dep_a, list dep_b,
                   long long offset=0):
    cdef Py_ssize_t n = len(durations)
    cdef Py_ssize_t p = len(orders)
    cdef Py_ssize_t total_order = 0
    cdef Py_ssize_t s, k, i, op, a, b
    cdef int64_t t
    cdef Py_ssize_t remaining = n
    cdef bint progress

    for s in range(p):
        total_order += len(<list>orders[s])

    cdef int64_t *start = <int64_t *> malloc(n * sizeof(int64_t))
    cdef int64_t *end = <int64_t *> malloc(n * sizeof(int64_t))
    cdef int64_t *dur = <int64_t *> malloc(n * sizeof(int64_t))
    cdef Py_ssize_t *da = <Py_ssize_t *> malloc(n * sizeof(Py_ssize_t))
    cdef Py_ssize_t *db = <Py_ssize_t *> malloc(n * sizeof(Py_ssize_t))
    cdef char *done = <char *> malloc(n * sizeof(char))
    cdef Py_ssize_t *flat = <Py_ssize_t *> malloc((total_order + 1) * sizeof(Py_ssize_t))
    cdef Py_ssize_t *lo = <Py_ssize_t *> malloc((p + 1) * sizeof(Py_ssize_t))
    cdef Py_ssize_t *ptr = <Py_ssize_t *> malloc((p + 1) * sizeof(Py_ssize_t))
    cdef int64_t *stage_free = <int64_t *> malloc((p + 1) * sizeof(int64_t))
    if (start == NULL or end == NULL or dur == NULL or da == NULL or db == NULL
            or done == NULL or flat == NULL or lo == NULL or ptr == NULL
            or stage_free == NULL):
        free(start); free(end); free(dur); free(da); free(db); free(done)
        free(flat); free(lo); free(ptr); free(stage_free)
        raise MemoryError()

    try:
        for i in range(n):
            dur[i] = durations[i]
            da[i] = dep_a[i]
            db[i] = dep_b[i]
            done[i] = 0
        k = 0
        for s in range(p):
            lo[s] = k
            ptr[s] = k
            stage_free[s] = offset
            for op in <list>orders[s]:
                flat[k] = op
                k += 1
        lo[p] = k

        while remaining > 0:
            progress = False
            for s in range(p):
                k = ptr[s]
                while k < lo[s + 1]:
                    op = flat[k]
                    a = da[op]
                    b = db[op]
                    if (a >= 0 and not done[a]) or (b >= 0 and not done[b]):
                        break
                    t = stage_free[s]
                    if a >= 0 and end[a] > t:
                        t = end[a]
                    if b >= 0 and end[b] > t:
                        t = end[b]
                    start[op] = t
                    end[op] = t + dur[op]
                    stage_free[s] = end[op]
                    done[op] = 1
                    remaining -= 1
                    k += 1
                    progress = True
                ptr[s] = k
            if not progress:
                raise ScheduleDeadlock("issue order and dependencies form a cycle")

        return [start[i] for i in range(n)], [end[i] for i in range(n)]
    finally:
        free(start); free(end); free(dur); free(da); free(db); free(done)
        free(flat); free(lo); free(ptr); free(stage_free)


def idle_gaps(list starts, list ends, long long span_start, long long span_end):
    cdef Py_ssize_t n = len(starts)
    cdef Py_ssize_t i
    cdef long long cursor = span_start
    cdef long long s_i, e_i
    gaps = []
    for i in range(n):
        s_i = starts[i]
        e_i = ends[i]
        if s_i > cursor:
            gaps.append((cursor, s_i, i))
        if e_i > cursor:
            cursor = e_i
    if span_end > cursor:
        gaps.append((cursor, span_end, n))
    return gaps


def overlap_total(list a_starts, list a_ends, list b_starts, list b_ends):
    cdef Py_ssize_t i = 0, j = 0
    cdef Py_ssize_t na = len(a_starts), nb = len(b_starts)
    cdef long long total = 0, lo, hi, as_, ae, bs, be
    while i < na and j < nb:
        as_ = a_starts[i]
        ae = a_ends[i]
        bs = b_starts[j]
        be = b_ends[j]
        lo = as_ if as_ > bs else bs
        hi = ae if ae < be else be
        if hi > lo:
            total += hi - lo
        if ae < be:
            i += 1
        else:
            j += 1
    return total
