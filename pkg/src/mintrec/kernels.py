"""Hot loops used by ingestion, sampling, generation and ranking.

Every kernel exists twice: a numba ``@njit`` version and a vectorised numpy
version. Both produce identical results; the numba path is selected unless
``MINTREC_DISABLE_NUMBA=1`` is set in the environment or numba cannot be
imported. ``benchmarks/bench_kernels.py`` times the two against each other.
"""

import os

import numpy as np

try:
    from numba import njit

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAS_NUMBA = False

_OFFSET = 1 << 40


def numba_enabled():
    return HAS_NUMBA and os.environ.get("MINTREC_DISABLE_NUMBA", "0") not in ("1", "true", "yes")


# --------------------------------------------------------------------------
# running count of distinct values within contiguous groups
# --------------------------------------------------------------------------


def _running_distinct_np(ptr, values, n_values):
    n = len(values)
    out = np.zeros(n, dtype=np.int64)
    if n == 0:
        return out
    group = np.repeat(np.arange(len(ptr) - 1), np.diff(ptr))
    order = np.lexsort((np.arange(n), values, group))
    g_sorted = group[order]
    v_sorted = values[order]
    first = np.ones(n, dtype=bool)
    first[1:] = (g_sorted[1:] != g_sorted[:-1]) | (v_sorted[1:] != v_sorted[:-1])
    is_new = np.zeros(n, dtype=np.int64)
    is_new[order[first]] = 1
    csum = np.cumsum(is_new)
    base = np.zeros(len(ptr) - 1, dtype=np.int64)
    starts = ptr[:-1]
    nonempty = ptr[1:] > starts
    base[nonempty & (starts > 0)] = csum[starts[nonempty & (starts > 0)] - 1]
    out = csum - base[group]
    return out


def _running_distinct_py(ptr, values, n_values):
    n = len(values)
    out = np.zeros(n, dtype=np.int64)
    stamp = np.full(n_values, -1, dtype=np.int64)
    for g in range(len(ptr) - 1):
        count = 0
        for j in range(ptr[g], ptr[g + 1]):
            v = values[j]
            if stamp[v] != g:
                stamp[v] = g
                count += 1
            out[j] = count
    return out


# --------------------------------------------------------------------------
# value of a step function (per group, sorted times) at a query time
# --------------------------------------------------------------------------


def _value_at_time_np(ptr, times, values, tau, default):
    sizes = np.diff(ptr)
    group = np.repeat(np.arange(len(sizes)), sizes)
    keys = times.astype(np.int64) + group * _OFFSET
    qs = tau + np.arange(len(sizes), dtype=np.int64) * _OFFSET
    pos = np.searchsorted(keys, qs, side="right") - 1
    ok = (pos >= ptr[:-1]) & (sizes > 0)
    out = np.full(len(sizes), default, dtype=np.float64)
    out[ok] = values[pos[ok]]
    return out


def _value_at_time_py(ptr, times, values, tau, default):
    n_groups = len(ptr) - 1
    out = np.empty(n_groups, dtype=np.float64)
    for g in range(n_groups):
        lo = ptr[g]
        hi = ptr[g + 1]
        # binary search for last time <= tau
        while lo < hi:
            mid = (lo + hi) // 2
            if times[mid] <= tau:
                lo = mid + 1
            else:
                hi = mid
        if lo > ptr[g]:
            out[g] = values[lo - 1]
        else:
            out[g] = default
    return out


# --------------------------------------------------------------------------
# r-th element of the complement of a sorted positive set
# --------------------------------------------------------------------------


def _nth_complement_np(rows, r, pos_ptr, pos_sorted):
    """For row i, position of the r[i]-th slot not listed in pos_sorted[row]."""
    sizes = np.diff(pos_ptr)
    group = np.repeat(np.arange(len(sizes)), sizes)
    local = np.arange(len(pos_sorted)) - pos_ptr[:-1][group]
    adjusted = pos_sorted.astype(np.int64) - local + group * _OFFSET
    qs = r.astype(np.int64) + rows.astype(np.int64) * _OFFSET
    before = np.searchsorted(adjusted, qs, side="right") - pos_ptr[rows]
    return r + before


def _nth_complement_py(rows, r, pos_ptr, pos_sorted):
    out = np.empty(len(rows), dtype=np.int64)
    for i in range(len(rows)):
        row = rows[i]
        q = r[i]
        for j in range(pos_ptr[row], pos_ptr[row + 1]):
            if pos_sorted[j] <= q:
                q += 1
            else:
                break
        out[i] = q
    return out


# --------------------------------------------------------------------------
# 1-based rank of a target column with ascending-id tie-break
# --------------------------------------------------------------------------


def _rank_of_target_np(scores, target_col):
    q = np.arange(scores.shape[0])
    target = scores[q, target_col][:, None]
    cols = np.arange(scores.shape[1])[None, :]
    ahead = (scores > target) | ((scores == target) & (cols < target_col[:, None]))
    return 1 + ahead.sum(axis=1).astype(np.int64)


def _rank_of_target_py(scores, target_col):
    n_q, n_c = scores.shape
    out = np.empty(n_q, dtype=np.int64)
    for i in range(n_q):
        c = target_col[i]
        s = scores[i, c]
        rank = 1
        for j in range(n_c):
            v = scores[i, j]
            if v > s or (v == s and j < c):
                rank += 1
        out[i] = rank
    return out


if HAS_NUMBA:
    _running_distinct_nb = njit(cache=True)(_running_distinct_py)
    _value_at_time_nb = njit(cache=True)(_value_at_time_py)
    _nth_complement_nb = njit(cache=True)(_nth_complement_py)
    _rank_of_target_nb = njit(cache=True)(_rank_of_target_py)


def running_distinct(ptr, values, n_values, backend=None):
    """Running count of distinct ``values`` within each group ``ptr[g]:ptr[g+1]``."""
    ptr = np.ascontiguousarray(ptr, dtype=np.int64)
    values = np.ascontiguousarray(values, dtype=np.int64)
    if _use_numba(backend):
        return _running_distinct_nb(ptr, values, max(int(n_values), 1))
    return _running_distinct_np(ptr, values, n_values)


def value_at_time(ptr, times, values, tau, default=0.0, backend=None):
    """Per group, the value attached to the last time ``<= tau`` (``default`` if none)."""
    ptr = np.ascontiguousarray(ptr, dtype=np.int64)
    times = np.ascontiguousarray(times, dtype=np.int64)
    values = np.ascontiguousarray(values, dtype=np.float64)
    if _use_numba(backend):
        return _value_at_time_nb(ptr, times, values, np.int64(tau), float(default))
    return _value_at_time_np(ptr, times, values, int(tau), float(default))


def nth_complement(rows, r, pos_ptr, pos_sorted, backend=None):
    """Map ``r`` (0-based rank among non-positive slots) to a slot index.

    ``pos_sorted[pos_ptr[row]:pos_ptr[row+1]]`` lists, in ascending order, the
    slots excluded for ``row``.
    """
    rows = np.ascontiguousarray(rows, dtype=np.int64)
    r = np.ascontiguousarray(r, dtype=np.int64)
    pos_ptr = np.ascontiguousarray(pos_ptr, dtype=np.int64)
    pos_sorted = np.ascontiguousarray(pos_sorted, dtype=np.int64)
    if _use_numba(backend):
        return _nth_complement_nb(rows, r, pos_ptr, pos_sorted)
    return _nth_complement_np(rows, r, pos_ptr, pos_sorted)


def rank_of_target(scores, target_col, backend=None):
    scores = np.ascontiguousarray(scores, dtype=np.float64)
    target_col = np.ascontiguousarray(target_col, dtype=np.int64)
    if _use_numba(backend):
        return _rank_of_target_nb(scores, target_col)
    return _rank_of_target_np(scores, target_col)


def _use_numba(backend):
    if backend is None:
        return numba_enabled()
    if backend == "numba":
        if not HAS_NUMBA:
            raise RuntimeError("numba backend requested but numba is not importable")
        return True
    if backend == "numpy":
        return False
    raise ValueError(f"unknown backend {backend!r}")
