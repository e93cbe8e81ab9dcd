"""Hot inner loops, compiled with numba when available.

Set ``STAGGERDID_DISABLE_NUMBA=1`` to force the pure-numpy path. Both paths
sum in row order, so each is deterministic for a fixed input; they agree
to rounding error, not bitwise.
"""

import os

import numpy as np

_DISABLED = os.environ.get("STAGGERDID_DISABLE_NUMBA", "").strip().lower() in {"1", "true", "yes"}

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

USING_NUMBA = numba is not None and not _DISABLED


# --------------------------------------------------------------------------
# pure numpy


def _group_sum_np(x, groups, n_groups):
    out = np.empty((n_groups, x.shape[1]))
    for j in range(x.shape[1]):
        out[:, j] = np.bincount(groups, weights=x[:, j], minlength=n_groups)
    return out


def _demean_two_way_np(x, unit, period, n_units, n_periods, tol, max_iter):
    x = np.array(x, dtype=np.float64, copy=True)
    n_u = np.bincount(unit, minlength=n_units).astype(np.float64)
    n_t = np.bincount(period, minlength=n_periods).astype(np.float64)
    n_u[n_u == 0] = 1.0
    n_t[n_t == 0] = 1.0
    for it in range(1, max_iter + 1):
        mu = _group_sum_np(x, unit, n_units) / n_u[:, None]
        x -= mu[unit]
        mt = _group_sum_np(x, period, n_periods) / n_t[:, None]
        x -= mt[period]
        change = max(np.abs(mu).max(initial=0.0), np.abs(mt).max(initial=0.0))
        if change < tol:
            return x, it
    return x, -1


def _longest_runs_np(unit, pos, ok, n_units):
    n = unit.shape[0]
    out = np.zeros(n_units, dtype=np.int64)
    if n == 0:
        return out
    cont = np.zeros(n, dtype=bool)
    cont[1:] = (unit[1:] == unit[:-1]) & (pos[1:] == pos[:-1] + 1) & ok[:-1]
    cont &= ok
    # run length ending at each row: restart counter at every break
    starts = ~cont
    idx = np.arange(n)
    last_start = np.maximum.accumulate(np.where(starts, idx, 0))
    length = np.where(ok, idx - last_start + 1, 0)
    np.maximum.at(out, unit, length)
    return out


# --------------------------------------------------------------------------
# numba

if numba is not None:

    @numba.njit(cache=False)
    def _group_sum_nb(x, groups, n_groups):
        n, k = x.shape
        out = np.zeros((n_groups, k))
        for r in range(n):
            g = groups[r]
            for j in range(k):
                out[g, j] += x[r, j]
        return out

    @numba.njit(cache=False)
    def _demean_two_way_nb(x, unit, period, n_units, n_periods, tol, max_iter):
        x = x.copy()
        n, k = x.shape
        n_u = np.zeros(n_units)
        n_t = np.zeros(n_periods)
        for r in range(n):
            n_u[unit[r]] += 1.0
            n_t[period[r]] += 1.0
        for g in range(n_units):
            if n_u[g] == 0.0:
                n_u[g] = 1.0
        for g in range(n_periods):
            if n_t[g] == 0.0:
                n_t[g] = 1.0
        for it in range(1, max_iter + 1):
            change = 0.0
            mu = np.zeros((n_units, k))
            for r in range(n):
                for j in range(k):
                    mu[unit[r], j] += x[r, j]
            for g in range(n_units):
                for j in range(k):
                    mu[g, j] /= n_u[g]
                    a = abs(mu[g, j])
                    if a > change:
                        change = a
            for r in range(n):
                for j in range(k):
                    x[r, j] -= mu[unit[r], j]
            mt = np.zeros((n_periods, k))
            for r in range(n):
                for j in range(k):
                    mt[period[r], j] += x[r, j]
            for g in range(n_periods):
                for j in range(k):
                    mt[g, j] /= n_t[g]
                    a = abs(mt[g, j])
                    if a > change:
                        change = a
            for r in range(n):
                for j in range(k):
                    x[r, j] -= mt[period[r], j]
            if change < tol:
                return x, it
        return x, -1

    @numba.njit(cache=False)
    def _longest_runs_nb(unit, pos, ok, n_units):
        out = np.zeros(n_units, dtype=np.int64)
        run = 0
        for r in range(unit.shape[0]):
            if not ok[r]:
                run = 0
                continue
            if r > 0 and run > 0 and unit[r] == unit[r - 1] and pos[r] == pos[r - 1] + 1:
                run += 1
            else:
                run = 1
            if run > out[unit[r]]:
                out[unit[r]] = run
        return out


# --------------------------------------------------------------------------
# dispatch


def group_sum(x, groups, n_groups):
    """Sum rows of a 2-D array within integer-coded groups ``0..n_groups-1``."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    groups = np.ascontiguousarray(groups, dtype=np.int64)
    if USING_NUMBA:
        return _group_sum_nb(x, groups, int(n_groups))
    return _group_sum_np(x, groups, int(n_groups))


def demean_two_way(x, unit, period, n_units, n_periods, tol=1e-10, max_iter=10_000):
    """Alternating unit/period demeaning of every column of ``x``.

    Returns ``(demeaned, iterations)``; ``iterations == -1`` means the cap
    was hit before the largest subtracted mean fell below ``tol``.
    """
    x = np.ascontiguousarray(x, dtype=np.float64)
    unit = np.ascontiguousarray(unit, dtype=np.int64)
    period = np.ascontiguousarray(period, dtype=np.int64)
    if USING_NUMBA:
        return _demean_two_way_nb(x, unit, period, int(n_units), int(n_periods), float(tol), int(max_iter))
    return _demean_two_way_np(x, unit, period, int(n_units), int(n_periods), float(tol), int(max_iter))


def longest_runs(unit, pos, ok, n_units):
    """Longest run of consecutive ``ok`` grid positions per unit.

    Rows must be sorted by ``(unit, pos)``.
    """
    unit = np.ascontiguousarray(unit, dtype=np.int64)
    pos = np.ascontiguousarray(pos, dtype=np.int64)
    ok = np.ascontiguousarray(ok, dtype=np.bool_)
    if USING_NUMBA:
        return _longest_runs_nb(unit, pos, ok, int(n_units))
    return _longest_runs_np(unit, pos, ok, int(n_units))
