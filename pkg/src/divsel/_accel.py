"""Hot numeric loops, compiled with numba when available.

Every kernel here has two implementations with identical semantics: a
numba ``@njit`` version and a pure-numpy version. The active backend is
chosen once at import time. Setting the environment variable
``DIVSEL_NO_NUMBA=1`` forces the numpy path even when numba is
installed; if numba cannot be imported the numpy path is used silently.

The two greedy implementations may differ in the last couple of floating
point bits (BLAS vs scalar accumulation); the scatter kernels are exact
twins. ``benchmarks/bench_backends.py`` times both.
"""
from __future__ import annotations

import os

import numpy as np

_env = os.environ.get("DIVSEL_NO_NUMBA", "").strip().lower()
NUMBA_DISABLED = _env in {"1", "true", "yes", "on"}

try:
    if NUMBA_DISABLED:
        raise ImportError("numba disabled via DIVSEL_NO_NUMBA")
    from numba import njit

    HAVE_NUMBA = True
except ImportError:
    HAVE_NUMBA = False

    def njit(*args, **kwargs):  # pragma: no cover - trivial shim
        def wrap(func):
            return func

        if args and callable(args[0]):
            return args[0]
        return wrap


def backend() -> str:
    """Name of the active backend, either ``"numba"`` or ``"numpy"``."""
    return "numba" if HAVE_NUMBA else "numpy"


# Greedy loop exit reasons (shared with dpp.greedy_map).
REASON_COMPLETED = 0
REASON_FLOOR = 1
REASON_NONFINITE = 2

# Kernel kinds.
KIND_RBF = 0
KIND_INNER = 1


def _greedy_numpy(X, sqnorms, gamma, bq, kind, scale, steps, floor, stop_on_floor):
    """Greedy conditional-variance loop, vectorized numpy implementation.

    Parameters mirror ``_greedy_numba``. Returns
    ``(selected, gains, step_clamped, n_taken, reason, err_row, err_col)``
    with the first three arrays sized ``steps`` (only ``n_taken`` entries
    are meaningful).
    """
    N = X.shape[0]
    cis = np.zeros((steps, N))
    kii = np.ones(N) if kind == KIND_RBF else sqnorms.copy()
    with np.errstate(over="ignore"):
        d2 = scale * kii * np.exp(2.0 * bq)
    if not np.all(np.isfinite(d2)):
        bad = int(np.argmin(np.isfinite(d2)))
        empty = np.zeros(steps, dtype=bool)
        return (
            np.full(steps, -1, dtype=np.int64),
            np.zeros(steps),
            empty,
            0,
            REASON_NONFINITE,
            bad,
            bad,
        )
    clamped = d2 < floor
    d2 = np.maximum(d2, floor)
    sel_mask = np.zeros(N, dtype=bool)
    sel = np.full(steps, -1, dtype=np.int64)
    gains = np.zeros(steps)
    step_clamped = np.zeros(steps, dtype=bool)
    n_taken = 0
    reason = REASON_COMPLETED

    for t in range(steps):
        masked = np.where(sel_mask, -np.inf, d2)
        j = int(np.argmax(masked))
        if stop_on_floor and clamped[j]:
            reason = REASON_FLOOR
            break
        gains[t] = np.log(d2[j])
        sel[t] = j
        step_clamped[t] = clamped[j]
        sel_mask[j] = True
        n_taken = t + 1
        if t == steps - 1:
            break
        dots = X @ X[j]
        if kind == KIND_RBF:
            row = scale * np.exp(
                2.0 * gamma * dots - gamma * sqnorms - gamma * sqnorms[j] + bq + bq[j]
            )
            row[j] = scale * np.exp(2.0 * bq[j])
        else:
            row = scale * dots * np.exp(bq + bq[j])
            row[j] = scale * sqnorms[j] * np.exp(2.0 * bq[j])
        if not np.all(np.isfinite(row)):
            bad = int(np.argmin(np.isfinite(row)))
            return sel, gains, step_clamped, n_taken, REASON_NONFINITE, j, bad
        dj = np.sqrt(d2[j])
        if t:
            e = (row - cis[:t, j] @ cis[:t]) / dj
        else:
            e = row / dj
        cis[t] = e
        d2 = d2 - e * e
        low = ~sel_mask & (d2 < floor)
        clamped |= low
        d2[low] = floor
    return sel, gains, step_clamped, n_taken, reason, -1, -1


@njit(cache=True)
def _greedy_numba(X, sqnorms, gamma, bq, kind, scale, steps, floor, stop_on_floor):
    N, D = X.shape
    cis = np.zeros((steps, N))
    d2 = np.empty(N)
    clamped = np.zeros(N, dtype=np.bool_)
    sel_mask = np.zeros(N, dtype=np.bool_)
    sel = np.full(steps, -1, dtype=np.int64)
    gains = np.zeros(steps)
    step_clamped = np.zeros(steps, dtype=np.bool_)
    row = np.empty(N)
    tmp = np.empty(N)

    for i in range(N):
        kii = 1.0 if kind == KIND_RBF else sqnorms[i]
        v = scale * kii * np.exp(2.0 * bq[i])
        if not np.isfinite(v):
            return sel, gains, step_clamped, 0, REASON_NONFINITE, i, i
        if v < floor:
            v = floor
            clamped[i] = True
        d2[i] = v

    n_taken = 0
    reason = REASON_COMPLETED
    for t in range(steps):
        j = -1
        best = -1.0
        for i in range(N):
            if not sel_mask[i] and d2[i] > best:
                best = d2[i]
                j = i
        if j < 0:
            break
        if stop_on_floor and clamped[j]:
            reason = REASON_FLOOR
            break
        gains[t] = np.log(d2[j])
        sel[t] = j
        step_clamped[t] = clamped[j]
        sel_mask[j] = True
        n_taken = t + 1
        if t == steps - 1:
            break
        sj = sqnorms[j]
        bqj = bq[j]
        for i in range(N):
            acc = 0.0
            for dd in range(D):
                acc += X[i, dd] * X[j, dd]
            tmp[i] = acc
        if kind == KIND_RBF:
            for i in range(N):
                row[i] = scale * np.exp(
                    2.0 * gamma * tmp[i] - gamma * sqnorms[i] - gamma * sj + bq[i] + bqj
                )
            row[j] = scale * np.exp(2.0 * bqj)
        else:
            for i in range(N):
                row[i] = scale * tmp[i] * np.exp(bq[i] + bqj)
            row[j] = scale * sj * np.exp(2.0 * bqj)
        for i in range(N):
            if not np.isfinite(row[i]):
                return sel, gains, step_clamped, n_taken, REASON_NONFINITE, j, i
        dj = np.sqrt(d2[j])
        for i in range(N):
            tmp[i] = row[i]
        for kk in range(t):
            cjk = cis[kk, j]
            for i in range(N):
                tmp[i] -= cjk * cis[kk, i]
        for i in range(N):
            e = tmp[i] / dj
            cis[t, i] = e
            if not sel_mask[i]:
                nd = d2[i] - e * e
                if nd < floor:
                    nd = floor
                    clamped[i] = True
                d2[i] = nd
    return sel, gains, step_clamped, n_taken, reason, -1, -1


def _scatter_numpy(values, positions, signs_scaled, d_out):
    """Accumulate ``values[c] * signs_scaled[c, t]`` into ``positions[c, t]``."""
    contrib = values[:, None] * signs_scaled
    return np.bincount(positions.ravel(), weights=contrib.ravel(), minlength=d_out)


@njit(cache=True)
def _scatter_numba(values, positions, signs_scaled, d_out):
    out = np.zeros(d_out)
    n, s = positions.shape
    for c in range(n):
        v = values[c]
        for t in range(s):
            out[positions[c, t]] += v * signs_scaled[c, t]
    return out


if HAVE_NUMBA:
    greedy_loop = _greedy_numba
    scatter_add = _scatter_numba
else:
    greedy_loop = _greedy_numpy
    scatter_add = _scatter_numpy
