"""Greedy MAP inference for DPPs with incremental Cholesky updates.

Each iteration selects the item with the largest conditional variance
d_i^2 (ties go to the lowest index), records the marginal gain
log d_j^2, and downdates every remaining variance through one new row of
an incrementally grown Cholesky factor. Kernel rows are computed on
demand, so the full N x N matrix is never formed: O(N*M*D + N*M^2) time
and O(N*(M+D)) memory for M selections over N items in D dimensions.

Conditional variances are clamped at ``variance_floor`` instead of being
allowed to go non-positive, so exhaustive runs always produce a finite
full-length log-determinant curve; clamped steps are flagged in the
trace because their gains are floor-dependent lower bounds.
"""
from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass

import numpy as np

from . import _accel
from .errors import NumericError, ValidationError
from .kernels import DppKernel, materialize

DEFAULT_VARIANCE_FLOOR = 1e-12

BRUTE_FORCE_LIMIT = 1_000_000

_KIND_CODE = {"rbf": _accel.KIND_RBF, "inner-product": _accel.KIND_INNER}


@dataclass(frozen=True)
class Budget:
    """Stopping rule for greedy selection.

    ``run_to_exhaustion`` selects all N items and ignores m. With
    ``stop_on_floor`` the loop instead ends as soon as the best
    remaining candidate sits at the variance floor, which can return
    fewer than m items; by default the loop clamps and keeps going so
    the requested count is always delivered.
    """

    m: int | None = None
    variance_floor: float = DEFAULT_VARIANCE_FLOOR
    run_to_exhaustion: bool = False
    stop_on_floor: bool = False

    def __post_init__(self):
        if not np.isfinite(self.variance_floor) or self.variance_floor <= 0:
            raise ValidationError(
                f"variance_floor must be finite and > 0, got {self.variance_floor}"
            )
        if not self.run_to_exhaustion:
            if self.m is None:
                raise ValidationError("budget needs m unless run_to_exhaustion is set")
            if self.m < 1:
                raise ValidationError(f"budget m must be >= 1, got {self.m}")


@dataclass(frozen=True)
class GreedyTrace:
    """Per-step record of one greedy run.

    gains[t] = log of the selected conditional variance at step t;
    cum_logdet is their running sum, so cum_logdet[t] equals
    log det L_{S_t} for the first t+1 selections (exactly, by
    construction). step_clamped marks steps whose gain came from a
    clamped variance.
    """

    selected: np.ndarray
    gains: np.ndarray
    cum_logdet: np.ndarray
    step_clamped: np.ndarray
    stop_reason: str
    n_items: int

    @property
    def n_selected(self) -> int:
        return int(self.selected.size)

    @property
    def clamped_steps(self) -> int:
        return int(self.step_clamped.sum())


def greedy_map(k: DppKernel, budget: Budget) -> GreedyTrace:
    """Run greedy MAP selection on kernel ``k`` under ``budget``."""
    n = k.n
    if budget.run_to_exhaustion:
        steps = n
    else:
        if budget.m > n:
            raise ValidationError(f"budget m={budget.m} exceeds item count {n}")
        steps = budget.m
    x = np.ascontiguousarray(k.features.values)
    sel, gains, step_clamped, n_taken, reason, err_i, err_j = _accel.greedy_loop(
        x,
        k.sqnorms,
        float(k.kernel.gamma),
        k.bq,
        _KIND_CODE[k.kernel.kind],
        float(k.kernel.scale),
        steps,
        float(budget.variance_floor),
        budget.stop_on_floor,
    )
    if reason == _accel.REASON_NONFINITE:
        raise NumericError(
            f"non-finite kernel entry at row {err_i}, col {err_j}; "
            "check gamma and feature scaling"
        )
    if reason == _accel.REASON_FLOOR:
        stop_reason = "variance-floor"
    elif budget.run_to_exhaustion or n_taken == n:
        stop_reason = "exhausted"
    else:
        stop_reason = "budget-reached"
    gains = gains[:n_taken].copy()
    return GreedyTrace(
        selected=sel[:n_taken].copy(),
        gains=gains,
        cum_logdet=np.cumsum(gains),
        step_clamped=step_clamped[:n_taken].copy(),
        stop_reason=stop_reason,
        n_items=n,
    )


def brute_force_map(k: DppKernel, m: int) -> np.ndarray:
    """Exact size-m MAP by exhaustive enumeration; testing oracle only.

    Ties go to the lexicographically smallest index set. Refuses
    instances with more than a million candidate subsets.
    """
    n = k.n
    if not (1 <= m <= n):
        raise ValidationError(f"need 1 <= m <= {n}, got m={m}")
    total = math.comb(n, m)
    if total > BRUTE_FORCE_LIMIT:
        raise ValidationError(
            f"{total} subsets exceed the brute-force limit of {BRUTE_FORCE_LIMIT}"
        )
    full = materialize(k)
    best_combo = None
    best_val = -np.inf
    for combo in itertools.combinations(range(n), m):
        idx = np.asarray(combo)
        sign, logabs = np.linalg.slogdet(full[np.ix_(idx, idx)])
        val = logabs if sign > 0 else -np.inf
        if val > best_val:
            best_val = val
            best_combo = idx
    return best_combo


def brute_force_value(k: DppKernel, subset) -> float:
    """log det of the subset kernel via slogdet; -inf for singular subsets."""
    idx = np.asarray(subset, dtype=np.int64)
    sign, logabs = np.linalg.slogdet(materialize(k, idx))
    return float(logabs) if sign > 0 else -np.inf


def logdet_direct(k: DppKernel, subset) -> float:
    """log det of the subset kernel by Cholesky factorization.

    On factorization failure a diagonal jitter is escalated from 1e-14
    to at most 1e-10 times the mean diagonal; any jitter actually used
    is reported through warnings. Beyond that the sub-matrix is treated
    as numerically indefinite.
    """
    mat = materialize(k, np.asarray(subset, dtype=np.int64))
    jitters = (0.0, 1e-14, 1e-12, 1e-10)
    mean_diag = float(np.trace(mat)) / mat.shape[0]
    for jit in jitters:
        try:
            chol = np.linalg.cholesky(
                mat if jit == 0.0 else mat + jit * mean_diag * np.eye(mat.shape[0])
            )
        except np.linalg.LinAlgError:
            continue
        if jit > 0.0:
            warnings.warn(
                f"logdet_direct added diagonal jitter {jit:g} * mean diag "
                f"to factorize a {mat.shape[0]}x{mat.shape[0]} sub-matrix",
                stacklevel=2,
            )
        return float(2.0 * np.sum(np.log(np.diag(chol))))
    raise NumericError(
        f"sub-matrix of size {mat.shape[0]} is numerically indefinite "
        "even with jitter 1e-10"
    )


def write_trace_csv(trace: GreedyTrace, path) -> None:
    """Write a greedy trace as CSV: step,index,gain,cum_logdet,clamped."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("step,index,gain,cum_logdet,clamped\n")
        for t in range(trace.n_selected):
            fh.write(
                f"{t + 1},{trace.selected[t]},{float(trace.gains[t])!r},"
                f"{float(trace.cum_logdet[t])!r},{int(trace.step_clamped[t])}\n"
            )


def read_trace_csv(path) -> GreedyTrace:
    """Inverse of write_trace_csv; n_items is not stored and is set to 0."""
    steps, idx, gains, cums, clamped = [], [], [], [], []
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != "step,index,gain,cum_logdet,clamped":
            raise ValidationError(f"{path}: unexpected trace header {header!r}")
        for line in fh:
            if not line.strip():
                continue
            s, i, g, c, cl = line.strip().split(",")
            steps.append(int(s))
            idx.append(int(i))
            gains.append(float(g))
            cums.append(float(c))
            clamped.append(bool(int(cl)))
    return GreedyTrace(
        selected=np.asarray(idx, dtype=np.int64),
        gains=np.asarray(gains),
        cum_logdet=np.asarray(cums),
        step_clamped=np.asarray(clamped, dtype=bool),
        stop_reason="loaded",
        n_items=0,
    )
