"""Subset selection strategies and coverage accounting.

Four strategies share one request/result shape: DPP greedy MAP on a
quality-weighted kernel, plain score ranking, seeded uniform random,
and cosine-threshold deduplication. Only dedup may return fewer than
the requested m (when the threshold exhausts the pool); everything else
always delivers exactly m distinct indices.
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .dpp import DEFAULT_VARIANCE_FLOOR, Budget, GreedyTrace, greedy_map
from .errors import ValidationError
from .features import FeatureMatrix, ScoreTable
from .kernels import DppKernel, KernelSpec, quality_transform

STRATEGIES = ("dpp", "rank", "random", "dedup")

DIRECTIONS = ("desc", "asc")


@dataclass(frozen=True)
class SelectionRequest:
    """Everything one selection run depends on.

    Strategy-specific fields: dpp uses kernel/lam/quality_col
    (quality_col requires scores), rank uses rank_col/direction, random
    uses seed, dedup uses tau. direction "desc" keeps the largest score
    values, "asc" the smallest.
    """

    features: FeatureMatrix
    m: int
    strategy: str
    scores: ScoreTable | None = None
    kernel: KernelSpec = KernelSpec()
    lam: float = 0.0
    quality_col: str | None = None
    quality_mode: str = "rank-normalize"
    rank_col: str | None = None
    direction: str = "desc"
    tau: float | None = None
    seed: int = 0
    variance_floor: float = DEFAULT_VARIANCE_FLOOR

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValidationError(
                f"unknown strategy {self.strategy!r}; choose from {STRATEGIES}"
            )
        if not (1 <= self.m <= self.features.n_rows):
            raise ValidationError(
                f"budget m={self.m} must lie in [1, {self.features.n_rows}]"
            )
        if self.scores is not None and self.scores.n_rows != self.features.n_rows:
            raise ValidationError(
                f"scores have {self.scores.n_rows} rows, features {self.features.n_rows}"
            )
        if self.strategy == "rank":
            if self.rank_col is None:
                raise ValidationError("rank strategy needs rank_col")
            if self.scores is None:
                raise ValidationError("rank strategy needs a score table")
            if self.direction not in DIRECTIONS:
                raise ValidationError(f"direction must be one of {DIRECTIONS}")
        if self.strategy == "dedup":
            if self.tau is None:
                raise ValidationError("dedup strategy needs tau")
            if not (-1.0 <= self.tau <= 1.0):
                raise ValidationError(f"tau must be a cosine in [-1, 1], got {self.tau}")
        if self.strategy != "dedup" and self.tau is not None:
            raise ValidationError(f"tau is only valid for dedup, not {self.strategy!r}")
        if self.strategy != "rank" and self.rank_col is not None:
            raise ValidationError(f"rank_col is only valid for rank, not {self.strategy!r}")
        if self.strategy == "dpp" and self.quality_col is not None and self.scores is None:
            raise ValidationError("quality_col given but no score table supplied")


@dataclass
class SelectionResult:
    """Selected indices plus an echo of how they were chosen."""

    indices: np.ndarray
    strategy: dict
    n_items: int
    shortfall: bool = False
    trace: GreedyTrace | None = None
    metrics: dict | None = None


def select(req: SelectionRequest) -> SelectionResult:
    """Run the requested strategy and validate the result invariants."""
    if req.strategy == "dpp":
        result = _select_dpp(req)
    elif req.strategy == "rank":
        result = _select_rank(req)
    elif req.strategy == "random":
        result = _select_random(req)
    else:
        result = _select_dedup(req)
    idx = result.indices
    if np.unique(idx).size != idx.size:
        raise ValidationError("internal error: repeated indices in selection")
    if idx.size and (idx.min() < 0 or idx.max() >= req.features.n_rows):
        raise ValidationError("internal error: selection index out of range")
    if not result.shortfall and idx.size != req.m:
        raise ValidationError(
            f"internal error: expected {req.m} indices, got {idx.size}"
        )
    return result


def _strategy_echo(req: SelectionRequest, **extra) -> dict:
    echo = {"strategy": req.strategy, "m": req.m}
    echo.update(extra)
    return echo


def _select_dpp(req: SelectionRequest) -> SelectionResult:
    quality = None
    if req.quality_col is not None and req.lam > 0.0:
        quality = quality_transform(
            req.scores.column(req.quality_col), mode=req.quality_mode
        )
    k = DppKernel(
        features=req.features, kernel=req.kernel, quality=quality, lam=req.lam
    )
    trace = greedy_map(k, Budget(m=req.m, variance_floor=req.variance_floor))
    return SelectionResult(
        indices=trace.selected,
        strategy=_strategy_echo(
            req,
            kernel_kind=req.kernel.kind,
            gamma=req.kernel.gamma,
            assume_unit_rows=req.kernel.assume_unit_rows,
            lam=req.lam,
            quality_col=req.quality_col,
            quality_mode=req.quality_mode if quality is not None else None,
            variance_floor=req.variance_floor,
        ),
        n_items=req.features.n_rows,
        trace=trace,
    )


def _select_rank(req: SelectionRequest) -> SelectionResult:
    col = req.scores.column(req.rank_col)
    key = -col if req.direction == "desc" else col
    # stable sort keeps the lowest index first among tied scores
    order = np.argsort(key, kind="stable")
    return SelectionResult(
        indices=order[: req.m].astype(np.int64),
        strategy=_strategy_echo(req, rank_col=req.rank_col, direction=req.direction),
        n_items=req.features.n_rows,
    )


def _select_random(req: SelectionRequest) -> SelectionResult:
    rng = np.random.default_rng(req.seed)
    idx = rng.choice(req.features.n_rows, size=req.m, replace=False).astype(np.int64)
    return SelectionResult(
        indices=idx,
        strategy=_strategy_echo(req, seed=req.seed),
        n_items=req.features.n_rows,
    )


def _select_dedup(req: SelectionRequest) -> SelectionResult:
    x = req.features.values
    norms = np.linalg.norm(x, axis=1)
    if np.any(norms == 0.0):
        raise ValidationError(
            f"row {int(np.argmax(norms == 0.0))} has zero norm; "
            "cosine dedup is undefined"
        )
    unit = x / norms[:, None]
    kept: list[int] = []
    kept_rows = np.empty((req.m, x.shape[1]))
    for i in range(x.shape[0]):
        if kept:
            cos = kept_rows[: len(kept)] @ unit[i]
            if cos.max() >= req.tau:
                continue
        kept_rows[len(kept)] = unit[i]
        kept.append(i)
        if len(kept) == req.m:
            break
    shortfall = len(kept) < req.m
    if shortfall:
        warnings.warn(
            f"dedup kept only {len(kept)} of the requested {req.m} items "
            f"at tau={req.tau}",
            stacklevel=2,
        )
    return SelectionResult(
        indices=np.asarray(kept, dtype=np.int64),
        strategy=_strategy_echo(req, tau=req.tau),
        n_items=req.features.n_rows,
        shortfall=shortfall,
    )


def coverage_metrics(
    result: SelectionResult, labels, scores: ScoreTable | None = None
) -> dict:
    """Ground-truth coverage and duplication statistics for a selection.

    labels assigns every item a cluster id. duplicate_pairs counts
    selected pairs sharing a cluster; mean_quality averages each score
    column over the selection.
    """
    lab = np.asarray(labels).ravel()
    if lab.size != result.n_items:
        raise ValidationError(
            f"labels cover {lab.size} items, selection ran over {result.n_items}"
        )
    sel = lab[result.indices]
    _, counts = np.unique(sel, return_counts=True)
    metrics = {
        "n_selected": int(result.indices.size),
        "clusters_covered": int(counts.size),
        "max_cluster_share": float(counts.max() / sel.size) if sel.size else 0.0,
        "duplicate_pairs": int(sum(math.comb(int(c), 2) for c in counts)),
    }
    if scores is not None:
        metrics["mean_quality"] = {
            name: float(scores.columns[name][result.indices].mean())
            for name in scores.names
        }
    result.metrics = metrics
    return metrics


def result_to_json(result: SelectionResult) -> dict:
    obj = {
        "indices": [int(i) for i in result.indices],
        "strategy": result.strategy,
        "n_items": result.n_items,
        "shortfall": bool(result.shortfall),
    }
    if result.metrics is not None:
        obj["metrics"] = result.metrics
    return obj


def save_result(result: SelectionResult, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(result_to_json(result), fh, sort_keys=True, indent=1)
        fh.write("\n")


def save_indices_text(result: SelectionResult, path) -> None:
    """One selected index per line, in selection order."""
    with open(path, "w", encoding="utf-8") as fh:
        for i in result.indices:
            fh.write(f"{int(i)}\n")
