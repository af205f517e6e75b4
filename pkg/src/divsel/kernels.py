"""Similarity kernels and quality-weighted DPP kernels.

The base similarity is a Gaussian kernel on feature rows,
``K_ij = exp(-gamma * ||x_i - x_j||^2)``. When every row is unit length
the squared distance collapses to ``2 - 2 x_i.x_j`` and the entry can be
computed from a single inner product as ``exp(2 gamma x_i.x_j - 2 gamma)``.
Note the constant stays: both code paths agree entrywise on normalized
input instead of differing by a factor of exp(2 gamma).

Per-item quality q (all entries positive, produced by quality_transform)
enters multiplicatively:

    L_ij = K_ij * exp(beta * q_i) * exp(beta * q_j),  beta = lam / (2 (1 - lam))

so lam = 0 ignores quality entirely and lam -> 1 is dominated by it.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import ValidationError
from .features import FeatureMatrix

KERNEL_KINDS = ("rbf", "inner-product")

# Bandwidth defaults by representation family: unit-norm gradient sketches
# and encoder embeddings behave well at 1, decoder embeddings need a much
# sharper kernel, raw unnormalized gradients a much flatter one.
DEFAULT_GAMMA = {
    "gradient": 1.0,
    "encoder-embedding": 1.0,
    "decoder-embedding": 10.0,
    "gradient-unnormalized": 0.01,
}

DEFAULT_MATERIALIZE_CAP = 20_000

QUALITY_MODES = ("rank-normalize", "min-max", "identity")
_MINMAX_EPS = 1e-3


@dataclass(frozen=True)
class KernelSpec:
    """Similarity kernel configuration.

    ``assume_unit_rows`` switches the rbf kernel to its inner-product
    form; callers must only set it for matrices whose rows are unit
    length. ``scale`` multiplies every kernel entry and exists so that
    scale-invariance of downstream quantities can be exercised through
    the public interface; it defaults to 1 and there is rarely a reason
    to change it.
    """

    kind: str = "rbf"
    gamma: float = 1.0
    assume_unit_rows: bool = False
    scale: float = 1.0

    def __post_init__(self):
        if self.kind not in KERNEL_KINDS:
            raise ValidationError(f"unknown kernel kind {self.kind!r}")
        if not np.isfinite(self.gamma) or self.gamma <= 0:
            raise ValidationError(f"gamma must be finite and > 0, got {self.gamma}")
        if not np.isfinite(self.scale) or self.scale <= 0:
            raise ValidationError(f"scale must be finite and > 0, got {self.scale}")


def quality_transform(raw, mode: str = "rank-normalize") -> np.ndarray:
    """Map raw scores to positive quality values.

    rank-normalize: fractional rank in (0, 1], ties get the average rank.
    min-max: affine map onto [1e-3, 1]; a constant column maps to all ones.
    identity: pass through, rejecting non-positive entries.
    """
    arr = np.asarray(raw, dtype=np.float64).ravel()
    if arr.size == 0:
        raise ValidationError("quality_transform needs at least one score")
    if not np.all(np.isfinite(arr)):
        raise ValidationError("quality scores must be finite")
    if mode == "rank-normalize":
        return _average_ranks(arr) / arr.size
    if mode == "min-max":
        lo, hi = arr.min(), arr.max()
        if hi == lo:
            return np.ones_like(arr)
        return _MINMAX_EPS + (1.0 - _MINMAX_EPS) * (arr - lo) / (hi - lo)
    if mode == "identity":
        if np.any(arr <= 0):
            bad = int(np.argmax(arr <= 0))
            raise ValidationError(
                f"identity quality requires positive scores; row {bad} is {arr[bad]}"
            )
        return arr.copy()
    raise ValidationError(f"unknown quality mode {mode!r}; choose from {QUALITY_MODES}")


def _average_ranks(arr: np.ndarray) -> np.ndarray:
    """1-based ranks with ties averaged, like the usual fractional ranking."""
    order = np.argsort(arr, kind="stable")
    ranks = np.empty(arr.size, dtype=np.float64)
    ranks[order] = np.arange(1, arr.size + 1, dtype=np.float64)
    uniq, inverse = np.unique(arr, return_inverse=True)
    sums = np.bincount(inverse, weights=ranks, minlength=uniq.size)
    counts = np.bincount(inverse, minlength=uniq.size)
    return (sums / counts)[inverse]


@dataclass(frozen=True)
class DppKernel:
    """Lazy quality-weighted kernel over a feature matrix.

    Entries are computed on demand; the full N x N matrix only exists
    when materialize() is called, and that is capped.
    """

    features: FeatureMatrix
    kernel: KernelSpec = KernelSpec()
    quality: np.ndarray | None = None
    lam: float = 0.0

    def __post_init__(self):
        if not np.isfinite(self.lam) or not (0.0 <= self.lam < 1.0):
            raise ValidationError(
                f"lam must lie in [0, 1), got {self.lam}; "
                "pure quality ranking is a separate strategy"
            )
        if self.kernel.assume_unit_rows and not self.features.normalized:
            raise ValidationError(
                "kernel assumes unit rows but the feature matrix is not normalized"
            )
        if self.quality is not None:
            q = np.asarray(self.quality, dtype=np.float64).ravel()
            if q.size != self.features.n_rows:
                raise ValidationError(
                    f"quality has {q.size} entries, features have {self.features.n_rows}"
                )
            if not np.all(np.isfinite(q)) or np.any(q <= 0):
                raise ValidationError(
                    "quality values must be finite and positive; "
                    "run raw scores through quality_transform first"
                )
            object.__setattr__(self, "quality", q)

    @property
    def n(self) -> int:
        return self.features.n_rows

    @property
    def beta(self) -> float:
        return self.lam / (2.0 * (1.0 - self.lam))

    @cached_property
    def bq(self) -> np.ndarray:
        """beta * q, the per-item log weight; zeros when quality is unused."""
        if self.quality is None or self.lam == 0.0:
            return np.zeros(self.n)
        return self.beta * self.quality

    @cached_property
    def sqnorms(self) -> np.ndarray:
        if self.kernel.assume_unit_rows:
            return np.ones(self.n)
        x = self.features.values
        return np.einsum("ij,ij->i", x, x)


def _check_index(k: DppKernel, i: int) -> None:
    if not (0 <= i < k.n):
        raise ValidationError(f"index {i} out of range for {k.n} items")


def kernel_entry(k: DppKernel, i: int, j: int) -> float:
    """Single kernel entry L_ij. Symmetric bitwise: the pair is evaluated
    in canonical order."""
    _check_index(k, i)
    _check_index(k, j)
    if j < i:
        i, j = j, i
    bq = k.bq
    s = k.kernel.scale
    if i == j:
        diag = 1.0 if k.kernel.kind == "rbf" else k.sqnorms[i]
        return float(s * diag * np.exp(2.0 * bq[i]))
    x = k.features.values
    dot = float(np.dot(x[i], x[j]))
    if k.kernel.kind == "rbf":
        g = k.kernel.gamma
        return float(
            s * np.exp(2.0 * g * dot - g * k.sqnorms[i] - g * k.sqnorms[j] + bq[i] + bq[j])
        )
    return float(s * dot * np.exp(bq[i] + bq[j]))


def kernel_row(k: DppKernel, i: int) -> np.ndarray:
    """Row i of L via one matrix-vector product plus elementwise transforms."""
    _check_index(k, i)
    x = k.features.values
    bq = k.bq
    s = k.kernel.scale
    dots = x @ x[i]
    if k.kernel.kind == "rbf":
        g = k.kernel.gamma
        row = s * np.exp(2.0 * g * dots - g * k.sqnorms - g * k.sqnorms[i] + bq + bq[i])
        row[i] = s * np.exp(2.0 * bq[i])
    else:
        row = s * dots * np.exp(bq + bq[i])
        row[i] = s * k.sqnorms[i] * np.exp(2.0 * bq[i])
    return row


def materialize(
    k: DppKernel, indices=None, cap: int = DEFAULT_MATERIALIZE_CAP
) -> np.ndarray:
    """Dense symmetric kernel matrix for all items or the given subset.

    Refuses to build matrices above ``cap`` rows; use kernel_row for
    streaming access at larger scales.
    """
    if indices is None:
        idx = np.arange(k.n)
    else:
        idx = np.asarray(indices, dtype=np.int64).ravel()
        if idx.size == 0:
            raise ValidationError("materialize needs at least one index")
        if idx.min() < 0 or idx.max() >= k.n:
            raise IndexError(
                f"subset indices out of range for {k.n} items: "
                f"[{idx.min()}, {idx.max()}]"
            )
        if np.unique(idx).size != idx.size:
            raise ValidationError("materialize subset contains repeated indices")
    if idx.size > cap:
        raise ValidationError(
            f"refusing to materialize {idx.size} x {idx.size} kernel (cap {cap})"
        )
    x = k.features.values[idx]
    bq = k.bq[idx]
    sq = k.sqnorms[idx]
    s = k.kernel.scale
    g = x @ x.T
    if k.kernel.kind == "rbf":
        gam = k.kernel.gamma
        mat = s * np.exp(
            2.0 * gam * g - gam * sq[:, None] - gam * sq[None, :] + bq[:, None] + bq[None, :]
        )
        np.fill_diagonal(mat, s * np.exp(2.0 * bq))
    else:
        mat = s * g * np.exp(bq[:, None] + bq[None, :])
        np.fill_diagonal(mat, s * sq * np.exp(2.0 * bq))
    # enforce exact symmetry; dgemm output is only symmetric up to rounding
    iu = np.triu_indices(idx.size, k=1)
    mat[(iu[1], iu[0])] = mat[iu]
    return mat
