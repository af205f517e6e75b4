"""Two-stage random sketching of per-example gradients.

Stage one multiplies each layer gradient (m x n) on the right by the
transpose of a Gaussian matrix A (r x n, entries iid N(0, 1/r)) that is
regenerated from a per-layer seed, compressing columns while keeping
row geometry: squared row norms, and hence the full Frobenius norm, are
preserved in expectation with relative error shrinking like 1/sqrt(r).

Stage two flattens the projected layers row-major, concatenates them in
fixed layer order, and applies a sparse sign sketch: every input
coordinate is scattered to s distinct output rows with iid +-1 signs
scaled by 1/sqrt(s). Both stages are exactly linear in the input, so
sums and differences of gradients commute with sketching.

Gradient files use the DGF1 container:

    bytes 0..3  magic ``DGF1``
    u32 LE      layer count
    per layer:  u32 LE name byte length, UTF-8 name,
                u32 LE m, u32 LE n, m*n float32 LE row major
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import _accel
from .errors import FormatError, LengthMismatchError, ValidationError

DGF1_MAGIC = b"DGF1"

DEFAULT_SKETCH_DIM = 4096
DEFAULT_SPARSITY = 8

_U32 = struct.Struct("<I")


@dataclass(frozen=True)
class LayerGradient:
    """One named gradient matrix, float64 in memory."""

    name: str
    matrix: np.ndarray

    def __post_init__(self):
        if not self.name:
            raise ValidationError("layer name must be non-empty")
        mat = np.ascontiguousarray(self.matrix, dtype=np.float64)
        if mat.ndim != 2 or mat.shape[0] < 1 or mat.shape[1] < 1:
            raise ValidationError(
                f"layer {self.name!r} gradient must be a non-empty 2-D matrix"
            )
        if not np.all(np.isfinite(mat)):
            raise ValidationError(f"layer {self.name!r} gradient has non-finite entries")
        object.__setattr__(self, "matrix", mat)


@dataclass(frozen=True)
class SketchPlan:
    """Frozen description of the full two-stage sketch.

    layer_seeds fixes both the layer order and the per-layer Gaussian
    seeds; jl_seed drives the sparse stage. Two plans with equal fields
    realize the identical linear map.
    """

    r: int
    d_out: int
    layer_seeds: tuple[tuple[str, int], ...]
    s: int = DEFAULT_SPARSITY
    jl_seed: int = 0

    def __post_init__(self):
        if self.r < 1:
            raise ValidationError(f"projection rank r must be >= 1, got {self.r}")
        if self.d_out < 1:
            raise ValidationError(f"d_out must be >= 1, got {self.d_out}")
        if not (1 <= self.s <= self.d_out):
            raise ValidationError(f"need 1 <= s <= d_out, got s={self.s} d_out={self.d_out}")
        if not self.layer_seeds:
            raise ValidationError("plan needs at least one layer")
        names = [n for n, _ in self.layer_seeds]
        if len(set(names)) != len(names):
            raise ValidationError(f"duplicate layer names in plan: {names}")

    @property
    def layer_names(self) -> tuple[str, ...]:
        return tuple(n for n, _ in self.layer_seeds)

    def seed_for(self, name: str) -> int:
        for n, s in self.layer_seeds:
            if n == name:
                return s
        raise ValidationError(f"plan has no layer {name!r}")


def make_plan(
    layer_names,
    r: int,
    d_out: int = DEFAULT_SKETCH_DIM,
    s: int = DEFAULT_SPARSITY,
    seed: int = 0,
) -> SketchPlan:
    """Derive a plan with per-layer seeds spawned deterministically from one seed."""
    names = list(layer_names)
    seeds = tuple(
        (name, int(np.random.SeedSequence([seed, i]).generate_state(1, np.uint64)[0]))
        for i, name in enumerate(names)
    )
    return SketchPlan(r=r, d_out=d_out, layer_seeds=seeds, s=s, jl_seed=seed)


def gaussian_stage(seed: int, r: int, n: int) -> np.ndarray:
    """The (r x n) Gaussian matrix A for one layer, entries N(0, 1/r)."""
    rng = np.random.default_rng(seed)
    return rng.standard_normal((r, n)) / np.sqrt(r)


def row_project(grad: LayerGradient, plan: SketchPlan) -> np.ndarray:
    """Stage one: (m x n) -> (m x r) via grad.matrix @ A.T."""
    a = gaussian_stage(plan.seed_for(grad.name), plan.r, grad.matrix.shape[1])
    return grad.matrix @ a.T


@lru_cache(maxsize=8)
def _sparse_map(d_in: int, d_out: int, s: int, seed: int):
    """Realize the sparse stage: positions (d_in x s, distinct per row)
    and signs already scaled by 1/sqrt(s). Cached because corpus sweeps
    apply the same map to every example."""
    rng = np.random.default_rng(seed)
    signs = (rng.integers(0, 2, size=(d_in, s)).astype(np.float64) * 2.0 - 1.0) / np.sqrt(s)
    if s == d_out:
        pos = np.tile(np.arange(d_out, dtype=np.int64), (d_in, 1))
    elif s > d_out // 2:
        pos = np.empty((d_in, s), dtype=np.int64)
        for c in range(d_in):
            pos[c] = rng.choice(d_out, size=s, replace=False)
    else:
        pos = rng.integers(0, d_out, size=(d_in, s)).astype(np.int64)
        for _ in range(1000):
            srt = np.sort(pos, axis=1)
            bad = (np.diff(srt, axis=1) == 0).any(axis=1)
            if not bad.any():
                break
            pos[bad] = rng.integers(0, d_out, size=(int(bad.sum()), s))
        else:  # pragma: no cover - unreachable for s <= d_out/2
            raise ValidationError("sparse map rejection sampling did not converge")
    pos.setflags(write=False)
    signs.setflags(write=False)
    return pos, signs


def sparse_jl(v: np.ndarray, d_out: int, s: int = DEFAULT_SPARSITY, seed: int = 0) -> np.ndarray:
    """Stage two on a flat vector: scatter each coordinate to s signed rows."""
    vec = np.ascontiguousarray(v, dtype=np.float64).ravel()
    if vec.size == 0:
        raise ValidationError("sparse_jl input must be non-empty")
    pos, signs = _sparse_map(vec.size, d_out, s, seed)
    return _accel.scatter_add(vec, pos, signs, d_out)


def sketch_gradients(grads, plan: SketchPlan) -> np.ndarray:
    """Full two-stage sketch of one example's named layer gradients.

    The layers must match the plan's names in order; shapes only need
    consistent column counts per layer (the Gaussian stage is seeded per
    layer and sized to the gradient it meets).
    """
    names = tuple(g.name for g in grads)
    if names != plan.layer_names:
        raise ValidationError(
            f"gradient layers {list(names)} do not match plan layers "
            f"{list(plan.layer_names)}"
        )
    flat = np.concatenate([row_project(g, plan).ravel() for g in grads])
    return sparse_jl(flat, plan.d_out, plan.s, plan.jl_seed)


@dataclass(frozen=True)
class DistortionSummary:
    """Monte Carlo distortion quantiles for the Gaussian stage.

    Distortions are |squared Frobenius norm after projection minus
    before| on unit-Frobenius-norm random matrices, so the numbers read
    directly as relative errors.
    """

    r: int
    m: int
    n: int
    trials: int
    q50: float
    q90: float
    q95: float
    q99: float
    worst_row_q95: float


def lemma1_diagnostic(
    m: int, n: int, r: int, trials: int = 200, seed: int = 0
) -> DistortionSummary:
    """Measure squared-norm distortion of the Gaussian stage empirically.

    Also tracks the worst per-row squared-norm distortion per trial,
    since the row-wise guarantee is the one the stage actually makes.
    """
    if trials < 1:
        raise ValidationError("trials must be >= 1")
    rng = np.random.default_rng(seed)
    total = np.empty(trials)
    worst_row = np.empty(trials)
    for t in range(trials):
        g = rng.standard_normal((m, n))
        g /= np.linalg.norm(g)
        a = rng.standard_normal((r, n)) / np.sqrt(r)
        p = g @ a.T
        total[t] = abs(np.sum(p * p) - 1.0)
        rows_before = np.sum(g * g, axis=1)
        rows_after = np.sum(p * p, axis=1)
        scale = np.maximum(rows_before, 1e-300)
        worst_row[t] = np.max(np.abs(rows_after - rows_before) / scale)
    q50, q90, q95, q99 = np.quantile(total, [0.5, 0.9, 0.95, 0.99])
    return DistortionSummary(
        r=r,
        m=m,
        n=n,
        trials=trials,
        q50=float(q50),
        q90=float(q90),
        q95=float(q95),
        q99=float(q99),
        worst_row_q95=float(np.quantile(worst_row, 0.95)),
    )


def write_gradients(path, grads) -> None:
    """Write one example's layer gradients as a DGF1 file."""
    grads = list(grads)
    if not grads:
        raise ValidationError("cannot write an empty gradient container")
    with open(path, "wb") as fh:
        fh.write(DGF1_MAGIC)
        fh.write(_U32.pack(len(grads)))
        for g in grads:
            name = g.name.encode("utf-8")
            fh.write(_U32.pack(len(name)))
            fh.write(name)
            m, n = g.matrix.shape
            fh.write(_U32.pack(m))
            fh.write(_U32.pack(n))
            fh.write(np.ascontiguousarray(g.matrix, dtype="<f4").tobytes())


def read_gradients(path) -> list[LayerGradient]:
    """Read a DGF1 file back into named float64 layer gradients."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != DGF1_MAGIC:
        raise FormatError(f"{path}: bad magic {blob[:4]!r}")
    off = 4
    try:
        (count,) = _U32.unpack_from(blob, off)
        off += 4
        grads = []
        for _ in range(count):
            (name_len,) = _U32.unpack_from(blob, off)
            off += 4
            name = blob[off : off + name_len].decode("utf-8")
            off += name_len
            (m,) = _U32.unpack_from(blob, off)
            (n,) = _U32.unpack_from(blob, off + 4)
            off += 8
            need = 4 * m * n
            if off + need > len(blob):
                raise LengthMismatchError(
                    f"{path}: layer {name!r} declares {need} payload bytes, "
                    f"only {len(blob) - off} remain"
                )
            mat = (
                np.frombuffer(blob, dtype="<f4", count=m * n, offset=off)
                .reshape(m, n)
                .astype(np.float64)
            )
            off += need
            grads.append(LayerGradient(name=name, matrix=mat))
    except struct.error:
        raise LengthMismatchError(f"{path}: truncated DGF1 header") from None
    if off != len(blob):
        raise LengthMismatchError(f"{path}: {len(blob) - off} trailing bytes")
    if not grads:
        raise FormatError(f"{path}: zero layers")
    return grads
