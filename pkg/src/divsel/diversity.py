"""Log-determinant distance: diversity of a dataset against a reference.

A dataset's spread is summarized by running exhaustive greedy MAP on its
(quality-free) kernel and on the kernel of a same-size reference sample,
then comparing the two log-determinant trajectories:

    ldd = (log det R - log det L) / N

with the full curve ldd_curve[t] = (cum_R[t] - cum_L[t]) / (t+1). The
reference is a uniform hypersphere sample, the most spread-out cloud a
unit-norm feature space admits, so less diverse datasets score larger
positive values and the measure is zero against itself. Values are only
comparable between runs that used the identical reference spec.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass

import numpy as np

from .dpp import DEFAULT_VARIANCE_FLOOR, Budget, GreedyTrace, greedy_map
from .errors import ValidationError
from .features import FeatureMatrix, SynthSpec, load_features, synthesize
from .kernels import DppKernel, KernelSpec

# Reference dimensionality defaults by representation family; gradient
# sketches and decoder embeddings both live at 4096, encoder embeddings
# at 768.
DEFAULT_REF_DIM = {
    "gradient": 4096,
    "decoder-embedding": 4096,
    "encoder-embedding": 768,
}

# Above this fraction of clamped steps the ldd value is flagged as
# depending on the variance floor rather than the data alone.
FLOOR_FLAG_FRACTION = 0.01


@dataclass(frozen=True)
class ReferenceSpec:
    """Reference sample description.

    kind "hypersphere" draws n uniform unit vectors in d_ref dimensions
    under the given seed; kind "file" loads a feature matrix from path
    (its row count must match the dataset). The kernel must equal the
    dataset kernel or the comparison is meaningless.
    """

    kind: str
    n: int
    kernel: KernelSpec
    d_ref: int = 4096
    seed: int = 0
    path: str | None = None

    def __post_init__(self):
        if self.kind not in ("hypersphere", "file"):
            raise ValidationError(f"unknown reference kind {self.kind!r}")
        if self.n < 1:
            raise ValidationError("reference n must be >= 1")
        if self.kind == "hypersphere" and self.d_ref < 1:
            raise ValidationError("reference d_ref must be >= 1")
        if self.kind == "file" and not self.path:
            raise ValidationError("file reference needs a path")


def make_reference(spec: ReferenceSpec) -> FeatureMatrix:
    """Realize the reference sample described by ``spec``."""
    if spec.kind == "hypersphere":
        return synthesize(SynthSpec(kind="hypersphere", n=spec.n, d=spec.d_ref, seed=spec.seed))
    ref = load_features(spec.path)
    if ref.n_rows != spec.n:
        raise ValidationError(
            f"reference file has {ref.n_rows} rows, dataset has {spec.n}"
        )
    if spec.kernel.assume_unit_rows and not ref.normalized:
        raise ValidationError(
            "dataset kernel assumes unit rows but the file reference is not normalized"
        )
    return ref


@dataclass(frozen=True)
class DiversityReport:
    """Result of one log-determinant-distance computation.

    Carries the full gain and cumulative trajectories of both runs so
    the per-step curve can be exported or re-derived, plus enough spec
    echo to decide whether two reports are comparable.
    """

    ldd: float
    curve: np.ndarray
    n: int
    gamma: float
    kernel_kind: str
    assume_unit_rows: bool
    kernel_scale: float
    ref_kind: str
    d_ref: int
    ref_seed: int
    variance_floor: float
    clamped_steps_data: int
    clamped_steps_ref: int
    floor_dependent: bool
    name: str
    gains_data: np.ndarray
    gains_ref: np.ndarray
    cum_logdet_data: np.ndarray
    cum_logdet_ref: np.ndarray

    def comparability_key(self) -> tuple:
        """Reports are only comparable when these fields all agree."""
        return (
            self.kernel_kind,
            self.gamma,
            self.assume_unit_rows,
            self.kernel_scale,
            self.ref_kind,
            self.d_ref,
            self.ref_seed,
            self.n,
            self.variance_floor,
        )


def reference_trace(
    spec: ReferenceSpec, variance_floor: float = DEFAULT_VARIANCE_FLOOR
) -> GreedyTrace:
    """Exhaustive greedy trace of the reference kernel.

    Exposed separately so sweeps over many datasets can reuse one
    reference run instead of recomputing it per dataset.
    """
    ref = make_reference(spec)
    k = DppKernel(features=ref, kernel=spec.kernel)
    return greedy_map(
        k, Budget(run_to_exhaustion=True, variance_floor=variance_floor)
    )


def log_det_distance(
    data: FeatureMatrix,
    kernel: KernelSpec,
    ref: ReferenceSpec,
    *,
    variance_floor: float = DEFAULT_VARIANCE_FLOOR,
    ref_trace: GreedyTrace | None = None,
    name: str = "",
) -> DiversityReport:
    """Log-determinant distance of ``data`` from the reference sample.

    The measurement is quality-free by design: quality weighting would
    shift both determinants by item-dependent factors and destroy the
    interpretation as pure spread. Pass ``ref_trace`` (from
    reference_trace on the identical spec) to amortize the reference run
    across many datasets.
    """
    if ref.n != data.n_rows:
        raise ValidationError(
            f"reference n={ref.n} does not match dataset n={data.n_rows}"
        )
    if ref.kernel != kernel:
        raise ValidationError("reference kernel spec differs from dataset kernel spec")
    if kernel.assume_unit_rows and not data.normalized:
        raise ValidationError(
            "kernel assumes unit rows but the dataset is not normalized"
        )
    budget = Budget(run_to_exhaustion=True, variance_floor=variance_floor)
    k_data = DppKernel(features=data, kernel=kernel)
    trace_data = greedy_map(k_data, budget)
    if ref_trace is None:
        ref_trace = reference_trace(ref, variance_floor=variance_floor)
    if ref_trace.n_selected != trace_data.n_selected:
        raise ValidationError(
            f"reference trace has {ref_trace.n_selected} steps, "
            f"dataset trace has {trace_data.n_selected}"
        )
    steps = np.arange(1, trace_data.n_selected + 1, dtype=np.float64)
    curve = (ref_trace.cum_logdet - trace_data.cum_logdet) / steps
    n = trace_data.n_selected
    frac = max(trace_data.clamped_steps, ref_trace.clamped_steps) / n
    return DiversityReport(
        ldd=float(curve[-1]),
        curve=curve,
        n=n,
        gamma=kernel.gamma,
        kernel_kind=kernel.kind,
        assume_unit_rows=kernel.assume_unit_rows,
        kernel_scale=kernel.scale,
        ref_kind=ref.kind,
        d_ref=ref.d_ref if ref.kind == "hypersphere" else -1,
        ref_seed=ref.seed,
        variance_floor=variance_floor,
        clamped_steps_data=trace_data.clamped_steps,
        clamped_steps_ref=ref_trace.clamped_steps,
        floor_dependent=frac > FLOOR_FLAG_FRACTION,
        name=name,
        gains_data=trace_data.gains,
        gains_ref=ref_trace.gains,
        cum_logdet_data=trace_data.cum_logdet,
        cum_logdet_ref=ref_trace.cum_logdet,
    )


def save_report(report: DiversityReport, path) -> None:
    """Serialize a report as JSON with arrays expanded to lists."""
    obj = dataclasses.asdict(report)
    for key, val in obj.items():
        if isinstance(val, np.ndarray):
            obj[key] = val.tolist()
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, sort_keys=True, indent=1)
        fh.write("\n")


def load_report(path) -> DiversityReport:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: not a report JSON ({exc})") from None
    expected = {f.name for f in dataclasses.fields(DiversityReport)}
    if set(obj) != expected:
        raise ValidationError(
            f"{path}: report fields {sorted(obj)} do not match {sorted(expected)}"
        )
    for key in ("curve", "gains_data", "gains_ref", "cum_logdet_data", "cum_logdet_ref"):
        obj[key] = np.asarray(obj[key], dtype=np.float64)
    return DiversityReport(**obj)


def ldd_curve_export(report: DiversityReport, path) -> None:
    """Write the per-step curve as CSV.

    Columns: step, gain_data, gain_ref, cum_logdet_data, cum_logdet_ref,
    logdet_gap, ldd_curve.
    """
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(
            "step,gain_data,gain_ref,cum_logdet_data,cum_logdet_ref,"
            "logdet_gap,ldd_curve\n"
        )
        for t in range(report.n):
            gap = float(report.cum_logdet_ref[t] - report.cum_logdet_data[t])
            fh.write(
                f"{t + 1},{float(report.gains_data[t])!r},{float(report.gains_ref[t])!r},"
                f"{float(report.cum_logdet_data[t])!r},{float(report.cum_logdet_ref[t])!r},"
                f"{gap!r},{float(report.curve[t])!r}\n"
            )
