"""Diversity-aware subset selection over sketched representations."""

__version__ = "0.1.0"

from ._accel import backend
from .diversity import (
    DiversityReport,
    ReferenceSpec,
    ldd_curve_export,
    log_det_distance,
    make_reference,
    reference_trace,
)
from .dpp import (
    Budget,
    GreedyTrace,
    brute_force_map,
    brute_force_value,
    greedy_map,
    logdet_direct,
    write_trace_csv,
)
from .errors import (
    DegenerateInputError,
    DivselError,
    FormatError,
    LengthMismatchError,
    NumericError,
    ValidationError,
)
from .features import (
    FeatureMatrix,
    ScoreTable,
    SynthSpec,
    load_features,
    load_scores,
    normalize_rows,
    save_features,
    save_scores,
    synthesize,
)
from .kernels import (
    DEFAULT_GAMMA,
    DppKernel,
    KernelSpec,
    kernel_entry,
    kernel_row,
    materialize,
    quality_transform,
)
from .selection import (
    SelectionRequest,
    SelectionResult,
    coverage_metrics,
    save_indices_text,
    save_result,
    select,
)
from .sketch import (
    DistortionSummary,
    LayerGradient,
    SketchPlan,
    lemma1_diagnostic,
    make_plan,
    read_gradients,
    row_project,
    sketch_gradients,
    sparse_jl,
    write_gradients,
)
from .toymodel import (
    ToyExample,
    ToyModel,
    corpus_gradients,
    corpus_scores,
    export_corpus,
    loss_and_grad,
    make_toy_corpus,
    make_toy_model,
    mean_loglik,
    quality_scores,
)

__all__ = [name for name in dir() if not name.startswith("_")]
