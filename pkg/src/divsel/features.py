"""Feature matrices, score tables, synthetic data, and the DSF1 disk format.

Feature vectors live in float64 in memory and float32 on disk. The DSF1
binary layout is:

    bytes 0..3   magic ``DSF1``
    bytes 4..7   u32 little-endian row count N
    bytes 8..11  u32 little-endian column count D
    byte  12     u8 normalized flag (1 = rows are unit length)
    bytes 13..15 reserved, zero
    rest         N*D float32 little-endian, row major

A headerless CSV of decimals (one row per line) is accepted as a
fallback input format. The normalized flag on a loaded matrix is set by
actually checking the rows, never trusted from the header.
"""
from __future__ import annotations

import io
import json
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DegenerateInputError,
    FormatError,
    LengthMismatchError,
    ValidationError,
)

DSF1_MAGIC = b"DSF1"
_HEADER = struct.Struct("<4sIIB3s")

# Bit generator used for all synthesis; recorded in CLI metadata so runs
# can name the exact sampling algorithm they depended on.
GENERATOR_NAME = "PCG64"

UNIT_ROW_TOL = 1e-6


def _first_nonfinite(values: np.ndarray) -> tuple[int, int]:
    flat = int(np.argmin(np.isfinite(values)))
    return flat // values.shape[1], flat % values.shape[1]


@dataclass(frozen=True)
class FeatureMatrix:
    """Dense matrix of per-example feature vectors.

    ``normalized`` asserts that every row has unit L2 norm within 1e-6;
    the constructor verifies the claim.
    """

    values: np.ndarray
    normalized: bool = False

    def __post_init__(self):
        v = np.ascontiguousarray(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise ValidationError(f"feature matrix must be 2-D, got {v.ndim}-D")
        if v.shape[0] < 1 or v.shape[1] < 1:
            raise ValidationError(f"feature matrix must be at least 1x1, got {v.shape}")
        if not np.all(np.isfinite(v)):
            r, c = _first_nonfinite(v)
            raise ValidationError(f"non-finite feature value at row {r}, col {c}")
        object.__setattr__(self, "values", v)
        if self.normalized:
            norms = np.linalg.norm(v, axis=1)
            off = np.abs(norms - 1.0)
            if np.any(off > UNIT_ROW_TOL):
                r = int(np.argmax(off))
                raise ValidationError(
                    f"normalized flag set but row {r} has norm {norms[r]:.9g}"
                )

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def n_cols(self) -> int:
        return self.values.shape[1]


def rows_are_unit(values: np.ndarray, tol: float = UNIT_ROW_TOL) -> bool:
    norms = np.linalg.norm(values, axis=1)
    return bool(np.all(np.abs(norms - 1.0) <= tol))


def normalize_rows(m: FeatureMatrix) -> FeatureMatrix:
    """Scale every row to unit L2 norm. Idempotent to ~1e-12.

    Raises DegenerateInputError naming the first zero row.
    """
    norms = np.linalg.norm(m.values, axis=1)
    zero = norms == 0.0
    if np.any(zero):
        raise DegenerateInputError(f"row {int(np.argmax(zero))} has zero norm")
    return FeatureMatrix(m.values / norms[:, None], normalized=True)


@dataclass(frozen=True)
class ScoreTable:
    """Named per-example score columns, all the same length and finite."""

    columns: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if not self.columns:
            raise ValidationError("score table needs at least one column")
        cleaned = {}
        n = None
        for name, col in self.columns.items():
            arr = np.asarray(col, dtype=np.float64).ravel()
            if n is None:
                n = arr.size
            elif arr.size != n:
                raise ValidationError(
                    f"column {name!r} has {arr.size} rows, expected {n}"
                )
            if not np.all(np.isfinite(arr)):
                bad = int(np.argmin(np.isfinite(arr)))
                raise ValidationError(f"non-finite score in column {name!r} row {bad}")
            cleaned[name] = arr
        object.__setattr__(self, "columns", cleaned)

    @property
    def n_rows(self) -> int:
        return next(iter(self.columns.values())).size

    @property
    def names(self) -> list[str]:
        return list(self.columns)

    def column(self, name: str) -> np.ndarray:
        if name not in self.columns:
            raise ValidationError(
                f"no score column {name!r}; have {sorted(self.columns)}"
            )
        return self.columns[name]


@dataclass(frozen=True)
class SynthSpec:
    """Recipe for a synthetic dataset.

    kind is one of ``hypersphere`` (uniform unit vectors), ``clustered``
    (hypersphere centroids plus Gaussian jitter, re-normalized) and
    ``duplicated`` (a small hypersphere sample with each row repeated
    ``dup_factor`` times, truncated to n rows).
    """

    kind: str
    n: int
    d: int
    seed: int = 0
    n_clusters: int | None = None
    intra_cluster_scale: float | None = None
    dup_factor: int | None = None

    def __post_init__(self):
        if self.kind not in ("hypersphere", "clustered", "duplicated"):
            raise ValidationError(f"unknown synthesis kind {self.kind!r}")
        if self.n < 1 or self.d < 1:
            raise ValidationError(f"need n >= 1 and d >= 1, got n={self.n} d={self.d}")
        if self.seed < 0:
            raise ValidationError("seed must be a non-negative integer")
        if self.kind == "clustered":
            if self.n_clusters is None or self.intra_cluster_scale is None:
                raise ValidationError(
                    "clustered synthesis needs n_clusters and intra_cluster_scale"
                )
            if self.n_clusters < 1:
                raise ValidationError("n_clusters must be >= 1")
            if self.intra_cluster_scale < 0:
                raise ValidationError("intra_cluster_scale must be >= 0")
            if self.dup_factor is not None:
                raise ValidationError("dup_factor is only valid for kind='duplicated'")
        elif self.kind == "duplicated":
            if self.dup_factor is None or self.dup_factor < 1:
                raise ValidationError("duplicated synthesis needs dup_factor >= 1")
            if self.n_clusters is not None or self.intra_cluster_scale is not None:
                raise ValidationError(
                    "n_clusters/intra_cluster_scale are only valid for kind='clustered'"
                )
        else:
            if (
                self.n_clusters is not None
                or self.intra_cluster_scale is not None
                or self.dup_factor is not None
            ):
                raise ValidationError("hypersphere synthesis takes no extra parameters")


def synthesize(spec: SynthSpec) -> FeatureMatrix:
    """Draw the dataset described by ``spec``. Deterministic per seed."""
    rng = np.random.default_rng(spec.seed)
    if spec.kind == "hypersphere":
        g = rng.standard_normal((spec.n, spec.d))
        return normalize_rows(FeatureMatrix(g))
    if spec.kind == "clustered":
        centroids = rng.standard_normal((spec.n_clusters, spec.d))
        centroids /= np.linalg.norm(centroids, axis=1)[:, None]
        assign = rng.integers(0, spec.n_clusters, size=spec.n)
        rows = centroids[assign] + spec.intra_cluster_scale * rng.standard_normal(
            (spec.n, spec.d)
        )
        return normalize_rows(FeatureMatrix(rows))
    base_n = math.ceil(spec.n / spec.dup_factor)
    g = rng.standard_normal((base_n, spec.d))
    g /= np.linalg.norm(g, axis=1)[:, None]
    rows = np.repeat(g, spec.dup_factor, axis=0)[: spec.n]
    return FeatureMatrix(rows, normalized=True)


def save_features(m: FeatureMatrix, path) -> None:
    """Write ``m`` as DSF1. float64 -> float32 narrowing happens here."""
    payload = np.ascontiguousarray(m.values, dtype="<f4")
    header = _HEADER.pack(DSF1_MAGIC, m.n_rows, m.n_cols, int(m.normalized), b"\x00" * 3)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload.tobytes())


def load_features(path) -> FeatureMatrix:
    """Read a DSF1 file, or fall back to headerless CSV.

    The normalized flag of the result reflects an actual check of the
    rows, not the header byte.
    """
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] == DSF1_MAGIC:
        return _parse_dsf1(blob, path)
    if str(path).endswith((".dsf", ".dsf1")):
        raise FormatError(f"{path}: bad magic {blob[:4]!r}")
    return _parse_csv(blob, path)


def _parse_dsf1(blob: bytes, path) -> FeatureMatrix:
    if len(blob) < _HEADER.size:
        raise FormatError(f"{path}: truncated DSF1 header ({len(blob)} bytes)")
    magic, n, d, _flag, reserved = _HEADER.unpack_from(blob)
    if magic != DSF1_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if reserved != b"\x00" * 3:
        raise FormatError(f"{path}: reserved header bytes are not zero")
    if n < 1 or d < 1:
        raise FormatError(f"{path}: header declares empty matrix {n}x{d}")
    expected = _HEADER.size + 4 * n * d
    if len(blob) != expected:
        raise LengthMismatchError(
            f"{path}: payload is {len(blob) - _HEADER.size} bytes, "
            f"header declares {4 * n * d}"
        )
    values = (
        np.frombuffer(blob, dtype="<f4", count=n * d, offset=_HEADER.size)
        .reshape(n, d)
        .astype(np.float64)
    )
    if not np.all(np.isfinite(values)):
        r, c = _first_nonfinite(values)
        raise ValidationError(f"{path}: non-finite value at row {r}, col {c}")
    return FeatureMatrix(values, normalized=rows_are_unit(values))


def _parse_csv(blob: bytes, path) -> FeatureMatrix:
    try:
        text = blob.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise FormatError(f"{path}: neither DSF1 nor text CSV ({exc})") from None
    rows = []
    width = None
    for lineno, line in enumerate(io.StringIO(text), start=1):
        line = line.strip()
        if not line:
            continue
        cells = line.split(",")
        if width is None:
            width = len(cells)
        elif len(cells) != width:
            raise FormatError(
                f"{path}: line {lineno} has {len(cells)} fields, expected {width}"
            )
        try:
            rows.append([float(c) for c in cells])
        except ValueError:
            raise ValidationError(
                f"{path}: non-numeric cell on line {lineno}"
            ) from None
    if not rows:
        raise FormatError(f"{path}: empty CSV")
    values = np.asarray(rows, dtype=np.float64)
    if not np.all(np.isfinite(values)):
        r, c = _first_nonfinite(values)
        raise ValidationError(f"{path}: non-finite value at row {r}, col {c}")
    return FeatureMatrix(values, normalized=rows_are_unit(values))


def save_scores(table: ScoreTable, path) -> None:
    """Write a score table as CSV with an explicit 0-based index column."""
    names = table.names
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("index," + ",".join(names) + "\n")
        cols = [table.columns[n] for n in names]
        for i in range(table.n_rows):
            fh.write(str(i) + "," + ",".join(repr(float(c[i])) for c in cols) + "\n")


def load_scores(path, n_rows: int) -> ScoreTable:
    """Read a score table from CSV (with header) or JSONL.

    The row count must equal ``n_rows`` and the CSV index column must be
    exactly 0..n_rows-1.
    """
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    stripped = text.lstrip()
    if not stripped:
        raise FormatError(f"{path}: empty score table")
    if stripped[0] == "{":
        table = _parse_scores_jsonl(text, path)
    else:
        table = _parse_scores_csv(text, path)
    if table.n_rows != n_rows:
        raise LengthMismatchError(
            f"{path}: score table has {table.n_rows} rows, features have {n_rows}"
        )
    return table


def _parse_scores_csv(text: str, path) -> ScoreTable:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    header = lines[0].split(",")
    if header[0].strip() != "index":
        raise FormatError(f"{path}: first CSV column must be 'index', got {header[0]!r}")
    names = [h.strip() for h in header[1:]]
    if not names:
        raise FormatError(f"{path}: score CSV has no score columns")
    if len(set(names)) != len(names):
        raise ValidationError(f"{path}: duplicate score column names in {names}")
    data = {name: [] for name in names}
    prev_idx = -1
    for lineno, line in enumerate(lines[1:], start=2):
        cells = line.split(",")
        if len(cells) != len(names) + 1:
            raise FormatError(
                f"{path}: line {lineno} has {len(cells)} fields, expected {len(names) + 1}"
            )
        try:
            idx = int(cells[0])
        except ValueError:
            raise ValidationError(f"{path}: non-integer index on line {lineno}") from None
        if idx != prev_idx + 1:
            raise ValidationError(
                f"{path}: index column must be 0-based and strictly increasing, "
                f"got {idx} after {prev_idx}"
            )
        prev_idx = idx
        for name, cell in zip(names, cells[1:]):
            try:
                data[name].append(float(cell))
            except ValueError:
                raise ValidationError(
                    f"{path}: non-numeric value for {name!r} on line {lineno}"
                ) from None
    return ScoreTable({n: np.asarray(v) for n, v in data.items()})


def _parse_scores_jsonl(text: str, path) -> ScoreTable:
    records = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: bad JSON on line {lineno}: {exc}") from None
        if not isinstance(obj, dict):
            raise FormatError(f"{path}: line {lineno} is not a JSON object")
        records.append((lineno, obj))
    if not records:
        raise FormatError(f"{path}: empty JSONL score table")
    first_keys = list(records[0][1])
    names = [k for k in first_keys if k != "index"]
    if not names:
        raise FormatError(f"{path}: JSONL objects carry no score fields")
    data = {name: [] for name in names}
    for row_i, (lineno, obj) in enumerate(records):
        keys = [k for k in obj if k != "index"]
        if set(keys) != set(names):
            raise ValidationError(
                f"{path}: line {lineno} keys {sorted(keys)} differ from {sorted(names)}"
            )
        if "index" in obj and int(obj["index"]) != row_i:
            raise ValidationError(
                f"{path}: line {lineno} index {obj['index']} should be {row_i}"
            )
        for name in names:
            val = obj[name]
            if not isinstance(val, (int, float)) or isinstance(val, bool):
                raise ValidationError(
                    f"{path}: non-numeric value for {name!r} on line {lineno}"
                )
            data[name].append(float(val))
    return ScoreTable({n: np.asarray(v) for n, v in data.items()})
