"""Command line interface.

Subcommands: synth (synthetic datasets), sketch (gradient files to
sketched features), select (subset selection), diversity (log-det
distance against a reference), report (merge diversity reports).

Contract: stdout carries only the headline number of the command (the
LDD value or the selected count); diagnostics go to stderr via logging.
Exit codes are 0 on success, 1 for runtime or numeric failures, 2 for
usage and validation problems. Every file output gets a sibling
``<output>.config.json`` echoing the exact arguments, so any run can be
reproduced byte-for-byte from its echo.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__, _accel
from .diversity import (
    DEFAULT_REF_DIM,
    ReferenceSpec,
    ldd_curve_export,
    load_report,
    log_det_distance,
    save_report,
)
from .dpp import write_trace_csv
from .errors import NumericError, ValidationError
from .features import (
    GENERATOR_NAME,
    FeatureMatrix,
    SynthSpec,
    load_features,
    load_scores,
    normalize_rows,
    save_features,
    synthesize,
)
from .kernels import KernelSpec
from .selection import SelectionRequest, save_indices_text, save_result, select
from .sketch import make_plan, read_gradients, sketch_gradients

log = logging.getLogger("divsel")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="divsel",
        description="Diversity-aware subset selection and dataset diversity measurement.",
    )
    p.add_argument(
        "--threads",
        type=int,
        default=None,
        help="thread budget (default: all cores); results never depend on it",
    )
    p.add_argument(
        "--log-level",
        default="warning",
        choices=("debug", "info", "warning", "error"),
    )
    sub = p.add_subparsers(dest="command", required=True)

    ps = sub.add_parser("synth", help="generate a synthetic feature matrix")
    ps.add_argument("--kind", required=True, choices=("hypersphere", "clustered", "duplicated"))
    ps.add_argument("-n", type=int, required=True, help="number of rows")
    ps.add_argument("-d", type=int, required=True, help="feature dimension")
    ps.add_argument("--seed", type=int, default=0)
    ps.add_argument("--clusters", type=int, default=None)
    ps.add_argument("--intra-scale", type=float, default=None)
    ps.add_argument("--dup-factor", type=int, default=None)
    ps.add_argument("-o", "--out", required=True)
    ps.set_defaults(func=cmd_synth)

    pk = sub.add_parser("sketch", help="sketch DGF1 gradient files into a DSF1 matrix")
    pk.add_argument("--grads", required=True, help="directory of .dgf files or a manifest")
    pk.add_argument("--r", type=int, required=True, help="Gaussian stage rank")
    pk.add_argument("--dout", type=int, default=4096, help="sparse stage output dim")
    pk.add_argument("--s", type=int, default=8, help="nonzeros per input coordinate")
    pk.add_argument("--seed", type=int, default=0)
    pk.add_argument("--normalize", action="store_true", help="unit-normalize sketch rows")
    pk.add_argument("-o", "--out", required=True)
    pk.set_defaults(func=cmd_sketch)

    pl = sub.add_parser("select", help="select a subset of examples")
    pl.add_argument("--features", required=True)
    pl.add_argument("--scores", default=None)
    pl.add_argument("--strategy", required=True, choices=("dpp", "rank", "random", "dedup"))
    pl.add_argument("--budget", type=int, required=True)
    pl.add_argument("--lambda", dest="lam", type=float, default=0.0)
    pl.add_argument("--gamma", type=float, default=1.0)
    pl.add_argument("--quality-col", default=None)
    pl.add_argument("--rank-col", default=None)
    pl.add_argument("--direction", choices=("desc", "asc"), default=None)
    pl.add_argument("--tau", type=float, default=None)
    pl.add_argument("--seed", type=int, default=0)
    pl.add_argument("--out", required=True, help="selection result JSON")
    pl.add_argument("--out-indices", default=None, help="newline-delimited index list")
    pl.add_argument("--trace", default=None, help="greedy trace CSV (dpp only)")
    pl.set_defaults(func=cmd_select)

    pd = sub.add_parser("diversity", help="log-determinant distance against a reference")
    pd.add_argument("--features", required=True)
    pd.add_argument("--gamma", type=float, default=1.0)
    pd.add_argument("--ref", choices=("sphere", "file"), default="sphere")
    pd.add_argument("--ref-dim", type=int, default=DEFAULT_REF_DIM["gradient"])
    pd.add_argument("--ref-seed", type=int, default=0)
    pd.add_argument("--ref-file", default=None)
    pd.add_argument("--name", default=None, help="dataset label used by report merging")
    pd.add_argument("--out-report", default=None)
    pd.add_argument("--out-curve", default=None)
    pd.set_defaults(func=cmd_diversity)

    pr = sub.add_parser("report", help="merge diversity reports into one long CSV")
    pr.add_argument("reports", nargs="+", help="diversity report JSON files")
    pr.add_argument("-o", "--out", required=True)
    pr.set_defaults(func=cmd_report)
    return p


def _apply_threads(threads: int | None) -> int:
    avail = os.cpu_count() or 1
    n = avail if threads is None else threads
    if n < 1:
        raise ValidationError(f"--threads must be >= 1, got {n}")
    if _accel.HAVE_NUMBA:
        import numba

        try:
            numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))
        except ValueError:
            pass
    return n


def _write_echo(out_path, command: str, argv: list[str], params: dict) -> None:
    echo = {
        "command": command,
        "argv": argv,
        "params": params,
        "generator": GENERATOR_NAME,
        "backend": _accel.backend(),
        "package": "divsel",
        "version": __version__,
    }
    with open(str(out_path) + ".config.json", "w", encoding="utf-8") as fh:
        json.dump(echo, fh, sort_keys=True, indent=1)
        fh.write("\n")


def cmd_synth(args, argv) -> int:
    spec = SynthSpec(
        kind=args.kind,
        n=args.n,
        d=args.d,
        seed=args.seed,
        n_clusters=args.clusters,
        intra_cluster_scale=args.intra_scale,
        dup_factor=args.dup_factor,
    )
    mat = synthesize(spec)
    save_features(mat, args.out)
    params = {
        "kind": spec.kind,
        "n": spec.n,
        "d": spec.d,
        "seed": spec.seed,
        "n_clusters": spec.n_clusters,
        "intra_cluster_scale": spec.intra_cluster_scale,
        "dup_factor": spec.dup_factor,
        "normalized": mat.normalized,
    }
    _write_echo(args.out, "synth", argv, params)
    log.info("wrote %s rows=%d cols=%d", args.out, mat.n_rows, mat.n_cols)
    return 0


def _gradient_paths(grads_arg: str) -> list[Path]:
    root = Path(grads_arg)
    if root.is_dir():
        paths = sorted(root.glob("*.dgf"))
        if not paths:
            raise ValidationError(f"{root}: no .dgf files found")
        return paths
    if not root.exists():
        raise ValidationError(f"{root}: no such file or directory")
    with open(root, "rb") as fh:
        head = fh.read(4)
    if head == b"DGF1":
        raise ValidationError(
            f"{root} is a gradient file; pass its directory or a manifest"
        )
    paths = []
    for line in root.read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if line:
            paths.append(Path(line))
    if not paths:
        raise ValidationError(f"{root}: manifest lists no gradient files")
    return paths


def cmd_sketch(args, argv) -> int:
    paths = _gradient_paths(args.grads)
    first = read_gradients(paths[0])
    names = [g.name for g in first]
    shapes = [g.matrix.shape for g in first]
    plan = make_plan(names, r=args.r, d_out=args.dout, s=args.s, seed=args.seed)
    rows = np.empty((len(paths), args.dout))
    for i, path in enumerate(paths):
        grads = read_gradients(path) if i else first
        got = [(g.name, g.matrix.shape) for g in grads]
        if got != list(zip(names, shapes)):
            raise ValidationError(
                f"{path}: layer layout {got} differs from {list(zip(names, shapes))}"
            )
        rows[i] = sketch_gradients(grads, plan)
    mat = FeatureMatrix(rows)
    if args.normalize:
        mat = normalize_rows(mat)
    save_features(mat, args.out)
    params = {
        "grads": str(args.grads),
        "n_examples": len(paths),
        "layers": [{"name": n, "shape": list(s)} for n, s in zip(names, shapes)],
        "r": plan.r,
        "d_out": plan.d_out,
        "s": plan.s,
        "seed": args.seed,
        "layer_seeds": {n: s for n, s in plan.layer_seeds},
        "normalize": bool(args.normalize),
    }
    _write_echo(args.out, "sketch", argv, params)
    log.info("sketched %d examples to %s", len(paths), args.out)
    return 0


def cmd_select(args, argv) -> int:
    if args.lam == 1.0:
        raise ValidationError(
            "lambda=1.0 leaves no diversity term; use --strategy rank on the "
            "quality column instead"
        )
    if args.strategy == "dpp" and args.lam > 0.0 and args.quality_col is None:
        raise ValidationError("lambda > 0 needs --quality-col")
    if args.strategy != "dpp" and args.trace is not None:
        raise ValidationError("--trace is only produced by the dpp strategy")
    if args.strategy == "rank" and args.direction is None:
        raise ValidationError("rank strategy needs --direction")
    feats = load_features(args.features)
    scores = load_scores(args.scores, feats.n_rows) if args.scores else None
    kernel = KernelSpec(
        kind="rbf", gamma=args.gamma, assume_unit_rows=feats.normalized
    )
    req = SelectionRequest(
        features=feats,
        m=args.budget,
        strategy=args.strategy,
        scores=scores,
        kernel=kernel,
        lam=args.lam,
        quality_col=args.quality_col,
        rank_col=args.rank_col,
        direction=args.direction if args.direction is not None else "desc",
        tau=args.tau,
        seed=args.seed,
    )
    result = select(req)
    save_result(result, args.out)
    if args.out_indices is not None:
        save_indices_text(result, args.out_indices)
    params = {
        "features": str(args.features),
        "scores": str(args.scores) if args.scores else None,
        "strategy": args.strategy,
        "budget": args.budget,
        "lambda": args.lam,
        "gamma": args.gamma,
        "assume_unit_rows": feats.normalized,
        "quality_col": args.quality_col,
        "rank_col": args.rank_col,
        "direction": args.direction,
        "tau": args.tau,
        "seed": args.seed,
    }
    _write_echo(args.out, "select", argv, params)
    if args.trace is not None:
        write_trace_csv(result.trace, args.trace)
        _write_echo(args.trace, "select", argv, params)
    print(result.indices.size)
    return 0


def cmd_diversity(args, argv) -> int:
    feats = load_features(args.features)
    kernel = KernelSpec(kind="rbf", gamma=args.gamma, assume_unit_rows=feats.normalized)
    if args.ref == "sphere":
        ref = ReferenceSpec(
            kind="hypersphere",
            n=feats.n_rows,
            kernel=kernel,
            d_ref=args.ref_dim,
            seed=args.ref_seed,
        )
    else:
        if args.ref_file is None:
            raise ValidationError("--ref file needs --ref-file")
        ref = ReferenceSpec(
            kind="file",
            n=feats.n_rows,
            kernel=kernel,
            seed=args.ref_seed,
            path=str(args.ref_file),
        )
    name = args.name if args.name is not None else Path(args.features).stem
    report = log_det_distance(feats, kernel, ref, name=name)
    params = {
        "features": str(args.features),
        "name": name,
        "gamma": args.gamma,
        "assume_unit_rows": feats.normalized,
        "ref": args.ref,
        "ref_dim": args.ref_dim if args.ref == "sphere" else None,
        "ref_seed": args.ref_seed,
        "ref_file": str(args.ref_file) if args.ref_file else None,
        "n": feats.n_rows,
        "clamped_steps_data": report.clamped_steps_data,
        "clamped_steps_ref": report.clamped_steps_ref,
        "floor_dependent": report.floor_dependent,
    }
    if args.out_report:
        save_report(report, args.out_report)
        _write_echo(args.out_report, "diversity", argv, params)
    if args.out_curve:
        ldd_curve_export(report, args.out_curve)
        _write_echo(args.out_curve, "diversity", argv, params)
    if report.floor_dependent:
        log.warning(
            "more than %.0f%% of steps were clamped; the value depends on the "
            "variance floor",
            100 * 0.01,
        )
    print(f"{report.ldd:.6f}")
    return 0


def cmd_report(args, argv) -> int:
    reports = [load_report(p) for p in args.reports]
    keys = {r.comparability_key() for r in reports}
    if len(keys) > 1:
        raise ValidationError(
            "reports use different kernel or reference specs and their LDD "
            "values are not comparable"
        )
    names = []
    for r, p in zip(reports, args.reports):
        names.append(r.name if r.name else Path(p).stem)
    if len(set(names)) != len(names):
        raise ValidationError(f"duplicate dataset names in merge: {names}")
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write("dataset,step,gain,ldd_curve\n")
        for r, name in zip(reports, names):
            for t in range(r.n):
                fh.write(
                    f"{name},{t + 1},{float(r.gains_data[t])!r},{float(r.curve[t])!r}\n"
                )
    params = {
        "reports": [str(p) for p in args.reports],
        "datasets": names,
        "n": reports[0].n,
        "gamma": reports[0].gamma,
    }
    _write_echo(args.out, "report", argv, params)
    return 0


def main(argv=None) -> int:
    argv = list(sys.argv[1:]) if argv is None else [str(a) for a in argv]
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        code = exc.code
        return int(code) if code is not None else 0
    logging.basicConfig(level=args.log_level.upper(), format="%(levelname)s %(message)s")
    try:
        _apply_threads(args.threads)
        return args.func(args, argv)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 1


def entrypoint() -> None:  # pragma: no cover - thin wrapper
    sys.exit(main())


if __name__ == "__main__":  # pragma: no cover
    entrypoint()
