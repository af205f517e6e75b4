"""Command-line surface: all five subcommands, exit codes, config echoes."""

import json

import numpy as np
import pytest

from divsel import (
    ScoreTable,
    export_corpus,
    load_features,
    make_toy_corpus,
    make_toy_model,
    read_gradients,
    save_scores,
    write_gradients,
)
from divsel.cli import main
from divsel.sketch import LayerGradient

from conftest import sha256


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


@pytest.fixture()
def corpus_dir(tmp_path):
    model = make_toy_model(16, 4, seed=0)
    examples, _ = make_toy_corpus(100, seed=0, vocab_size=16)
    export_corpus(model, examples, tmp_path / "grads")
    return tmp_path / "grads"


# -------------------------------------------------------------------- synth


def test_synth_writes_loadable_file(tmp_path, capsys):
    out = tmp_path / "ref.dsf"
    code, stdout, _ = run(
        capsys, "synth", "--kind", "hypersphere", "-n", 1000, "-d", 512,
        "--seed", 7, "-o", out,
    )
    assert code == 0
    mat = load_features(out)
    assert mat.n_rows == 1000 and mat.n_cols == 512
    assert mat.normalized


def test_synth_missing_required_flag(tmp_path, capsys):
    code, _, _ = run(
        capsys, "synth", "--kind", "hypersphere", "-d", 8, "-o", tmp_path / "x.dsf"
    )
    assert code == 2


def test_synth_deterministic_checksum(tmp_path, capsys):
    args = ["synth", "--kind", "clustered", "-n", 50, "-d", 8, "--seed", 3,
            "--clusters", 4, "--intra-scale", "0.1"]
    a, b = tmp_path / "a.dsf", tmp_path / "b.dsf"
    assert run(capsys, *args, "-o", a)[0] == 0
    assert run(capsys, *args, "-o", b)[0] == 0
    assert sha256(a) == sha256(b)


def test_synth_validates_spec(tmp_path, capsys):
    code, _, err = run(
        capsys, "synth", "--kind", "clustered", "-n", 10, "-d", 4,
        "-o", tmp_path / "x.dsf",
    )
    assert code == 2
    assert "error:" in err


def test_synth_config_echo(tmp_path, capsys):
    out = tmp_path / "e.dsf"
    run(capsys, "synth", "--kind", "hypersphere", "-n", 10, "-d", 4, "-o", out)
    echo = json.loads((tmp_path / "e.dsf.config.json").read_text())
    assert set(echo) == {
        "command", "argv", "params", "generator", "backend", "package", "version",
    }
    assert echo["command"] == "synth"
    assert echo["params"]["n"] == 10
    assert echo["generator"] == "PCG64"


# ------------------------------------------------------------------- sketch


def test_sketch_directory(corpus_dir, tmp_path, capsys):
    out = tmp_path / "feat.dsf"
    code, _, _ = run(
        capsys, "sketch", "--grads", corpus_dir, "--r", 32, "--dout", 1024, "-o", out
    )
    assert code == 0
    mat = load_features(out)
    assert mat.n_rows == 100 and mat.n_cols == 1024


def test_sketch_normalize(corpus_dir, tmp_path, capsys):
    out = tmp_path / "feat.dsf"
    code, _, _ = run(
        capsys, "sketch", "--grads", corpus_dir, "--r", 8, "--dout", 64,
        "--normalize", "-o", out,
    )
    assert code == 0
    mat = load_features(out)
    np.testing.assert_allclose(np.linalg.norm(mat.values, axis=1), 1.0, atol=1e-6)


def test_sketch_deterministic(corpus_dir, tmp_path, capsys):
    a, b = tmp_path / "a.dsf", tmp_path / "b.dsf"
    args = ["sketch", "--grads", corpus_dir, "--r", 8, "--dout", 64, "--seed", 5]
    assert run(capsys, *args, "-o", a)[0] == 0
    assert run(capsys, *args, "-o", b)[0] == 0
    assert sha256(a) == sha256(b)


def test_sketch_manifest(corpus_dir, tmp_path, capsys):
    manifest = tmp_path / "manifest.txt"
    paths = sorted(corpus_dir.glob("*.dgf"))[:10]
    manifest.write_text("\n".join(str(p) for p in paths) + "\n")
    out = tmp_path / "feat.dsf"
    code, _, _ = run(
        capsys, "sketch", "--grads", manifest, "--r", 8, "--dout", 64, "-o", out
    )
    assert code == 0
    assert load_features(out).n_rows == 10


def test_sketch_rejects_inconsistent_shapes(corpus_dir, tmp_path, capsys):
    victim = sorted(corpus_dir.glob("*.dgf"))[3]
    write_gradients(victim, [LayerGradient("W", np.ones((2, 2)))])
    code, _, err = run(
        capsys, "sketch", "--grads", corpus_dir, "--r", 8, "--dout", 64,
        "-o", tmp_path / "x.dsf",
    )
    assert code == 2
    assert victim.name in err


def test_sketch_rejects_single_gradient_file(corpus_dir, tmp_path, capsys):
    one = sorted(corpus_dir.glob("*.dgf"))[0]
    code, _, err = run(
        capsys, "sketch", "--grads", one, "--r", 8, "--dout", 64,
        "-o", tmp_path / "x.dsf",
    )
    assert code == 2
    assert "directory or a manifest" in err


# ------------------------------------------------------------------- select


@pytest.fixture()
def features_file(tmp_path, capsys):
    out = tmp_path / "data.dsf"
    run(capsys, "synth", "--kind", "hypersphere", "-n", 100, "-d", 32,
        "--seed", 1, "-o", out)
    return out


def test_select_dpp_with_trace(features_file, tmp_path, capsys):
    out = tmp_path / "sel.json"
    trace = tmp_path / "trace.csv"
    code, stdout, _ = run(
        capsys, "select", "--features", features_file, "--strategy", "dpp",
        "--budget", 20, "--out", out, "--trace", trace,
    )
    assert code == 0
    assert stdout.strip() == "20"
    result = json.loads(out.read_text())
    assert len(result["indices"]) == 20
    assert result["strategy"]["strategy"] == "dpp"
    assert not result["shortfall"]
    rows = trace.read_text().splitlines()
    assert rows[0] == "step,index,gain,cum_logdet,clamped"
    assert len(rows) == 21


def test_select_rank_delegates(features_file, tmp_path, capsys):
    scores_path = tmp_path / "scores.csv"
    rng = np.random.default_rng(0)
    col = rng.permutation(100).astype(np.float64)
    col[17] = 1000.0
    save_scores(ScoreTable({"n_output_tokens": col}), scores_path)
    out = tmp_path / "sel.json"
    code, stdout, _ = run(
        capsys, "select", "--features", features_file, "--scores", scores_path,
        "--strategy", "rank", "--rank-col", "n_output_tokens",
        "--direction", "desc", "--budget", 1, "--out", out,
    )
    assert code == 0
    assert json.loads(out.read_text())["indices"] == [17]


def test_select_lambda_one_points_to_rank(features_file, tmp_path, capsys):
    code, _, err = run(
        capsys, "select", "--features", features_file, "--strategy", "dpp",
        "--budget", 5, "--lambda", "1.0", "--out", tmp_path / "x.json",
    )
    assert code == 2
    assert "rank" in err


def test_select_tau_with_dpp_rejected(features_file, tmp_path, capsys):
    code, _, err = run(
        capsys, "select", "--features", features_file, "--strategy", "dpp",
        "--budget", 5, "--tau", "0.9", "--out", tmp_path / "x.json",
    )
    assert code == 2
    assert "dedup" in err


def test_select_trace_requires_dpp(features_file, tmp_path, capsys):
    code, _, err = run(
        capsys, "select", "--features", features_file, "--strategy", "random",
        "--budget", 5, "--out", tmp_path / "x.json", "--trace", tmp_path / "t.csv",
    )
    assert code == 2
    assert "dpp" in err


def test_select_out_indices(features_file, tmp_path, capsys):
    out = tmp_path / "sel.json"
    idx_path = tmp_path / "sel.txt"
    code, _, _ = run(
        capsys, "select", "--features", features_file, "--strategy", "random",
        "--seed", 2, "--budget", 7, "--out", out, "--out-indices", idx_path,
    )
    assert code == 0
    got = [int(x) for x in idx_path.read_text().split()]
    assert got == json.loads(out.read_text())["indices"]


def test_select_missing_features_file(tmp_path, capsys):
    code, _, err = run(
        capsys, "select", "--features", tmp_path / "absent.dsf",
        "--strategy", "random", "--budget", 5, "--out", tmp_path / "x.json",
    )
    assert code == 1
    assert "io error" in err


# ---------------------------------------------------------------- diversity


def test_diversity_self_reference_prints_zero(features_file, tmp_path, capsys):
    code, stdout, _ = run(
        capsys, "diversity", "--features", features_file, "--ref", "file",
        "--ref-file", features_file,
    )
    assert code == 0
    assert stdout.strip() == "0.000000"


def test_diversity_orders_corpora(tmp_path, capsys):
    dup = tmp_path / "dup.dsf"
    fresh = tmp_path / "fresh.dsf"
    run(capsys, "synth", "--kind", "duplicated", "-n", 60, "-d", 16,
        "--dup-factor", 3, "--seed", 0, "-o", dup)
    run(capsys, "synth", "--kind", "hypersphere", "-n", 60, "-d", 16,
        "--seed", 0, "-o", fresh)

    def ldd(path):
        code, stdout, _ = run(
            capsys, "diversity", "--features", path, "--ref-dim", 64,
            "--ref-seed", 9,
        )
        assert code == 0
        return float(stdout)

    assert ldd(dup) > ldd(fresh)


def test_diversity_curve_matches_stdout(features_file, tmp_path, capsys):
    curve_path = tmp_path / "curve.csv"
    report_path = tmp_path / "report.json"
    code, stdout, _ = run(
        capsys, "diversity", "--features", features_file, "--ref-dim", 64,
        "--out-curve", curve_path, "--out-report", report_path,
    )
    assert code == 0
    last = curve_path.read_text().splitlines()[-1]
    assert float(last.split(",")[-1]) == pytest.approx(float(stdout), abs=5e-7)
    assert (tmp_path / "curve.csv.config.json").exists()
    assert (tmp_path / "report.json.config.json").exists()


def test_diversity_file_ref_needs_path(features_file, tmp_path, capsys):
    code, _, err = run(
        capsys, "diversity", "--features", features_file, "--ref", "file"
    )
    assert code == 2
    assert "ref-file" in err


# ------------------------------------------------------------------- report


@pytest.fixture()
def three_reports(tmp_path, capsys):
    paths = []
    for seed in range(3):
        feat = tmp_path / f"data{seed}.dsf"
        run(capsys, "synth", "--kind", "hypersphere", "-n", 40, "-d", 16,
            "--seed", seed, "-o", feat)
        rep = tmp_path / f"rep{seed}.json"
        code, _, _ = run(
            capsys, "diversity", "--features", feat, "--ref-dim", 32,
            "--name", f"corpus{seed}", "--out-report", rep,
        )
        assert code == 0
        paths.append(rep)
    return paths


def test_report_merges_three(three_reports, tmp_path, capsys):
    out = tmp_path / "merged.csv"
    code, _, _ = run(capsys, "report", *three_reports, "-o", out)
    assert code == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "dataset,step,gain,ldd_curve"
    assert len(lines) == 1 + 3 * 40
    datasets = {line.split(",")[0] for line in lines[1:]}
    assert datasets == {"corpus0", "corpus1", "corpus2"}


def test_report_rejects_mixed_specs(three_reports, tmp_path, capsys):
    feat = tmp_path / "other.dsf"
    run(capsys, "synth", "--kind", "hypersphere", "-n", 40, "-d", 16,
        "--seed", 9, "-o", feat)
    other = tmp_path / "other_rep.json"
    run(capsys, "diversity", "--features", feat, "--ref-dim", 32,
        "--gamma", "2.0", "--out-report", other)
    code, _, err = run(
        capsys, "report", three_reports[0], other, "-o", tmp_path / "x.csv"
    )
    assert code == 2
    assert "not comparable" in err


def test_report_requires_inputs(tmp_path, capsys):
    code, _, _ = run(capsys, "report", "-o", tmp_path / "x.csv")
    assert code == 2


# ------------------------------------------------------------------ globals


def test_global_flags_accepted(tmp_path, capsys):
    code, _, _ = run(
        capsys, "--threads", 2, "--log-level", "info", "synth",
        "--kind", "hypersphere", "-n", 10, "-d", 4, "-o", tmp_path / "x.dsf",
    )
    assert code == 0


def test_threads_must_be_positive(tmp_path, capsys):
    code, _, err = run(
        capsys, "--threads", 0, "synth", "--kind", "hypersphere",
        "-n", 10, "-d", 4, "-o", tmp_path / "x.dsf",
    )
    assert code == 2
    assert "--threads" in err
