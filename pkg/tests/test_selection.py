"""Selection strategies, coverage accounting, result serialization."""

import json

import numpy as np
import pytest

from divsel import (
    FeatureMatrix,
    KernelSpec,
    ScoreTable,
    SelectionRequest,
    SynthSpec,
    corpus_gradients,
    corpus_scores,
    coverage_metrics,
    make_plan,
    make_toy_corpus,
    make_toy_model,
    normalize_rows,
    save_indices_text,
    save_result,
    select,
    sketch_gradients,
    synthesize,
)
from divsel.errors import ValidationError
from divsel.selection import result_to_json

from conftest import RBF_UNIT, unit_features

SIZES = (100, 40, 20, 10, 6, 6, 6, 4, 4, 4)


def skewed_clusters(seed, d=32, scale=0.05):
    """Ten clusters with sizes 100..4 and known labels, unit rows."""
    rng = np.random.default_rng(seed)
    cents = rng.standard_normal((len(SIZES), d))
    cents /= np.linalg.norm(cents, axis=1)[:, None]
    rows, labels = [], []
    for c, size in enumerate(SIZES):
        rows.append(cents[c] + scale * rng.standard_normal((size, d)))
        labels += [c] * size
    return normalize_rows(FeatureMatrix(np.vstack(rows))), np.asarray(labels)


def four_scores():
    return ScoreTable({"n_output_tokens": np.array([5.0, 9.0, 9.0, 1.0])})


# --------------------------------------------------------------------- rank


def test_rank_desc_with_ties():
    feats = unit_features(4, 8, 0)
    res = select(
        SelectionRequest(
            features=feats,
            m=2,
            strategy="rank",
            scores=four_scores(),
            rank_col="n_output_tokens",
            direction="desc",
        )
    )
    assert res.indices.tolist() == [1, 2]
    assert res.strategy == {
        "strategy": "rank",
        "m": 2,
        "rank_col": "n_output_tokens",
        "direction": "desc",
    }


def test_rank_asc():
    feats = unit_features(4, 8, 0)
    res = select(
        SelectionRequest(
            features=feats,
            m=2,
            strategy="rank",
            scores=four_scores(),
            rank_col="n_output_tokens",
            direction="asc",
        )
    )
    assert res.indices.tolist() == [3, 0]


def test_rank_direction_partitions():
    feats = unit_features(10, 8, 1)
    rng = np.random.default_rng(2)
    scores = ScoreTable({"s": rng.permutation(10).astype(np.float64)})

    def top(direction, m):
        return set(
            select(
                SelectionRequest(
                    features=feats,
                    m=m,
                    strategy="rank",
                    scores=scores,
                    rank_col="s",
                    direction=direction,
                )
            ).indices.tolist()
        )

    assert top("desc", 4) == set(range(10)) - top("asc", 6)


# -------------------------------------------------------------------- dedup


def test_dedup_keeps_exactly_the_distinct_items():
    feats = synthesize(SynthSpec(kind="duplicated", n=100, d=16, seed=1, dup_factor=5))
    res = select(SelectionRequest(features=feats, m=20, strategy="dedup", tau=0.99))
    assert res.indices.tolist() == list(range(0, 100, 5))
    assert not res.shortfall


def test_dedup_output_below_threshold():
    feats = unit_features(60, 8, 3)
    tau = 0.8
    res = select(SelectionRequest(features=feats, m=30, strategy="dedup", tau=tau))
    x = feats.values[res.indices]
    gram = x @ x.T
    off = gram[~np.eye(len(res.indices), dtype=bool)]
    assert off.max() < tau


def test_dedup_shortfall_warns():
    feats = synthesize(SynthSpec(kind="duplicated", n=100, d=16, seed=1, dup_factor=5))
    with pytest.warns(UserWarning, match="kept only 20"):
        res = select(SelectionRequest(features=feats, m=30, strategy="dedup", tau=0.99))
    assert res.shortfall
    assert res.indices.size == 20


def test_dedup_rejects_zero_rows():
    feats = FeatureMatrix(np.array([[1.0, 0.0], [0.0, 0.0]]))
    with pytest.raises(ValidationError, match="zero norm"):
        select(SelectionRequest(features=feats, m=1, strategy="dedup", tau=0.9))


# ------------------------------------------------------------------- random


def test_random_is_seed_deterministic():
    feats = unit_features(50, 8, 0)
    a = select(SelectionRequest(features=feats, m=10, strategy="random", seed=3))
    b = select(SelectionRequest(features=feats, m=10, strategy="random", seed=3))
    c = select(SelectionRequest(features=feats, m=10, strategy="random", seed=4))
    assert np.array_equal(a.indices, b.indices)
    assert not np.array_equal(a.indices, c.indices)
    assert a.strategy == {"strategy": "random", "m": 10, "seed": 3}
    assert np.unique(a.indices).size == 10


# ---------------------------------------------------------------------- dpp


def test_dpp_lam_zero_ignores_scores():
    feats = unit_features(40, 16, 5)
    scores = ScoreTable({"q": np.linspace(0.0, 1.0, 40)})
    bare = select(SelectionRequest(features=feats, m=8, strategy="dpp", kernel=RBF_UNIT))
    with_scores = select(
        SelectionRequest(
            features=feats, m=8, strategy="dpp", kernel=RBF_UNIT, scores=scores
        )
    )
    assert np.array_equal(bare.indices, with_scores.indices)
    assert bare.trace is not None


def test_dpp_rejects_lam_one():
    feats = unit_features(10, 8, 0)
    scores = ScoreTable({"q": np.arange(10, dtype=np.float64)})
    with pytest.raises(ValidationError):
        select(
            SelectionRequest(
                features=feats,
                m=2,
                strategy="dpp",
                kernel=RBF_UNIT,
                lam=1.0,
                quality_col="q",
                scores=scores,
            )
        )


def test_dpp_deterministic():
    feats = unit_features(40, 16, 6)
    runs = [
        select(SelectionRequest(features=feats, m=10, strategy="dpp", kernel=RBF_UNIT))
        for _ in range(2)
    ]
    assert np.array_equal(runs[0].indices, runs[1].indices)


def test_quality_weighted_dpp_beats_rank_on_duplicates():
    # the combined selector (lam=0.9, response-length quality) must pick
    # fewer same-template pairs than ranking by response length alone
    for seed in range(3):
        examples, labels = make_toy_corpus(1000, seed=seed, redundancy=0.9)
        model = make_toy_model(vocab_size=32, feature_dim=16, seed=seed)
        grads = corpus_gradients(model, examples)
        plan = make_plan(["W"], r=8, d_out=256, seed=seed)
        feats = normalize_rows(
            FeatureMatrix(np.stack([sketch_gradients(g, plan) for g in grads]))
        )
        scores = corpus_scores(model, examples)
        res_dpp = select(
            SelectionRequest(
                features=feats,
                m=200,
                strategy="dpp",
                kernel=RBF_UNIT,
                lam=0.9,
                quality_col="n_output_tokens",
                scores=scores,
            )
        )
        res_rank = select(
            SelectionRequest(
                features=feats,
                m=200,
                strategy="rank",
                scores=scores,
                rank_col="n_output_tokens",
                direction="desc",
            )
        )
        dup_dpp = coverage_metrics(res_dpp, labels)["duplicate_pairs"]
        dup_rank = coverage_metrics(res_rank, labels)["duplicate_pairs"]
        assert dup_dpp < dup_rank


# ----------------------------------------------------------------- coverage


def test_coverage_metrics_by_hand():
    feats = unit_features(6, 8, 0)
    res = select(SelectionRequest(features=feats, m=6, strategy="random", seed=0))
    labels = [0, 0, 0, 1, 1, 2]
    met = coverage_metrics(res, labels)
    assert met["n_selected"] == 6
    assert met["clusters_covered"] == 3
    assert met["max_cluster_share"] == pytest.approx(0.5)
    assert met["duplicate_pairs"] == 3 + 1 + 0
    assert res.metrics == met


def test_coverage_metrics_mean_quality():
    feats = unit_features(4, 8, 0)
    scores = ScoreTable({"q": np.array([1.0, 2.0, 3.0, 4.0])})
    res = select(
        SelectionRequest(
            features=feats,
            m=2,
            strategy="rank",
            scores=scores,
            rank_col="q",
            direction="desc",
        )
    )
    met = coverage_metrics(res, [0, 1, 2, 3], scores=scores)
    assert met["mean_quality"]["q"] == pytest.approx(3.5)


def test_coverage_metrics_length_mismatch():
    feats = unit_features(6, 8, 0)
    res = select(SelectionRequest(features=feats, m=2, strategy="random", seed=0))
    with pytest.raises(ValidationError, match="labels cover"):
        coverage_metrics(res, [0, 1, 2])


def test_dpp_covers_skewed_clusters_better_than_random():
    # measured over these 20 seeds: repulsive selection covers all ten
    # clusters every time; random averages 4.55 and never beats it
    dpp_cov, rand_cov = [], []
    for seed in range(20):
        feats, labels = skewed_clusters(seed)
        res_d = select(
            SelectionRequest(features=feats, m=10, strategy="dpp", kernel=RBF_UNIT)
        )
        res_r = select(
            SelectionRequest(features=feats, m=10, strategy="random", seed=seed)
        )
        dpp_cov.append(coverage_metrics(res_d, labels)["clusters_covered"])
        rand_cov.append(coverage_metrics(res_r, labels)["clusters_covered"])
    assert all(d >= r for d, r in zip(dpp_cov, rand_cov))
    assert np.mean(dpp_cov) > np.mean(rand_cov) + 3.0
    assert min(dpp_cov) == 10


def test_lambda_sweep_trades_coverage_for_quality():
    for seed in range(3):
        feats, labels = skewed_clusters(seed)
        rng = np.random.default_rng(100 + seed)
        qual = rng.uniform(0.0, 0.2, labels.size)
        qual[labels == 0] += 1.0
        scores = ScoreTable({"q": qual})
        prev_q, prev_c = -np.inf, np.inf
        for lam in (0.0, 0.5, 0.9, 0.99):
            res = select(
                SelectionRequest(
                    features=feats,
                    m=10,
                    strategy="dpp",
                    kernel=RBF_UNIT,
                    lam=lam,
                    quality_col="q",
                    scores=scores,
                )
            )
            met = coverage_metrics(res, labels, scores=scores)
            assert met["mean_quality"]["q"] >= prev_q - 1e-12
            assert met["clusters_covered"] <= prev_c
            prev_q = met["mean_quality"]["q"]
            prev_c = met["clusters_covered"]


# --------------------------------------------------------------- validation


def test_request_validation():
    feats = unit_features(10, 8, 0)
    scores = ScoreTable({"q": np.arange(10, dtype=np.float64)})
    with pytest.raises(ValidationError, match="unknown strategy"):
        SelectionRequest(features=feats, m=2, strategy="greedy")
    with pytest.raises(ValidationError, match="budget"):
        SelectionRequest(features=feats, m=0, strategy="random")
    with pytest.raises(ValidationError, match="budget"):
        SelectionRequest(features=feats, m=11, strategy="random")
    with pytest.raises(ValidationError, match="rank_col"):
        SelectionRequest(features=feats, m=2, strategy="rank", scores=scores)
    with pytest.raises(ValidationError, match="score table"):
        SelectionRequest(features=feats, m=2, strategy="rank", rank_col="q")
    with pytest.raises(ValidationError, match="direction"):
        SelectionRequest(
            features=feats, m=2, strategy="rank", scores=scores,
            rank_col="q", direction="up",
        )
    with pytest.raises(ValidationError, match="needs tau"):
        SelectionRequest(features=feats, m=2, strategy="dedup")
    with pytest.raises(ValidationError, match="cosine"):
        SelectionRequest(features=feats, m=2, strategy="dedup", tau=1.5)
    with pytest.raises(ValidationError, match="only valid for dedup"):
        SelectionRequest(features=feats, m=2, strategy="random", tau=0.9)
    with pytest.raises(ValidationError, match="only valid for rank"):
        SelectionRequest(features=feats, m=2, strategy="random", rank_col="q")
    with pytest.raises(ValidationError, match="no score table"):
        SelectionRequest(features=feats, m=2, strategy="dpp", quality_col="q")
    with pytest.raises(ValidationError, match="rows"):
        SelectionRequest(
            features=feats, m=2, strategy="random",
            scores=ScoreTable({"q": np.arange(4, dtype=np.float64)}),
        )


def test_missing_score_column():
    feats = unit_features(10, 8, 0)
    scores = ScoreTable({"q": np.arange(10, dtype=np.float64)})
    with pytest.raises(ValidationError):
        select(
            SelectionRequest(
                features=feats, m=2, strategy="rank", scores=scores,
                rank_col="absent", direction="desc",
            )
        )


# ------------------------------------------------------------ serialization


def test_result_json_schema(tmp_path):
    feats = unit_features(6, 8, 0)
    res = select(SelectionRequest(features=feats, m=2, strategy="random", seed=1))
    coverage_metrics(res, [0, 1, 2, 0, 1, 2])
    obj = result_to_json(res)
    assert set(obj) == {"indices", "strategy", "n_items", "shortfall", "metrics"}
    assert all(isinstance(i, int) for i in obj["indices"])
    path = tmp_path / "result.json"
    save_result(res, path)
    back = json.loads(path.read_text())
    assert back == obj


def test_save_indices_text(tmp_path):
    feats = unit_features(6, 8, 0)
    res = select(SelectionRequest(features=feats, m=3, strategy="random", seed=1))
    path = tmp_path / "indices.txt"
    save_indices_text(res, path)
    lines = path.read_text().splitlines()
    assert [int(x) for x in lines] == res.indices.tolist()
