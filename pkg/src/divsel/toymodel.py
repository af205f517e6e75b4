"""A deliberately tiny instruction-following model for end-to-end tests.

The "model" is a single linear layer W (vocab x feature) over a frozen,
seeded bag-of-context featurizer: the feature vector at response
position t is the mean embedding of every preceding token (instruction
plus the response prefix), or the zero vector when there is no context.
Mean log-likelihood of the response under softmax(W f_t) plays the role
of the training loss; its exact gradient with respect to W is the
per-example gradient that feeds the sketching pipeline.

Everything downstream needs only (gradient, scores) per example, so the
corpus generator also plants ground-truth structure: near-duplicate
groups sharing a template, with cluster labels returned for coverage
accounting.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .features import ScoreTable, save_scores
from .sketch import LayerGradient, write_gradients

GRAD_LAYER_NAME = "W"

SCORE_NAMES = (
    "grad_norm",
    "perplexity",
    "ifd",
    "el2n",
    "n_input_tokens",
    "n_output_tokens",
    "n_total_tokens",
)


@dataclass(frozen=True)
class ToyExample:
    """One (instruction, response) pair of integer token ids."""

    instruction_tokens: tuple[int, ...]
    response_tokens: tuple[int, ...]

    def __post_init__(self):
        if len(self.response_tokens) < 1:
            raise ValidationError("response must contain at least one token")
        object.__setattr__(
            self, "instruction_tokens", tuple(int(t) for t in self.instruction_tokens)
        )
        object.__setattr__(
            self, "response_tokens", tuple(int(t) for t in self.response_tokens)
        )


@dataclass(frozen=True)
class ToyModel:
    """Linear scorer plus its frozen featurizer embedding table."""

    weights: np.ndarray
    embed: np.ndarray

    def __post_init__(self):
        w = np.ascontiguousarray(self.weights, dtype=np.float64)
        e = np.ascontiguousarray(self.embed, dtype=np.float64)
        if w.ndim != 2 or e.ndim != 2 or w.shape != e.shape:
            raise ValidationError(
                f"weights and embed must share a (vocab, feature) shape, "
                f"got {w.shape} and {e.shape}"
            )
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "embed", e)

    @property
    def vocab_size(self) -> int:
        return self.weights.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.weights.shape[1]


def make_toy_model(
    vocab_size: int, feature_dim: int, seed: int = 0, weight_scale: float = 0.5
) -> ToyModel:
    """Random frozen model; weight_scale=0 gives the exactly-uniform scorer."""
    if vocab_size < 2 or feature_dim < 1:
        raise ValidationError("need vocab_size >= 2 and feature_dim >= 1")
    rng = np.random.default_rng(seed)
    embed = rng.standard_normal((vocab_size, feature_dim)) / np.sqrt(feature_dim)
    weights = weight_scale * rng.standard_normal((vocab_size, feature_dim))
    return ToyModel(weights=weights, embed=embed)


def _check_tokens(model: ToyModel, ex: ToyExample) -> None:
    toks = ex.instruction_tokens + ex.response_tokens
    bad = [t for t in toks if not (0 <= t < model.vocab_size)]
    if bad:
        raise ValidationError(
            f"token {bad[0]} out of range for vocab size {model.vocab_size}"
        )


def _context_features(model: ToyModel, ex: ToyExample, conditioned: bool) -> np.ndarray:
    """(T, F) matrix of prefix-mean embeddings preceding each response token."""
    ctx = list(ex.instruction_tokens) if conditioned else []
    resp = list(ex.response_tokens)
    stream = ctx + resp[:-1]
    t_count = len(resp)
    f_dim = model.feature_dim
    if stream:
        cums = np.vstack(
            [np.zeros(f_dim), np.cumsum(model.embed[np.asarray(stream)], axis=0)]
        )
    else:
        cums = np.zeros((1, f_dim))
    counts = len(ctx) + np.arange(t_count)
    feats = cums[counts] / np.maximum(counts, 1)[:, None]
    feats[counts == 0] = 0.0
    return feats


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def mean_loglik(model: ToyModel, ex: ToyExample, conditioned: bool = True) -> float:
    """Mean log-probability of the response tokens."""
    _check_tokens(model, ex)
    feats = _context_features(model, ex, conditioned)
    ls = _log_softmax(feats @ model.weights.T)
    y = np.asarray(ex.response_tokens)
    return float(ls[np.arange(y.size), y].mean())


def loss_and_grad(model: ToyModel, ex: ToyExample) -> tuple[float, LayerGradient]:
    """Mean response log-likelihood and its exact gradient w.r.t. W."""
    _check_tokens(model, ex)
    feats = _context_features(model, ex, conditioned=True)
    logits = feats @ model.weights.T
    ls = _log_softmax(logits)
    probs = np.exp(ls)
    y = np.asarray(ex.response_tokens)
    t_count = y.size
    loglik = float(ls[np.arange(t_count), y].mean())
    hot = np.zeros_like(probs)
    hot[np.arange(t_count), y] = 1.0
    grad = (hot - probs).T @ feats / t_count
    return loglik, LayerGradient(name=GRAD_LAYER_NAME, matrix=grad)


def quality_scores(model: ToyModel, ex: ToyExample) -> dict[str, float]:
    """Per-example scalar scores used as DPP quality or ranking columns."""
    loglik, grad = loss_and_grad(model, ex)
    feats = _context_features(model, ex, conditioned=True)
    probs = np.exp(_log_softmax(feats @ model.weights.T))
    y = np.asarray(ex.response_tokens)
    hot = np.zeros_like(probs)
    hot[np.arange(y.size), y] = 1.0
    ppl_cond = float(np.exp(-loglik))
    loglik_uncond = mean_loglik(model, ex, conditioned=False)
    return {
        "grad_norm": float(np.linalg.norm(grad.matrix)),
        "perplexity": ppl_cond,
        "ifd": float(np.exp(loglik_uncond - loglik)),
        "el2n": float(np.linalg.norm(probs - hot, axis=1).mean()),
        "n_input_tokens": float(len(ex.instruction_tokens)),
        "n_output_tokens": float(len(ex.response_tokens)),
        "n_total_tokens": float(len(ex.instruction_tokens) + len(ex.response_tokens)),
    }


def make_toy_corpus(
    n: int,
    seed: int = 0,
    redundancy: float = 0.0,
    vocab_size: int = 32,
    max_dup_templates: int = 50,
) -> tuple[list[ToyExample], np.ndarray]:
    """Corpus of n examples with a planted near-duplicate fraction.

    ``redundancy`` of the examples are one-token perturbations of a
    small pool of templates (at most max_dup_templates of them); the
    rest are fresh templates. Returns the shuffled examples together
    with integer cluster labels (shared template = shared label).
    """
    if n < 1:
        raise ValidationError("corpus size must be >= 1")
    if not (0.0 <= redundancy <= 1.0):
        raise ValidationError(f"redundancy must lie in [0, 1], got {redundancy}")
    if vocab_size < 2:
        raise ValidationError("vocab_size must be >= 2")
    rng = np.random.default_rng(seed)

    def fresh_template() -> tuple[tuple[int, ...], tuple[int, ...]]:
        ilen = int(rng.integers(3, 8))
        rlen = int(rng.integers(4, 40))
        instr = tuple(int(t) for t in rng.integers(0, vocab_size, ilen))
        resp = tuple(int(t) for t in rng.integers(0, vocab_size, rlen))
        return instr, resp

    n_dup = int(round(n * redundancy))
    pool_size = min(max_dup_templates, n_dup) if n_dup > 0 else 0
    pool = [fresh_template() for _ in range(pool_size)]

    examples: list[ToyExample] = []
    labels: list[int] = []
    for _ in range(n_dup):
        tid = int(rng.integers(0, pool_size))
        instr, resp = pool[tid]
        mut = list(resp)
        mut[int(rng.integers(0, len(mut)))] = int(rng.integers(0, vocab_size))
        examples.append(ToyExample(instr, tuple(mut)))
        labels.append(tid)
    for i in range(n - n_dup):
        instr, resp = fresh_template()
        examples.append(ToyExample(instr, resp))
        labels.append(pool_size + i)

    perm = rng.permutation(n)
    examples = [examples[int(i)] for i in perm]
    label_arr = np.asarray(labels, dtype=np.int64)[perm]
    return examples, label_arr


def corpus_scores(model: ToyModel, examples) -> ScoreTable:
    """Score table over a corpus, columns in SCORE_NAMES order."""
    rows = [quality_scores(model, ex) for ex in examples]
    return ScoreTable({name: np.asarray([r[name] for r in rows]) for name in SCORE_NAMES})


def corpus_gradients(model: ToyModel, examples) -> list[list[LayerGradient]]:
    """Per-example gradient containers (a single layer for this model)."""
    return [[loss_and_grad(model, ex)[1]] for ex in examples]


def export_corpus(model: ToyModel, examples, out_dir) -> tuple[list[str], str]:
    """Write DGF1 gradient files plus a scores CSV into ``out_dir``.

    Returns the gradient file paths (sorted order matches example order)
    and the scores path.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, ex in enumerate(examples):
        _, grad = loss_and_grad(model, ex)
        p = out / f"example_{i:05d}.dgf"
        write_gradients(p, [grad])
        paths.append(str(p))
    scores_path = out / "scores.csv"
    save_scores(corpus_scores(model, examples), scores_path)
    return paths, str(scores_path)
