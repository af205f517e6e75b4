"""Shared helpers for the test suite."""

import hashlib

import numpy as np
import pytest

from divsel import FeatureMatrix, KernelSpec, SynthSpec, synthesize

RBF_UNIT = KernelSpec(kind="rbf", gamma=1.0, assume_unit_rows=True)


def unit_features(n, d, seed):
    return synthesize(SynthSpec(kind="hypersphere", n=n, d=d, seed=seed))


def features_for_kernel(L):
    """Features whose inner-product kernel is exactly the PSD matrix L."""
    X = np.linalg.cholesky(np.asarray(L, dtype=np.float64))
    return FeatureMatrix(X)


def sha256(path):
    return hashlib.sha256(open(path, "rb").read()).hexdigest()


@pytest.fixture
def rng():
    return np.random.default_rng(0)
