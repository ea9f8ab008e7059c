import numpy as np
import pytest
import scipy.sparse as sp

from delprop import (BINARY_LOGISTIC, LINEAR, MULTINOMIAL_LOGISTIC,
                     Hyperparams, TrainingDataset, build_schedule, train)


def make_linear(n=120, m=5, seed=0, noise=0.1):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, m))
    w = rng.normal(size=m)
    y = X @ w + noise * rng.normal(size=n)
    return TrainingDataset(X, y, np.arange(n), LINEAR)


def make_binary(n=200, m=5, seed=0, noise=0.3):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, m))
    w = rng.normal(size=m)
    y = np.where(X @ w + noise * rng.normal(size=n) > 0, 1.0, -1.0)
    return TrainingDataset(X, y, np.arange(n), BINARY_LOGISTIC)


def make_multinomial(n=200, m=4, q=3, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, m))
    W = rng.normal(size=(m, q))
    y = np.argmax(X @ W + 0.3 * rng.normal(size=(n, q)), axis=1)
    return TrainingDataset(X, y, np.arange(n), MULTINOMIAL_LOGISTIC, num_classes=q)


def make_sparse_binary(n=400, m=60, nnz_per_row=4, seed=0):
    rng = np.random.default_rng(seed)
    rows = np.repeat(np.arange(n), nnz_per_row)
    cols = rng.integers(0, m, size=n * nnz_per_row)
    vals = rng.normal(size=n * nnz_per_row)
    X = sp.csr_matrix((vals, (rows, cols)), shape=(n, m))
    X.sum_duplicates()
    w = rng.normal(size=m)
    y = np.where(np.asarray(X @ w).ravel() > 0, 1.0, -1.0)
    return TrainingDataset(X, y, np.arange(n), BINARY_LOGISTIC)


def quick_run(ds, lam=0.05, B=20, tau=60, seed=1, eta=None):
    hp = Hyperparams(eta, lam, B, tau, seed, ds.model_kind)
    sched = build_schedule(ds.n, hp)
    run = train(ds, hp, sched)
    return run, sched


@pytest.fixture
def linear_ds():
    return make_linear()


@pytest.fixture
def binary_ds():
    return make_binary()


@pytest.fixture
def multinomial_ds():
    return make_multinomial()
