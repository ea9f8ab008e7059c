"""Comparison methods: retraining from scratch over the same schedule minus
the removed samples (the correctness oracle), the closed-form incremental
solution for linear regression, and a multi-sample influence-function step.
"""

from __future__ import annotations

import time
from typing import Optional

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .core import (BINARY_LOGISTIC, LINEAR, BatchSchedule, DeletionRequest,
                   Hyperparams, ModelParams, TrainingDataset)
from .errors import ConfigError, NumericError
from .trainer import gradient, one_minus_sigmoid, resolve_eta, softmax_rows
from .update import UpdateReport


def retrain(ds: TrainingDataset, hp: Hyperparams, schedule: BatchSchedule,
            request: DeletionRequest,
            w0: Optional[np.ndarray] = None) -> tuple[ModelParams, UpdateReport]:
    """Rerun the exact training iteration excluding the removed samples from
    each mini-batch (divisor |B^(t) \\ R|); fully removed batches apply only
    the shrinkage factor."""
    if schedule.batch_size != hp.batch_size or schedule.n != ds.n:
        raise ConfigError("schedule was built for different (n, batch size)")
    request.validate(ds.n)
    hp = resolve_eta(ds, hp)
    t0 = time.perf_counter()
    eta, lam = hp.eta, hp.lam
    rmask = request.mask(ds.n) if request.count else None
    w = np.zeros(ds.param_dim) if w0 is None else np.asarray(w0, dtype=np.float64).copy()
    for t in range(hp.iterations):
        batch = schedule.batch(t)
        if rmask is not None:
            keep = batch[~rmask[batch]]
        else:
            keep = batch
        if len(keep) == 0:
            w = (1.0 - eta * lam) * w
            continue
        # identical arithmetic to the training step, just over B^(t) \ R
        w = w - eta * gradient(ds, hp, w, keep)
    t1 = time.perf_counter()
    report = UpdateReport("basel", request.count, hp.iterations,
                          timings={"loop_s": t1 - t0, "total_s": t1 - t0})
    return ModelParams(w, iteration_tag=hp.iterations), report


def closed_form_linear(ds: TrainingDataset, lam: float,
                       request: DeletionRequest) -> ModelParams:
    """Solve the normal equations of the L2 objective on the remaining rows:
    (X'^T X' + ((n - dn) lam / 2) I) w = X'^T Y'."""
    if ds.model_kind != LINEAR:
        raise ConfigError("closed form applies to the linear model")
    request.validate(ds.n)
    X, y = ds.features, ds.labels
    M = np.asarray((X.T @ X).todense()) if sp.issparse(X) else X.T @ X
    N = np.asarray(X.T @ y).ravel()
    if request.count:
        rows = request.removed
        Xr = X[rows]
        Xr = np.asarray(Xr.todense()) if sp.issparse(Xr) else Xr
        M = M - Xr.T @ Xr
        N = N - Xr.T @ y[rows]
    n_new = ds.n - request.count
    A = M + (n_new * lam / 2.0) * np.eye(ds.m)
    try:
        w = np.linalg.solve(A, N)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"closed-form system is singular: {exc}")
    return ModelParams(w, iteration_tag=-1)


def _full_hessian(ds: TrainingDataset, hp: Hyperparams, w: np.ndarray) -> np.ndarray:
    """Hessian of the full-data objective at w, including the lam*I term."""
    X, y = ds.features, ds.labels
    Xd = np.asarray(X.todense()) if sp.issparse(X) else X
    d = ds.param_dim
    if ds.model_kind == LINEAR:
        H = (2.0 / ds.n) * (Xd.T @ Xd)
    elif ds.model_kind == BINARY_LOGISTIC:
        z = y * (Xd @ w)
        f = one_minus_sigmoid(z)
        sig_prime = f * (1.0 - f)  # sigma'(z) = f(z)(1 - f(z))
        H = (Xd * sig_prime[:, None]).T @ Xd / ds.n
    else:
        q = ds.num_classes
        W = w.reshape(q, ds.m).T
        S = softmax_rows(Xd @ W)
        J = -np.einsum("ic,id->icd", S, S)
        J[:, np.arange(q), np.arange(q)] += S
        H = np.einsum("icd,ij,ik->cjdk", J, Xd, Xd, optimize=True).reshape(d, d) / ds.n
    return H + hp.lam * np.eye(d)


def _removed_gradient_sum(ds: TrainingDataset, hp: Hyperparams, w: np.ndarray,
                          rows: np.ndarray) -> np.ndarray:
    """Sum over removed samples of the per-sample objective gradient
    (unregularized loss gradient plus lam*w each)."""
    X, y = ds.features, ds.labels
    Xr = X[rows]
    Xr = np.asarray(Xr.todense()) if sp.issparse(Xr) else Xr
    yr = y[rows]
    k = len(rows)
    if ds.model_kind == LINEAR:
        g = 2.0 * Xr.T @ (Xr @ w - yr)
    elif ds.model_kind == BINARY_LOGISTIC:
        z = yr * (Xr @ w)
        g = -Xr.T @ (yr * one_minus_sigmoid(z))
    else:
        q = ds.num_classes
        W = w.reshape(q, ds.m).T
        P = softmax_rows(Xr @ W)
        P[np.arange(k), yr.astype(np.int64)] -= 1.0
        g = (Xr.T @ P).T.ravel()
    return np.asarray(g).ravel() + k * hp.lam * w


def infl_update(ds: TrainingDataset, hp: Hyperparams, w_full: ModelParams,
                request: DeletionRequest) -> ModelParams:
    """One Newton-style influence step for multi-sample removal:
    w + H^{-1} (sum of removed-sample gradients) / (n - dn), with H the
    full-data Hessian at the trained parameters."""
    request.validate(ds.n)
    w = np.asarray(w_full.w, dtype=np.float64)
    if request.count == 0:
        return ModelParams(w.copy(), iteration_tag=w_full.iteration_tag)
    H = _full_hessian(ds, hp, w)
    try:
        factor = scipy.linalg.cho_factor(H)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"influence Hessian is not positive definite: {exc}")
    g = _removed_gradient_sum(ds, hp, w, request.removed)
    step = scipy.linalg.cho_solve(factor, g) / (ds.n - request.count)
    return ModelParams(w + step, iteration_tag=w_full.iteration_tag)
