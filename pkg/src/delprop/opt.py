"""Optimized update paths for small feature spaces.

Linear: one offline eigendecomposition of M = X^T X turns the GD recursion
into independent scalar recurrences in the eigenbasis, and a deletion only
perturbs the eigenvalues (diag(Q^T M' Q)), so an update costs
O(min(dn, m) m^2 + tau m) instead of a tau-step matrix loop. Logistic: run
the normal incremental replay up to t_s, then freeze the coefficient
matrices at t_s and use the same eigenbasis recurrence for the tail.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .capture import ProvenanceCache
from .core import (BINARY_LOGISTIC, LINEAR, MULTINOMIAL_LOGISTIC,
                   DeletionRequest, ModelParams, TrainingDataset)
from .errors import ConfigError, NumericError
from .linearizer import BINARY_COEFFS
from .trainer import resolve_eta, softmax_rows
from .update import UpdateReport, _batch_removal_index, _removed_cd_apply

OPT_FEATURE_GUARD = 2048


@dataclass(frozen=True)
class EigenCache:
    """Offline eigendecomposition Q diag(c) Q^{-1} of the update matrix
    (M = X^T X for linear, the symmetrized frozen C^(t_s) for logistic),
    plus the matching moment vector."""

    Q: np.ndarray
    Q_inv: np.ndarray
    eigenvalues: np.ndarray
    moment: np.ndarray
    source: str
    t_s: Optional[int] = None

    @property
    def dim(self) -> int:
        return self.Q.shape[0]


def _decompose(M: np.ndarray, moment: np.ndarray, source: str,
               t_s: Optional[int] = None) -> EigenCache:
    sym = 0.5 * (M + M.T)
    c, Q = np.linalg.eigh(sym)
    rec = (Q * c) @ Q.T
    denom = np.linalg.norm(sym)
    if denom > 0 and np.linalg.norm(rec - sym) / denom > 1e-8:
        raise NumericError("eigendecomposition failed the reconstruction check")
    return EigenCache(Q=Q, Q_inv=Q.T, eigenvalues=c, moment=moment,
                      source=source, t_s=t_s)


def build_eigen_cache_linear(ds: TrainingDataset) -> EigenCache:
    if ds.storage_kind != "dense":
        raise ConfigError("the eigen path needs a dense dataset")
    X = ds.features
    return _decompose(X.T @ X, X.T @ ds.labels, source="gram")


def build_eigen_cache_logistic(cache: ProvenanceCache) -> EigenCache:
    if cache.t_s is None:
        raise ConfigError("cache was captured without an early-stop iteration t_s")
    if cache.entries is None:
        raise ConfigError("sparse-linearized caches have no frozen matrices")
    t_s = cache.t_s
    if t_s >= cache.hp.iterations:
        # t_s == tau means no frozen phase; decompose the last iteration's
        # matrices so the cache is still well formed.
        t_s = cache.hp.iterations - 1
    C = cache.dense_matrix(t_s)
    return _decompose(C, cache.entries[t_s].moment.copy(), source="frozen-C",
                      t_s=cache.t_s)


def _diagonal_recurrence(v: np.ndarray, dvals, moment_eig, steps: int) -> np.ndarray:
    """Iteratively evaluate the product / sum-of-products recurrence
    v <- d (*) v + b in the eigenbasis. ``dvals`` and ``moment_eig`` may be
    per-step callables or constants."""
    for j in range(steps):
        d = dvals(j) if callable(dvals) else dvals
        b = moment_eig(j) if callable(moment_eig) else moment_eig
        v = d * v + b
    return v


def opt_linear(ds: TrainingDataset, ecache: EigenCache, hp,
               request: DeletionRequest,
               w0: Optional[np.ndarray] = None) -> tuple[ModelParams, UpdateReport]:
    """Full-gradient (GD) update in the cached eigenbasis with incrementally
    updated eigenvalues.

    Deliberately GD semantics rather than mb-SGD: compare against a GD
    oracle, not the mini-batch trajectory (the report carries the flag).
    """
    if ds.model_kind != LINEAR:
        raise ConfigError("opt_linear applies to the linear model")
    if ds.storage_kind != "dense":
        raise ConfigError("the eigen path needs a dense dataset")
    if ds.m > OPT_FEATURE_GUARD:
        raise ConfigError(
            f"m={ds.m} exceeds the eigen-path guard ({OPT_FEATURE_GUARD}); "
            "use the per-iteration update instead")
    request.validate(ds.n)
    if request.count >= ds.n:
        raise ConfigError("cannot delete every sample")
    hp = resolve_eta(ds, hp)
    t0 = time.perf_counter()
    X, y = ds.features, ds.labels
    n_new = ds.n - request.count
    eta, lam = hp.eta, hp.lam
    if request.count:
        rows = request.removed
        T = X[rows] @ ecache.Q  # dn x m
        c_new = ecache.eigenvalues - np.einsum("ij,ij->j", T, T)
        N_new = ecache.moment - X[rows].T @ y[rows]
    else:
        c_new = ecache.eigenvalues
        N_new = ecache.moment
    d = (1.0 - eta * lam) - (2.0 * eta / n_new) * c_new
    b = (2.0 * eta / n_new) * (ecache.Q_inv @ N_new)
    v0 = np.zeros(ds.m) if w0 is None else ecache.Q_inv @ np.asarray(w0, dtype=np.float64)
    v = _diagonal_recurrence(v0, d, b, hp.iterations)
    w = ecache.Q @ v
    t1 = time.perf_counter()
    report = UpdateReport("priu-opt", request.count, hp.iterations,
                          timings={"total_s": t1 - t0, "loop_s": t1 - t0},
                          details={"semantics": "gd", "source": ecache.source})
    return ModelParams(w, iteration_tag=hp.iterations), report


def _frozen_deltas(cache: ProvenanceCache, ds: TrainingDataset, t_s: int,
                   schedule, request: DeletionRequest):
    """dC^(t_s) and dD^(t_s) as explicit arrays (small feature space)."""
    d = cache.param_dim
    batch = schedule.batch(t_s)
    pos = np.flatnonzero(np.isin(batch, request.removed)) if request.count \
        else np.empty(0, dtype=np.int64)
    if len(pos) == 0:
        return np.zeros((d, d)), np.zeros(d)
    rows = batch[pos]
    X = ds.features
    Xr = np.asarray(X[rows].todense()) if sp.issparse(X) else X[rows]
    y = ds.labels
    if cache.coeffs.kind == BINARY_COEFFS:
        a, b = cache.coeffs.ab(t_s)
        dC = (Xr * a[pos][:, None]).T @ Xr
        dD = Xr.T @ (b[pos] * y[rows])
        return dC, np.asarray(dD).ravel()
    q, m = cache.q, cache.m
    Z = cache.coeffs.logits[t_s][pos]
    S = softmax_rows(Z)
    J = -np.einsum("ic,id->icd", S, S)
    J[:, np.arange(q), np.arange(q)] += S
    dC = -np.einsum("icd,ij,ik->cjdk", J, Xr, Xr, optimize=True).reshape(d, d)
    resid = S.copy()
    resid[np.arange(len(pos)), y[rows].astype(np.int64)] -= 1.0
    coef = -resid + np.einsum("icd,id->ic", J, Z)
    dD = np.einsum("ic,ij->cj", coef, Xr).reshape(d)
    return dC, dD


def opt_logistic(ds: TrainingDataset, cache: ProvenanceCache,
                 ecache: Optional[EigenCache],
                 request: DeletionRequest) -> tuple[ModelParams, UpdateReport]:
    """Incremental replay up to t_s, then the eigenbasis recurrence with the
    coefficient matrices frozen at t_s."""
    if cache.model_kind not in (BINARY_LOGISTIC, MULTINOMIAL_LOGISTIC):
        raise ConfigError(f"cache holds a {cache.model_kind} model, not logistic")
    if cache.t_s is None:
        raise ConfigError("cache was captured without an early-stop iteration t_s")
    if cache.t_s > cache.hp.iterations:
        raise ConfigError(f"t_s={cache.t_s} exceeds tau={cache.hp.iterations}")
    if cache.entries is None:
        raise ConfigError("sparse-linearized cache: the frozen path needs matrices")
    cache.check_dataset(ds)
    request.validate(ds.n)
    t_s = cache.t_s
    hp = cache.hp
    eta, lam = hp.eta, hp.lam
    dpar = cache.param_dim
    if ecache is None:
        ecache = build_eigen_cache_logistic(cache)

    t0 = time.perf_counter()
    schedule = cache.schedule()
    removed_pos = _batch_removal_index(schedule, request)
    X, y = ds.features, ds.labels

    w = cache.w0.copy()
    for t in range(t_s):
        batch = schedule.batch(t)
        pos = removed_pos[t]
        bu = len(batch) - len(pos)
        if bu == 0:
            w = (1.0 - eta * lam) * w
            continue
        entry = cache.entries[t]
        Cw = entry.matvec(w, dpar)
        D = entry.moment
        if len(pos):
            dCw, dD = _removed_cd_apply(cache, X, y, batch, pos, t, w)
        else:
            dCw, dD = 0.0, 0.0
        w = (1.0 - eta * lam) * w + (eta / bu) * (Cw - dCw) + (eta / bu) * (D - dD)
    t1 = time.perf_counter()

    if t_s < hp.iterations:
        dC, dD = _frozen_deltas(cache, ds, t_s, schedule, request)
        gamma = ecache.eigenvalues - np.einsum("ij,jk,ki->i", ecache.Q_inv, dC, ecache.Q)
        moment_eig = ecache.Q_inv @ (ecache.moment - dD)
        v = ecache.Q_inv @ w
        for t in range(t_s, hp.iterations):
            bu = len(schedule.batch(t)) - len(removed_pos[t])
            if bu == 0:
                v = (1.0 - eta * lam) * v
                continue
            v = ((1.0 - eta * lam) + (eta / bu) * gamma) * v + (eta / bu) * moment_eig
        w = ecache.Q @ v
    t2 = time.perf_counter()
    report = UpdateReport("priu-opt", request.count, hp.iterations,
                          timings={"pre_ts_s": t1 - t0, "frozen_s": t2 - t1,
                                   "total_s": t2 - t0},
                          details={"t_s": t_s, "mode": cache.mode})
    return ModelParams(w, iteration_tag=hp.iterations), report
