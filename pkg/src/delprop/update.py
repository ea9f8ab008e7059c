"""Incremental parameter updates from a provenance cache: replay the
training iteration with the removed samples' contributions subtracted from
the cached per-batch intermediates, never retraining and never
re-evaluating the nonlinearity.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .capture import SPARSE_LINEARIZED, ProvenanceCache
from .core import (BINARY_LOGISTIC, LINEAR, MULTINOMIAL_LOGISTIC,
                   DeletionRequest, ModelParams, TrainingDataset)
from .errors import CacheFormatError, ConfigError
from .linearizer import BINARY_COEFFS
from .trainer import softmax_rows


@dataclass
class UpdateReport:
    """Timing and configuration metadata for one deletion request."""

    method: str
    removed: int
    iterations: int
    timings: dict = field(default_factory=dict)
    details: dict = field(default_factory=dict)

    @property
    def update_seconds(self) -> float:
        return self.timings.get("total_s", 0.0)


def _batch_removal_index(schedule, request: DeletionRequest):
    """Per iteration: positions of removed rows inside the batch."""
    if request.count == 0:
        empty = np.empty(0, dtype=np.int64)
        return [empty] * schedule.iterations
    mask = request.mask(schedule.n)
    return [np.flatnonzero(mask[schedule.batch(t)])
            for t in range(schedule.iterations)]


def _common_checks(ds: TrainingDataset, cache: ProvenanceCache,
                   request: DeletionRequest) -> None:
    cache.check_dataset(ds)
    request.validate(ds.n)


def priu_linear(ds: TrainingDataset, cache: ProvenanceCache,
                request: DeletionRequest) -> tuple[ModelParams, UpdateReport]:
    """Replay w <- [(1-eta*lam)I - (2eta/B_U)(G - dG)] w + (2eta/B_U)(g - dg)
    using the cached G^(t), g^(t) and batch-local removed contributions."""
    if cache.model_kind != LINEAR:
        raise ConfigError(f"cache holds a {cache.model_kind} model, not linear")
    if cache.entries is None:
        raise CacheFormatError("missing-chunk", "cache has no per-iteration entries")
    _common_checks(ds, cache, request)
    t0 = time.perf_counter()
    schedule = cache.schedule()
    removed_pos = _batch_removal_index(schedule, request)
    X = ds.features
    y = ds.labels
    hp = cache.hp
    eta, lam = hp.eta, hp.lam
    m = cache.m
    t1 = time.perf_counter()

    w = cache.w0.copy()
    for t in range(hp.iterations):
        batch = schedule.batch(t)
        pos = removed_pos[t]
        bu = len(batch) - len(pos)
        if bu == 0:
            w = (1.0 - eta * lam) * w
            continue
        entry = cache.entries[t]
        Gw = entry.matvec(w, m)
        gvec = entry.moment
        if len(pos):
            rows = batch[pos]
            Xr = X[rows]
            dGw = np.asarray(Xr.T @ (Xr @ w)).ravel()
            dg = np.asarray(Xr.T @ y[rows]).ravel()
        else:
            dGw = 0.0
            dg = 0.0
        w = (1.0 - eta * lam) * w - (2.0 * eta / bu) * (Gw - dGw) \
            + (2.0 * eta / bu) * (gvec - dg)
    t2 = time.perf_counter()
    report = UpdateReport("priu", request.count, hp.iterations,
                          timings={"setup_s": t1 - t0, "loop_s": t2 - t1,
                                   "total_s": t2 - t0},
                          details={"mode": cache.mode})
    return ModelParams(w, iteration_tag=hp.iterations), report


def _removed_cd_apply(cache: ProvenanceCache, X, y, batch, pos, t, w):
    """(dC^(t) w, dD^(t)) rebuilt on the fly from the stored coefficients of
    the removed samples in batch t."""
    rows = batch[pos]
    Xr = X[rows]
    Xr = np.asarray(Xr.todense()) if sp.issparse(Xr) else Xr
    if cache.coeffs.kind == BINARY_COEFFS:
        a, b = cache.coeffs.ab(t)
        ar, br = a[pos], b[pos]
        dCw = Xr.T @ (ar * (Xr @ w))
        dD = Xr.T @ (br * y[rows])
        return np.asarray(dCw).ravel(), np.asarray(dD).ravel()
    q, m = cache.q, cache.m
    Z = cache.coeffs.logits[t][pos]  # frozen training-time logits
    S = softmax_rows(Z)
    J = -np.einsum("ic,id->icd", S, S)
    J[:, np.arange(q), np.arange(q)] += S
    W = w.reshape(q, m).T
    Zcur = Xr @ W
    SZcur = np.einsum("icd,id->ic", J, Zcur)
    dCw = -(Xr.T @ SZcur).T.ravel()
    resid = S.copy()
    resid[np.arange(len(pos)), y[rows].astype(np.int64)] -= 1.0
    coef = -resid + np.einsum("icd,id->ic", J, Z)
    dD = (Xr.T @ coef).T.ravel()
    return dCw, dD


def priu_logistic(ds: TrainingDataset, cache: ProvenanceCache,
                  request: DeletionRequest) -> tuple[ModelParams, UpdateReport]:
    """Replay w <- [(1-eta*lam)I + (eta/B_U)(C - dC)] w + (eta/B_U)(D - dD)
    with coefficients frozen at their training-time values."""
    if cache.model_kind not in (BINARY_LOGISTIC, MULTINOMIAL_LOGISTIC):
        raise ConfigError(f"cache holds a {cache.model_kind} model, not logistic")
    if cache.coeffs is None:
        raise CacheFormatError("missing-chunk", "cache has no coefficient chunks")
    if cache.entries is None:
        raise ConfigError("sparse-linearized cache: use the sparse update path")
    _common_checks(ds, cache, request)
    t0 = time.perf_counter()
    schedule = cache.schedule()
    removed_pos = _batch_removal_index(schedule, request)
    X, y = ds.features, ds.labels
    hp = cache.hp
    eta, lam = hp.eta, hp.lam
    d = cache.param_dim
    t1 = time.perf_counter()

    w = cache.w0.copy()
    for t in range(hp.iterations):
        batch = schedule.batch(t)
        pos = removed_pos[t]
        bu = len(batch) - len(pos)
        if bu == 0:
            w = (1.0 - eta * lam) * w
            continue
        entry = cache.entries[t]
        Cw = entry.matvec(w, d)
        D = entry.moment
        if len(pos):
            dCw, dD = _removed_cd_apply(cache, X, y, batch, pos, t, w)
        else:
            dCw = 0.0
            dD = 0.0
        w = (1.0 - eta * lam) * w + (eta / bu) * (Cw - dCw) + (eta / bu) * (D - dD)
    t2 = time.perf_counter()
    report = UpdateReport("priu", request.count, hp.iterations,
                          timings={"setup_s": t1 - t0, "loop_s": t2 - t1,
                                   "total_s": t2 - t0},
                          details={"mode": cache.mode})
    return ModelParams(w, iteration_tag=hp.iterations), report


def priu_sparse_logistic(ds: TrainingDataset, cache: ProvenanceCache,
                         request: DeletionRequest) -> tuple[ModelParams, UpdateReport]:
    """Sparse replay of the linearized rule over the remaining rows of each
    batch; needs only the dataset and the stored coefficients."""
    if ds.storage_kind != "sparse":
        raise ConfigError("sparse update path needs a sparse dataset")
    if cache.mode != SPARSE_LINEARIZED:
        raise ConfigError(f"cache mode {cache.mode!r} is not sparse-linearized")
    if cache.coeffs is None:
        raise CacheFormatError("missing-chunk", "cache has no coefficient chunks")
    _common_checks(ds, cache, request)
    t0 = time.perf_counter()
    schedule = cache.schedule()
    X, y = ds.features, ds.labels
    hp = cache.hp
    eta, lam = hp.eta, hp.lam
    if request.count:
        mask = request.mask(ds.n)
        keep_pos = [np.flatnonzero(~mask[schedule.batch(t)])
                    for t in range(hp.iterations)]
    else:
        keep_pos = [np.arange(schedule.batch_size)] * hp.iterations
    binary = cache.coeffs.kind == BINARY_COEFFS
    q, m = cache.q, cache.m
    t1 = time.perf_counter()

    w = cache.w0.copy()
    for t in range(hp.iterations):
        pos = keep_pos[t]
        bu = len(pos)
        if bu == 0:
            w = (1.0 - eta * lam) * w
            continue
        rows = schedule.batch(t)[pos]
        Xr = X[rows]
        if binary:
            a, b = cache.coeffs.ab(t)
            contrib = Xr.T @ (a[pos] * np.asarray(Xr @ w).ravel() + b[pos] * y[rows])
            w = (1.0 - eta * lam) * w + (eta / bu) * np.asarray(contrib).ravel()
        else:
            Z = cache.coeffs.logits[t][pos]
            S = softmax_rows(Z)
            J = -np.einsum("ic,id->icd", S, S)
            J[:, np.arange(q), np.arange(q)] += S
            W = w.reshape(q, m).T
            SZcur = np.einsum("icd,id->ic", J, np.asarray(Xr @ W))
            resid = S.copy()
            resid[np.arange(bu), y[rows].astype(np.int64)] -= 1.0
            coef = -resid + np.einsum("icd,id->ic", J, Z)
            contrib = (Xr.T @ (coef - SZcur)).T.ravel()
            w = (1.0 - eta * lam) * w + (eta / bu) * contrib
    t2 = time.perf_counter()
    report = UpdateReport("priu", request.count, hp.iterations,
                          timings={"setup_s": t1 - t0, "loop_s": t2 - t1,
                                   "total_s": t2 - t0},
                          details={"mode": cache.mode})
    return ModelParams(w, iteration_tag=hp.iterations), report
