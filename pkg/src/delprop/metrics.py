"""Model-comparison and validation metrics."""

from __future__ import annotations

import numpy as np

from .core import BINARY_LOGISTIC, LINEAR, MULTINOMIAL_LOGISTIC, TrainingDataset
from .errors import ConfigError, NumericError


def _pair(v1, v2):
    a = np.asarray(v1, dtype=np.float64).ravel()
    b = np.asarray(v2, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ConfigError(f"vector length mismatch: {a.shape[0]} vs {b.shape[0]}")
    return a, b


def l2_dist(v1, v2) -> float:
    a, b = _pair(v1, v2)
    return float(np.linalg.norm(a - b))


def cosine_sim(v1, v2) -> float:
    a, b = _pair(v1, v2)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise NumericError("cosine similarity is undefined for a zero vector")
    c = float(a @ b / (na * nb))
    return min(1.0, max(-1.0, c))


def mse(ds_val: TrainingDataset, w) -> float:
    if ds_val.model_kind != LINEAR:
        raise ConfigError("MSE is defined for the linear model only")
    w = np.asarray(w, dtype=np.float64).ravel()
    if w.shape[0] != ds_val.m:
        raise ConfigError(f"parameter length {w.shape[0]} != m = {ds_val.m}")
    r = np.asarray(ds_val.features @ w).ravel() - ds_val.labels
    return float(r @ r) / ds_val.n


def validation_accuracy(ds_val: TrainingDataset, w) -> float:
    """Fraction of validation samples classified correctly.

    Ties at the decision boundary go to +1 (binary) or the lowest class
    index (multinomial), so accuracy is deterministic and invariant under
    positive rescaling of w.
    """
    w = np.asarray(w, dtype=np.float64).ravel()
    if ds_val.model_kind == BINARY_LOGISTIC:
        if w.shape[0] != ds_val.m:
            raise ConfigError(f"parameter length {w.shape[0]} != m = {ds_val.m}")
        scores = np.asarray(ds_val.features @ w).ravel()
        pred = np.where(scores >= 0, 1.0, -1.0)
        return float((pred == ds_val.labels).mean())
    if ds_val.model_kind == MULTINOMIAL_LOGISTIC:
        if w.shape[0] != ds_val.m * ds_val.num_classes:
            raise ConfigError("parameter length does not match m*q")
        W = w.reshape(ds_val.num_classes, ds_val.m).T
        scores = np.asarray(ds_val.features @ W)
        pred = scores.argmax(axis=1)  # argmax takes the lowest index on ties
        return float((pred == ds_val.labels.astype(np.int64)).mean())
    raise ConfigError("validation accuracy needs a classification model")


def sign_flip_report(v1, v2) -> tuple[int, float]:
    """(number of coordinates whose sign flips, max per-coordinate |change|).

    Zero counts as positive.
    """
    a, b = _pair(v1, v2)
    sa = np.where(a >= 0, 1, -1)
    sb = np.where(b >= 0, 1, -1)
    flips = int((sa != sb).sum())
    max_change = float(np.max(np.abs(a - b))) if len(a) else 0.0
    return flips, max_change
