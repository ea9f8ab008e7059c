"""Numeric gradient-based training for the three model kinds.

The update is w <- w - eta * grad_B(w) where grad_B is the gradient of the
batch objective (mean loss over the batch plus the L2 term), equivalently
w <- (1 - eta*lam) w - eta * (mean unregularized batch gradient).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import (BINARY_LOGISTIC, LINEAR, BatchSchedule, Hyperparams,
                   ModelParams, TrainingDataset)
from .errors import ConfigError, NumericError, TrainingDivergedError


def one_minus_sigmoid(x: np.ndarray) -> np.ndarray:
    """f(x) = 1 - 1/(1 + e^(-x)), computed without overflow for any x."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = np.exp(-x[pos]) / (1.0 + np.exp(-x[pos]))
    out[~pos] = 1.0 / (1.0 + np.exp(x[~pos]))
    return out


def softmax_rows(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


@dataclass(frozen=True)
class TrainRun:
    """Trajectory and metadata of one training run.

    ``params_trajectory`` holds w^(t) for the recorded iterations
    (``recorded_iterations`` gives the tags); with stride 1 it covers
    t = 0..tau inclusive.
    """

    params_trajectory: tuple
    recorded_iterations: tuple
    final: ModelParams
    objective_trace: tuple
    schedule: BatchSchedule
    hp: Hyperparams
    w0: np.ndarray

    def params_at(self, t: int) -> np.ndarray:
        try:
            k = self.recorded_iterations.index(t)
        except ValueError:
            raise ConfigError(f"iteration {t} was not recorded (stride too large)")
        return self.params_trajectory[k].w

    @property
    def covers_every_iteration(self) -> bool:
        return self.recorded_iterations == tuple(range(self.hp.iterations + 1))


def _check_shape(ds: TrainingDataset, w: np.ndarray) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64).ravel()
    if w.shape[0] != ds.param_dim:
        raise ConfigError(
            f"parameter length {w.shape[0]} does not match model dimension {ds.param_dim}"
        )
    return w


def objective(ds: TrainingDataset, hp: Hyperparams, w: np.ndarray) -> float:
    """Mean loss over all n samples plus (lam/2)||w||^2."""
    w = _check_shape(ds, w)
    X, y = ds.features, ds.labels
    reg = 0.5 * hp.lam * float(w @ w)
    if ds.model_kind == LINEAR:
        r = X @ w - y
        return float(r @ r) / ds.n + reg
    if ds.model_kind == BINARY_LOGISTIC:
        z = y * (X @ w)
        # log(1 + exp(-z)) without overflow
        loss = np.logaddexp(0.0, -z)
        return float(loss.mean()) + reg
    W = w.reshape(ds.num_classes, ds.m).T
    Z = X @ W
    lse = np.log(np.exp(Z - Z.max(axis=1, keepdims=True)).sum(axis=1)) + Z.max(axis=1)
    picked = Z[np.arange(ds.n), ds.labels.astype(np.int64)]
    return float((lse - picked).mean()) + reg


def gradient(ds: TrainingDataset, hp: Hyperparams, w: np.ndarray,
             batch: np.ndarray) -> np.ndarray:
    """Gradient of the batch objective: mean unregularized gradient over the
    batch plus lam*w."""
    w = _check_shape(ds, w)
    batch = np.asarray(batch, dtype=np.int64)
    if batch.size == 0:
        raise ConfigError("gradient over an empty batch is undefined")
    Xb = ds.features[batch]
    yb = ds.labels[batch]
    B = len(batch)
    if ds.model_kind == LINEAR:
        r = Xb @ w - yb
        g = 2.0 * (Xb.T @ r) / B
        return np.asarray(g).ravel() + hp.lam * w
    if ds.model_kind == BINARY_LOGISTIC:
        z = yb * (Xb @ w)
        g = -(Xb.T @ (yb * one_minus_sigmoid(z))) / B
        return np.asarray(g).ravel() + hp.lam * w
    W = w.reshape(ds.num_classes, ds.m).T
    P = softmax_rows(np.asarray(Xb @ W))
    P[np.arange(B), yb.astype(np.int64)] -= 1.0
    G = (Xb.T @ P) / B  # m x q
    return np.asarray(G).T.ravel() + hp.lam * w


def estimate_lipschitz(ds: TrainingDataset, hp: Hyperparams,
                       tol: float = 1e-6, max_iter: int = 10_000) -> float:
    """Upper estimate of the smoothness constant L used to validate
    eta <= 1/L.

    Linear: lam + 2*||X^T X||_2 / n. Logistic: lam + c*||X^T X||_2 / n with
    the sigmoid-derivative bound c = 1/4 (binary) or the softmax Jacobian
    bound c = 1/2 (multinomial). The spectral norm comes from power
    iteration on v -> X^T (X v).
    """
    X = ds.features
    v = np.full(ds.m, 1.0 / np.sqrt(ds.m))
    prev = 0.0
    s = 0.0
    for _ in range(max_iter):
        u = X.T @ (X @ v)
        u = np.asarray(u).ravel()
        s = float(np.linalg.norm(u))
        if s == 0.0:
            break
        v = u / s
        if abs(s - prev) <= tol * max(1.0, s):
            break
        prev = s
    else:
        raise NumericError(f"power iteration did not converge in {max_iter} steps")
    if ds.model_kind == LINEAR:
        return hp.lam + 2.0 * s / ds.n
    if ds.model_kind == BINARY_LOGISTIC:
        return hp.lam + 0.25 * s / ds.n
    return hp.lam + 0.5 * s / ds.n


def resolve_eta(ds: TrainingDataset, hp: Hyperparams) -> Hyperparams:
    """Fill in eta = 0.9 / L-hat when the caller left it unset."""
    if hp.eta is not None:
        return hp
    L = estimate_lipschitz(ds, hp)
    if L <= 0:
        raise NumericError("cannot derive a learning rate from L = 0")
    return hp.resolved(0.9 / L)


def train(ds: TrainingDataset, hp: Hyperparams, schedule: BatchSchedule,
          record_stride: int = 1, w0: Optional[np.ndarray] = None) -> TrainRun:
    """Run mb-SGD for hp.iterations steps over the given schedule.

    Records w^(t) every ``record_stride`` iterations plus the final iterate,
    along with the full-data objective at the recorded points.
    """
    if schedule.batch_size != hp.batch_size or schedule.n != ds.n:
        raise ConfigError("schedule was built for different (n, batch size)")
    if schedule.iterations < hp.iterations:
        raise ConfigError("schedule has fewer batches than hp.iterations")
    hp = resolve_eta(ds, hp)
    w = np.zeros(ds.param_dim) if w0 is None else _check_shape(ds, w0).copy()
    w0_saved = w.copy()

    traj = []
    tags = []
    trace = []

    def record(t, wt):
        traj.append(ModelParams(wt.copy(), iteration_tag=t))
        tags.append(t)
        trace.append(objective(ds, hp, wt))

    record(0, w)
    for t in range(hp.iterations):
        g = gradient(ds, hp, w, schedule.batch(t))
        w = w - hp.eta * g
        if not np.all(np.isfinite(w)):
            raise TrainingDivergedError(t + 1)
        tfinal = t + 1
        if tfinal % record_stride == 0 or tfinal == hp.iterations:
            record(tfinal, w)

    return TrainRun(
        params_trajectory=tuple(traj),
        recorded_iterations=tuple(tags),
        final=traj[-1],
        objective_trace=tuple(trace),
        schedule=schedule,
        hp=hp,
        w0=w0_saved,
    )
