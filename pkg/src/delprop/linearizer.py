"""Piecewise linear interpolation of f(x) = 1 - 1/(1+e^(-x)) and extraction
of per-sample, per-iteration linear coefficients along the full-data
training trajectory.

The grid is uniform over [-a_bound, a_bound] with constant tails, so
breakpoints are implicit and segment coefficients are recomputed on demand
from the segment index; nothing is tabulated.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import BINARY_LOGISTIC, MULTINOMIAL_LOGISTIC, TrainingDataset
from .errors import ConfigError, DataError
from .trainer import TrainRun, one_minus_sigmoid, softmax_rows

BINARY_COEFFS = "binary-segments"
SOFTMAX_COEFFS = "softmax-tangent"


@dataclass(frozen=True)
class InterpolationTable:
    """Uniform-grid interpolant for f over [-a_bound, a_bound].

    Outside the domain s(x) is the constant f(+-a_bound), which keeps s
    continuous. Segment index conventions: -1 = left tail, ``segments`` =
    right tail, 0..segments-1 = interior.
    """

    a_bound: float = 20.0
    segments: int = 1_000_000

    def __post_init__(self):
        if self.a_bound <= 0 or self.segments < 1:
            raise ConfigError("interpolation table needs a_bound > 0 and segments >= 1")

    @property
    def dx(self) -> float:
        return 2.0 * self.a_bound / self.segments

    def segment_index(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if np.any(np.isnan(x)):
            raise ConfigError("NaN argument to the interpolant")
        idx = np.floor((x + self.a_bound) / self.dx).astype(np.int64)
        return np.clip(idx, -1, self.segments)

    def segment_coeffs(self, idx) -> tuple[np.ndarray, np.ndarray]:
        """Slope and intercept of the requested segments."""
        shape = np.shape(idx)
        idx = np.atleast_1d(np.asarray(idx, dtype=np.int64))
        a = np.zeros(idx.shape, dtype=np.float64)
        b = np.empty(idx.shape, dtype=np.float64)
        left = idx < 0
        right = idx >= self.segments
        b[left] = one_minus_sigmoid(-self.a_bound)
        b[right] = one_minus_sigmoid(self.a_bound)
        interior = ~(left | right)
        if np.any(interior):
            j = idx[interior]
            x0 = -self.a_bound + j * self.dx
            x1 = x0 + self.dx
            f0 = one_minus_sigmoid(x0)
            f1 = one_minus_sigmoid(x1)
            aj = (f1 - f0) / self.dx
            a[interior] = aj
            b[interior] = f0 - aj * x0
        return a.reshape(shape), b.reshape(shape)


def interpolant(table: InterpolationTable, x: float) -> tuple[float, float, float]:
    """Evaluate s(x) = a*x + b; returns (s, a, b)."""
    idx = table.segment_index(x)
    a, b = table.segment_coeffs(idx)
    return float(a * x + b), float(a), float(b)


@dataclass(frozen=True)
class LinearCoeffs:
    """Per-iteration, per-batch-position linearization coefficients.

    Binary: segment indices into the table, shape (tau, B); slope/intercept
    reconstruct bit-exactly from the index. Multinomial: the training-time
    logits z = W^(t)T x_i, shape (tau, B, q); the tangent-plane slope and
    intercept rebuild from z, x_i and y_i.
    """

    kind: str
    table: InterpolationTable
    segment_indices: np.ndarray | None = None
    logits: np.ndarray | None = None

    def ab(self, t: int) -> tuple[np.ndarray, np.ndarray]:
        """Slope/intercept row for iteration t, expanded once from the
        stored segment indices and memoized (cache materialization, not
        update work)."""
        if self.kind != BINARY_COEFFS:
            raise ConfigError("scalar coefficients exist only for the binary model")
        expanded = self.__dict__.get("_expanded")
        if expanded is None:
            expanded = self.table.segment_coeffs(self.segment_indices)
            object.__setattr__(self, "_expanded", expanded)
        return expanded[0][t], expanded[1][t]

    @property
    def iterations(self) -> int:
        arr = self.segment_indices if self.kind == BINARY_COEFFS else self.logits
        return arr.shape[0]


def extract_coeffs(ds: TrainingDataset, run: TrainRun,
                   table: InterpolationTable) -> LinearCoeffs:
    """Coefficients for every (t, i in B^(t)) along the original trajectory.

    All arguments are evaluated at the training-time parameters w^(t); an
    update replaying these coefficients never re-evaluates the nonlinearity.
    """
    if not run.covers_every_iteration:
        raise DataError("trajectory is thinned; coefficient extraction needs stride 1")
    tau = run.hp.iterations
    schedule = run.schedule
    B = schedule.batch_size
    X, y = ds.features, ds.labels
    if ds.model_kind == BINARY_LOGISTIC:
        seg = np.empty((tau, B), dtype=np.int64)
        for t in range(tau):
            batch = schedule.batch(t)
            w = run.params_at(t)
            z = y[batch] * np.asarray(X[batch] @ w).ravel()
            seg[t] = table.segment_index(z)
        return LinearCoeffs(BINARY_COEFFS, table, segment_indices=seg)
    if ds.model_kind == MULTINOMIAL_LOGISTIC:
        q = ds.num_classes
        logits = np.empty((tau, B, q), dtype=np.float64)
        for t in range(tau):
            batch = schedule.batch(t)
            W = run.params_at(t).reshape(q, ds.m).T
            logits[t] = np.asarray(X[batch] @ W)
        return LinearCoeffs(SOFTMAX_COEFFS, table, logits=logits)
    raise ConfigError("linearization applies to logistic models only")


def softmax_affine_apply(x: np.ndarray, z: np.ndarray, label: int,
                         W: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Tangent-plane pieces for one sample at frozen logits z.

    Returns (A_w, b) both of shape (q, m) where, for the flattened parameter
    vector w = vec([w_1..w_q]), A_w.ravel() equals A*w for the frozen slope
    A = -(diag(s) - s s^T) (x) x x^T and b.ravel() is the frozen intercept,
    so that the linearized negative gradient is A*w + b.
    """
    s = softmax_rows(z[None, :])[0]
    S = np.diag(s) - np.outer(s, s)
    xw = W.T @ x  # current logits of the evolving parameters
    Aw = -np.outer(S @ xw, x)
    resid = s.copy()
    resid[label] -= 1.0
    b = -np.outer(resid, x) + np.outer(S @ z, x)
    return Aw, b
