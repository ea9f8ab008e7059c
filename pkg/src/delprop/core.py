"""Shared domain types: datasets, hyperparameters, schedules, parameters,
deletion requests.

Everything here is immutable after construction; numpy arrays are marked
read-only so instances can be shared freely across threads.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .errors import ConfigError, DataError, NumericError

LINEAR = "linear"
BINARY_LOGISTIC = "binary_logistic"
MULTINOMIAL_LOGISTIC = "multinomial_logistic"
MODEL_KINDS = (LINEAR, BINARY_LOGISTIC, MULTINOMIAL_LOGISTIC)


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class TrainingDataset:
    """Feature matrix (n x m), labels (n,) and one provenance token per row.

    Binary logistic labels are +1/-1; {0, 1} input is remapped at
    construction. Multinomial labels are class indices in [0, q).
    """

    features: "np.ndarray | sp.csr_matrix"
    labels: np.ndarray
    tokens: np.ndarray
    model_kind: str
    num_classes: int = 1

    def __post_init__(self):
        if self.model_kind not in MODEL_KINDS:
            raise ConfigError(f"unknown model kind {self.model_kind!r}")
        X = self.features
        if not (sp.issparse(X) or isinstance(X, np.ndarray)):
            raise DataError("features must be a dense array or csr matrix")
        if sp.issparse(X):
            object.__setattr__(self, "features", X.tocsr())
        else:
            object.__setattr__(self, "features", _freeze(np.asarray(X, dtype=np.float64)))
        y = np.asarray(self.labels, dtype=np.float64)
        toks = np.asarray(self.tokens, dtype=np.int64)
        n = self.features.shape[0]
        if len(y) != n or len(toks) != n:
            raise DataError(
                f"row count mismatch: {n} feature rows, {len(y)} labels, {len(toks)} tokens"
            )
        if len(np.unique(toks)) != n:
            raise DataError("provenance tokens must be pairwise distinct")
        if self.model_kind == BINARY_LOGISTIC:
            vals = set(np.unique(y).tolist())
            if vals <= {0.0, 1.0}:
                y = np.where(y > 0.5, 1.0, -1.0)
            elif not vals <= {-1.0, 1.0}:
                raise DataError(f"binary labels must be in {{+1,-1}} or {{0,1}}, got {sorted(vals)}")
        if self.model_kind == MULTINOMIAL_LOGISTIC:
            if self.num_classes < 2:
                raise ConfigError("multinomial model needs at least 2 classes")
            if np.any(y != np.floor(y)) or y.min() < 0 or y.max() >= self.num_classes:
                raise DataError(
                    f"multinomial labels must be integers in [0, {self.num_classes})"
                )
        object.__setattr__(self, "labels", _freeze(y))
        object.__setattr__(self, "tokens", _freeze(toks))

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def m(self) -> int:
        return self.features.shape[1]

    @property
    def storage_kind(self) -> str:
        return "sparse" if sp.issparse(self.features) else "dense"

    @property
    def param_dim(self) -> int:
        q = self.num_classes if self.model_kind == MULTINOMIAL_LOGISTIC else 1
        return self.m * q

    def fingerprint(self) -> bytes:
        """128-bit hash of the raw feature/label bytes and shape (memoized;
        the dataset is immutable)."""
        cached = self.__dict__.get("_fingerprint")
        if cached is not None:
            return cached
        h = hashlib.blake2b(digest_size=16)
        h.update(np.int64([self.n, self.m, self.num_classes]).tobytes())
        h.update(self.model_kind.encode())
        if sp.issparse(self.features):
            h.update(self.features.indptr.tobytes())
            h.update(self.features.indices.tobytes())
            h.update(self.features.data.tobytes())
        else:
            h.update(self.features.tobytes())
        h.update(self.labels.tobytes())
        digest = h.digest()
        object.__setattr__(self, "_fingerprint", digest)
        return digest

    def densified(self) -> "TrainingDataset":
        if not sp.issparse(self.features):
            return self
        return TrainingDataset(
            features=self.features.toarray(),
            labels=self.labels,
            tokens=self.tokens,
            model_kind=self.model_kind,
            num_classes=self.num_classes,
        )


@dataclass(frozen=True)
class Hyperparams:
    """Learning rate, L2 rate, batch size, iteration count and shuffle seed.

    ``eta=None`` means "pick 0.9 / L-hat at training time" (resolved once,
    then constant for the whole run).
    """

    eta: Optional[float]
    lam: float
    batch_size: int
    iterations: int
    seed: int
    model_kind: str = LINEAR

    def __post_init__(self):
        if self.eta is not None and not self.eta > 0:
            raise ConfigError(f"learning rate must be positive, got {self.eta}")
        # lam == 0 is permitted for unregularized sanity checks even though
        # the convergence guarantees assume lam > 0.
        if self.lam < 0:
            raise ConfigError(f"regularization rate must be >= 0, got {self.lam}")
        if self.batch_size < 1:
            raise ConfigError(f"batch size must be >= 1, got {self.batch_size}")
        if self.iterations < 1:
            raise ConfigError(f"iteration count must be >= 1, got {self.iterations}")
        if self.model_kind not in MODEL_KINDS:
            raise ConfigError(f"unknown model kind {self.model_kind!r}")

    def resolved(self, eta: float) -> "Hyperparams":
        return Hyperparams(eta, self.lam, self.batch_size, self.iterations,
                           self.seed, self.model_kind)


@dataclass(frozen=True)
class BatchSchedule:
    """Deterministic per-iteration mini-batch assignment.

    ``assignments`` has shape (iterations, B). Per epoch the batches are a
    shuffle-and-partition of the row indices; a trailing partial batch is
    dropped so B stays constant.
    """

    assignments: np.ndarray
    epoch_permutations: tuple
    n: int
    seed: int

    def __post_init__(self):
        object.__setattr__(self, "assignments", _freeze(np.asarray(self.assignments, dtype=np.int64)))
        object.__setattr__(self, "epoch_permutations",
                           tuple(_freeze(p) for p in self.epoch_permutations))

    @property
    def iterations(self) -> int:
        return self.assignments.shape[0]

    @property
    def batch_size(self) -> int:
        return self.assignments.shape[1]

    def batch(self, t: int) -> np.ndarray:
        return self.assignments[t]


def build_schedule(n: int, hp: Hyperparams) -> BatchSchedule:
    """Build the seeded shuffle-and-partition schedule shared by training
    and every subsequent update or retrain."""
    B = hp.batch_size
    if n < B:
        raise ConfigError(f"dataset has {n} rows, smaller than batch size {B}")
    per_epoch = n // B
    rng = np.random.default_rng(hp.seed)
    batches = []
    perms = []
    while len(batches) < hp.iterations:
        perm = rng.permutation(n)
        perms.append(perm)
        for k in range(per_epoch):
            if len(batches) == hp.iterations:
                break
            batches.append(perm[k * B:(k + 1) * B])
    return BatchSchedule(np.stack(batches), tuple(perms), n, hp.seed)


@dataclass(frozen=True)
class ModelParams:
    """Parameter vector; length m, or m*q flattened per class (class c owns
    the slice [c*m, (c+1)*m))."""

    w: np.ndarray
    iteration_tag: int = 0

    def __post_init__(self):
        w = np.asarray(self.w, dtype=np.float64).ravel()
        if not np.all(np.isfinite(w)):
            bad = int(np.flatnonzero(~np.isfinite(w))[0])
            raise NumericError(f"non-finite parameter at coordinate {bad}")
        object.__setattr__(self, "w", _freeze(w))

    def as_matrix(self, m: int) -> np.ndarray:
        """Columns are the per-class weight vectors."""
        return self.w.reshape(-1, m).T


@dataclass(frozen=True)
class DeletionRequest:
    """Sorted set of row indices to delete, plus a label for reports."""

    removed: np.ndarray
    label: str = ""

    def __post_init__(self):
        r = np.unique(np.asarray(self.removed, dtype=np.int64))
        if len(r) and r[0] < 0:
            raise DataError(f"negative row index {r[0]} in deletion request")
        object.__setattr__(self, "removed", _freeze(r))

    def validate(self, n: int) -> None:
        if len(self.removed) and self.removed[-1] >= n:
            raise DataError(f"row index {self.removed[-1]} out of range for n={n}")
        if len(self.removed) >= n:
            raise DataError("request deletes every training sample")

    @property
    def count(self) -> int:
        return len(self.removed)

    def mask(self, n: int) -> np.ndarray:
        m = np.zeros(n, dtype=bool)
        m[self.removed] = True
        return m


def effective_batch_size(schedule: BatchSchedule, t: int, request: DeletionRequest) -> int:
    """|B^(t) \\ R|: how many samples of batch t survive the deletion."""
    if t >= schedule.iterations:
        raise ConfigError(f"iteration {t} out of range (tau={schedule.iterations})")
    batch = schedule.batch(t)
    if request.count == 0:
        return len(batch)
    return int(len(batch) - np.isin(batch, request.removed).sum())
