"""Capture and persist the model-free per-iteration intermediates that make
deletion propagation cheap.

Linear: per-batch Gram matrix G^(t) and moment vector g^(t). Logistic:
coefficient-weighted C^(t) and D^(t). Either may be SVD-truncated
(dense-svd), and sparse datasets store only the linearization coefficients
(sparse-linearized). The binary file layout is documented in docs/format.md.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sp
from scipy.linalg.blas import dspmv

from .core import (BINARY_LOGISTIC, LINEAR, MULTINOMIAL_LOGISTIC,
                   BatchSchedule, Hyperparams, TrainingDataset, build_schedule)
from .errors import CacheFormatError, ConfigError, DataError, NumericError
from .linearizer import (BINARY_COEFFS, SOFTMAX_COEFFS, InterpolationTable,
                         LinearCoeffs)
from .trainer import TrainRun, softmax_rows

DENSE_FULL = "dense-full"
DENSE_SVD = "dense-svd"
SPARSE_LINEARIZED = "sparse-linearized"
MODES = (DENSE_FULL, DENSE_SVD, SPARSE_LINEARIZED)

MAGIC = b"PRIU"
VERSION = 1

_HEADER_FMT = "<4sHH16sQQIBBBBddQQqdqdQ"
_HEADER_SIZE = struct.calcsize(_HEADER_FMT)
_CHUNK_FMT = "<IBxxxQ"
_CHUNK_SIZE = struct.calcsize(_CHUNK_FMT)

_KIND_W0 = 1
_KIND_LINEAR_DENSE = 2
_KIND_LINEAR_SVD = 3
_KIND_LOGISTIC_DENSE = 4
_KIND_LOGISTIC_SVD = 5
_KIND_COEFF_SEGMENTS = 6
_KIND_COEFF_SOFTMAX = 7


def pack_symmetric(mat: np.ndarray) -> np.ndarray:
    """Upper triangle (including diagonal), row-major."""
    d = mat.shape[0]
    iu = np.triu_indices(d)
    return np.ascontiguousarray(mat[iu])


def unpack_symmetric(packed: np.ndarray, d: int) -> np.ndarray:
    iu = np.triu_indices(d)
    out = np.zeros((d, d))
    out[iu] = packed
    out.T[iu] = packed
    return out


@dataclass
class IterationEntry:
    """Cached intermediates of one iteration; ``gram`` is packed symmetric,
    SVD entries hold P = U_{1..r} S_{1..r} and V = V_{1..r} instead."""

    kind: str  # "dense" or "svd"
    moment: np.ndarray
    gram: Optional[np.ndarray] = None
    P: Optional[np.ndarray] = None
    V: Optional[np.ndarray] = None

    @property
    def rank(self) -> Optional[int]:
        return None if self.P is None else self.P.shape[1]

    def matvec(self, w: np.ndarray, d: int) -> np.ndarray:
        """G^(t) w (or C^(t) w) without materializing the dense matrix.

        The row-major upper-triangle packing equals BLAS lower-triangle
        column-major packing, so spmv applies directly.
        """
        if self.kind == "svd":
            return self.P @ (self.V.T @ w)
        return dspmv(d, 1.0, self.gram, w, lower=1)


@dataclass
class ProvenanceCache:
    fingerprint: bytes
    hp: Hyperparams
    model_kind: str
    mode: str
    epsilon: float
    t_s: Optional[int]
    n: int
    m: int
    q: int
    storage_kind: str
    w0: np.ndarray
    entries: Optional[list]
    coeffs: Optional[LinearCoeffs]
    _schedule: Optional[BatchSchedule] = None

    @property
    def param_dim(self) -> int:
        return self.m * self.q if self.model_kind == MULTINOMIAL_LOGISTIC else self.m

    def schedule(self) -> BatchSchedule:
        if self._schedule is None:
            object.__setattr__(self, "_schedule", build_schedule(self.n, self.hp))
        return self._schedule

    def check_dataset(self, ds: TrainingDataset) -> None:
        if ds.fingerprint() != self.fingerprint:
            raise CacheFormatError("fingerprint",
                                   "dataset does not match the one this cache was built from")

    def dense_matrix(self, t: int) -> np.ndarray:
        e = self.entries[t]
        if e.kind == "svd":
            return e.P @ e.V.T
        return unpack_symmetric(e.gram, self.param_dim)


def _choose_rank(s: np.ndarray, epsilon: float, cap: int) -> int:
    """Smallest r with residual spectral norm s[r] <= epsilon * s[0],
    capped by the batch-size rank bound."""
    if len(s) == 0 or s[0] == 0.0:
        return 0
    r = int(np.searchsorted(-s, -epsilon * s[0]))  # s is descending
    r = max(1, r)
    return min(r, cap, len(s))


def _svd_factors(mat: np.ndarray, epsilon: float, cap: int, t: int):
    try:
        U, s, Vt = np.linalg.svd(mat, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"SVD failed at iteration {t}: {exc}")
    r = _choose_rank(s, epsilon, cap)
    P = U[:, :r] * s[:r]
    V = Vt[:r].T
    return np.ascontiguousarray(P), np.ascontiguousarray(V)


def _logistic_cd(ds: TrainingDataset, coeffs: LinearCoeffs, batch: np.ndarray,
                 t: int) -> tuple[np.ndarray, np.ndarray]:
    """C^(t) = sum_i a_i x_i x_i^T and D^(t) = sum_i b_i y_i x_i (binary), or
    their tangent-plane analogs (multinomial)."""
    Xb = np.asarray(ds.features[batch].todense()) if sp.issparse(ds.features) \
        else ds.features[batch]
    yb = ds.labels[batch]
    if coeffs.kind == BINARY_COEFFS:
        a, b = coeffs.ab(t)
        C = (Xb * a[:, None]).T @ Xb
        D = Xb.T @ (b * yb)
        return C, np.asarray(D).ravel()
    Z = coeffs.logits[t]  # (B, q)
    S = softmax_rows(Z)
    q = S.shape[1]
    J = np.einsum("ic,id->icd", S, S)
    J *= -1.0
    J[:, np.arange(q), np.arange(q)] += S
    # J[i] = diag(s_i) - s_i s_i^T; contribution to C is -J[i] kron x x^T
    C = -np.einsum("icd,ij,ik->cjdk", J, Xb, Xb, optimize=True)
    d = q * ds.m
    C = C.reshape(d, d)
    resid = S.copy()
    resid[np.arange(len(batch)), yb.astype(np.int64)] -= 1.0
    coef = -resid + np.einsum("icd,id->ic", J, Z)
    D = np.einsum("ic,ij->cj", coef, Xb).reshape(d)
    return C, D


def capture(ds: TrainingDataset, run: TrainRun,
            coeffs: Optional[LinearCoeffs] = None,
            mode: str = DENSE_FULL, epsilon: float = 0.01,
            t_s: Optional[int] = None) -> ProvenanceCache:
    """Build the per-iteration cache from a finished training run."""
    if mode not in MODES:
        raise ConfigError(f"unknown cache mode {mode!r}")
    logistic = ds.model_kind in (BINARY_LOGISTIC, MULTINOMIAL_LOGISTIC)
    if logistic and coeffs is None:
        raise ConfigError("logistic capture needs linearization coefficients")
    if not logistic and coeffs is not None:
        raise ConfigError("linear capture takes no linearization coefficients")
    if coeffs is not None:
        want = BINARY_COEFFS if ds.model_kind == BINARY_LOGISTIC else SOFTMAX_COEFFS
        if coeffs.kind != want:
            raise ConfigError(f"coefficient kind {coeffs.kind!r} does not match the model")
    if mode == SPARSE_LINEARIZED:
        if ds.storage_kind != "sparse":
            raise ConfigError("sparse-linearized mode requires a sparse dataset")
        if not logistic:
            raise ConfigError("sparse-linearized mode applies to logistic models only")
    if t_s is not None and not (0 <= t_s <= run.hp.iterations):
        raise ConfigError(f"t_s={t_s} outside [0, tau]")

    schedule = run.schedule
    hp = run.hp
    d = ds.param_dim
    entries: Optional[list] = None
    if mode != SPARSE_LINEARIZED:
        entries = []
        cap = min(hp.batch_size, d) if ds.model_kind != MULTINOMIAL_LOGISTIC \
            else min(hp.batch_size * max(1, ds.num_classes - 1), d)
        for t in range(hp.iterations):
            batch = schedule.batch(t)
            if ds.model_kind == LINEAR:
                Xb = ds.features[batch]
                Xb = np.asarray(Xb.todense()) if sp.issparse(Xb) else Xb
                G = Xb.T @ Xb
                g = np.asarray(Xb.T @ ds.labels[batch]).ravel()
            else:
                G, g = _logistic_cd(ds, coeffs, batch, t)
            if mode == DENSE_FULL:
                entries.append(IterationEntry("dense", g, gram=pack_symmetric(G)))
            else:
                P, V = _svd_factors(G, epsilon, cap, t)
                entries.append(IterationEntry("svd", g, P=P, V=V))

    return ProvenanceCache(
        fingerprint=ds.fingerprint(),
        hp=hp,
        model_kind=ds.model_kind,
        mode=mode,
        epsilon=epsilon,
        t_s=t_s,
        n=ds.n,
        m=ds.m,
        q=ds.num_classes if ds.model_kind == MULTINOMIAL_LOGISTIC else 1,
        storage_kind=ds.storage_kind,
        w0=np.asarray(run.w0, dtype=np.float64),
        entries=entries,
        coeffs=coeffs,
    )


# ---------------------------------------------------------------------------
# Binary serialization

_MODEL_CODE = {LINEAR: 0, BINARY_LOGISTIC: 1, MULTINOMIAL_LOGISTIC: 2}
_MODE_CODE = {DENSE_FULL: 0, DENSE_SVD: 1, SPARSE_LINEARIZED: 2}
_COEFF_CODE = {None: 0, BINARY_COEFFS: 1, SOFTMAX_COEFFS: 2}


def _pad8(n: int) -> int:
    return (-n) % 8


class _Writer:
    def __init__(self, fh):
        self.fh = fh

    def chunk(self, iteration: int, kind: int, payload: bytes):
        self.fh.write(struct.pack(_CHUNK_FMT, iteration, kind, len(payload)))
        self.fh.write(payload)
        self.fh.write(b"\0" * _pad8(len(payload)))


def _vec_payload(*arrays) -> bytes:
    parts = []
    for a in arrays:
        a = np.ascontiguousarray(a)
        parts.append(struct.pack("<Q", a.size))
        parts.append(a.tobytes())
    return b"".join(parts)


def save_cache(cache: ProvenanceCache, path: str) -> None:
    coeff_kind = None if cache.coeffs is None else cache.coeffs.kind
    table = cache.coeffs.table if cache.coeffs is not None else InterpolationTable()
    try:
        fh_ctx = open(path, "wb")
    except OSError as exc:
        raise DataError(f"cannot write {path}: {exc}")
    with fh_ctx as fh:
        fh.write(struct.pack(
            _HEADER_FMT, MAGIC, VERSION, 1 if cache.t_s is not None else 0,
            cache.fingerprint, cache.n, cache.m, cache.q,
            _MODEL_CODE[cache.model_kind], _MODE_CODE[cache.mode],
            0 if cache.storage_kind == "dense" else 1, _COEFF_CODE[coeff_kind],
            cache.hp.eta, cache.hp.lam, cache.hp.batch_size, cache.hp.iterations,
            cache.hp.seed, cache.epsilon,
            -1 if cache.t_s is None else cache.t_s,
            table.a_bound, table.segments))
        w = _Writer(fh)
        w.chunk(0, _KIND_W0, _vec_payload(cache.w0))
        for t in range(cache.hp.iterations):
            if cache.entries is not None:
                e = cache.entries[t]
                if e.kind == "dense":
                    kind = _KIND_LINEAR_DENSE if cache.model_kind == LINEAR \
                        else _KIND_LOGISTIC_DENSE
                    w.chunk(t, kind, _vec_payload(e.gram, e.moment))
                else:
                    kind = _KIND_LINEAR_SVD if cache.model_kind == LINEAR \
                        else _KIND_LOGISTIC_SVD
                    payload = struct.pack("<Q", e.rank) + _vec_payload(e.P, e.V, e.moment)
                    w.chunk(t, kind, payload)
            if cache.coeffs is not None:
                if cache.coeffs.kind == BINARY_COEFFS:
                    seg = cache.coeffs.segment_indices[t].astype(np.int32)
                    w.chunk(t, _KIND_COEFF_SEGMENTS, _vec_payload(seg))
                else:
                    z = cache.coeffs.logits[t].astype(np.float64)
                    payload = struct.pack("<Q", z.shape[1]) + _vec_payload(z)
                    w.chunk(t, _KIND_COEFF_SOFTMAX, payload)


class _Reader:
    def __init__(self, data: bytes, offset: int):
        self.data = data
        self.off = offset

    def eof(self) -> bool:
        return self.off >= len(self.data)

    def take(self, n: int) -> bytes:
        if self.off + n > len(self.data):
            raise CacheFormatError("truncated", "file ends inside a chunk")
        out = self.data[self.off:self.off + n]
        self.off += n
        return out

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]

    def vec(self, dtype) -> np.ndarray:
        count = self.u64()
        raw = self.take(count * np.dtype(dtype).itemsize)
        return np.frombuffer(raw, dtype=dtype).copy()


def load_cache(path: str) -> ProvenanceCache:
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}")
    if len(data) < _HEADER_SIZE:
        raise CacheFormatError("truncated", "file shorter than the header")
    (magic, version, flags, fingerprint, n, m, q, model_code, mode_code,
     storage_code, coeff_code, eta, lam, batch_size, iterations, seed,
     epsilon, t_s, a_bound, segments) = struct.unpack_from(_HEADER_FMT, data)
    if magic != MAGIC:
        raise CacheFormatError("bad-magic", f"expected {MAGIC!r}, found {magic!r}")
    if version != VERSION:
        raise CacheFormatError("version", f"unsupported format version {version}")
    model_kind = {v: k for k, v in _MODEL_CODE.items()}[model_code]
    mode = {v: k for k, v in _MODE_CODE.items()}[mode_code]
    hp = Hyperparams(eta, lam, batch_size, iterations, seed, model_kind)
    table = InterpolationTable(a_bound, segments)

    w0 = None
    entries: Optional[list] = None if mode == SPARSE_LINEARIZED else [None] * iterations
    seg_rows: list = [None] * iterations
    logit_rows: list = [None] * iterations
    d = m * q if model_kind == MULTINOMIAL_LOGISTIC else m

    r = _Reader(data, _HEADER_SIZE)
    while not r.eof():
        it, kind, plen = struct.unpack(_CHUNK_FMT, r.take(_CHUNK_SIZE))
        body = _Reader(r.take(plen), 0)
        r.take(_pad8(plen))
        if kind != _KIND_W0 and it >= iterations:
            raise CacheFormatError("truncated", f"chunk for iteration {it} beyond tau")
        if kind == _KIND_W0:
            w0 = body.vec(np.float64)
        elif kind in (_KIND_LINEAR_DENSE, _KIND_LOGISTIC_DENSE):
            gram = body.vec(np.float64)
            moment = body.vec(np.float64)
            entries[it] = IterationEntry("dense", moment, gram=gram)
        elif kind in (_KIND_LINEAR_SVD, _KIND_LOGISTIC_SVD):
            rank = body.u64()
            P = body.vec(np.float64).reshape(d, rank)
            V = body.vec(np.float64).reshape(d, rank)
            moment = body.vec(np.float64)
            entries[it] = IterationEntry("svd", moment, P=P, V=V)
        elif kind == _KIND_COEFF_SEGMENTS:
            seg_rows[it] = body.vec(np.int32).astype(np.int64)
        elif kind == _KIND_COEFF_SOFTMAX:
            qq = body.u64()
            logit_rows[it] = body.vec(np.float64).reshape(-1, qq)
        else:
            raise CacheFormatError("truncated", f"unknown chunk kind {kind}")

    if w0 is None:
        raise CacheFormatError("missing-chunk", "no initial-parameter chunk")
    coeffs = None
    if coeff_code == 1:
        if any(s is None for s in seg_rows):
            raise CacheFormatError("missing-chunk", "missing coefficient chunks")
        coeffs = LinearCoeffs(BINARY_COEFFS, table,
                              segment_indices=np.stack(seg_rows))
    elif coeff_code == 2:
        if any(z is None for z in logit_rows):
            raise CacheFormatError("missing-chunk", "missing coefficient chunks")
        coeffs = LinearCoeffs(SOFTMAX_COEFFS, table, logits=np.stack(logit_rows))
    if entries is not None and any(e is None for e in entries):
        raise CacheFormatError("missing-chunk", "missing per-iteration chunks")

    return ProvenanceCache(
        fingerprint=fingerprint, hp=hp, model_kind=model_kind, mode=mode,
        epsilon=epsilon, t_s=None if t_s < 0 else t_s, n=n, m=m, q=q,
        storage_kind="dense" if storage_code == 0 else "sparse",
        w0=w0, entries=entries, coeffs=coeffs)


def cache_stats(cache: ProvenanceCache) -> dict:
    """Byte accounting per section plus the analytic O(tau * r * m) figure."""
    d = cache.param_dim
    tau = cache.hp.iterations
    stats = {"header_bytes": _HEADER_SIZE,
             "w0_bytes": cache.w0.size * 8,
             "matrix_bytes": 0, "moment_bytes": 0, "coeff_bytes": 0,
             "iterations": tau, "average_rank": None}
    if cache.entries is not None:
        ranks = []
        for e in cache.entries:
            stats["moment_bytes"] += e.moment.size * 8
            if e.kind == "dense":
                stats["matrix_bytes"] += e.gram.size * 8
                ranks.append(d)
            else:
                stats["matrix_bytes"] += (e.P.size + e.V.size) * 8
                ranks.append(e.rank)
        stats["average_rank"] = float(np.mean(ranks)) if ranks else 0.0
        stats["analytic_factor_bytes"] = int(tau * (stats["average_rank"] or 0) * d * 8 * 2)
    if cache.coeffs is not None:
        if cache.coeffs.kind == BINARY_COEFFS:
            stats["coeff_bytes"] = cache.coeffs.segment_indices.size * 4
        else:
            stats["coeff_bytes"] = cache.coeffs.logits.size * 8
    stats["total_bytes"] = (stats["header_bytes"] + stats["w0_bytes"] +
                            stats["matrix_bytes"] + stats["moment_bytes"] +
                            stats["coeff_bytes"])
    return stats
