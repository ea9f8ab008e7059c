"""Symbolic provenance-semiring layer: polynomials over row tokens and
token-annotated matrices.

This is the small-instance correctness oracle for the incremental update
paths. Polynomials live in N[T]; the idempotent mode quotients token
exponents to 1 on every multiplication, which is what makes the annotated
training iteration convergent. The non-idempotent mode exists only to
demonstrate divergence of the unquotiented iteration and is capped at 12
iterations.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Optional

import numpy as np

from .core import (BINARY_LOGISTIC, LINEAR, BatchSchedule, DeletionRequest,
                   Hyperparams, TrainingDataset)
from .errors import ConfigError, SymbolicLimitError
from .linearizer import BINARY_COEFFS, LinearCoeffs

# A monomial is a sorted tuple of (token, exponent) pairs; () is degree zero.
Monomial = tuple

TERM_CAP = 1_000_000
NON_IDEMPOTENT_ITER_CAP = 12


def _mono_mul(a: Monomial, b: Monomial, idempotent: bool) -> Monomial:
    exps = dict(a)
    for tok, e in b:
        exps[tok] = exps.get(tok, 0) + e
    if idempotent:
        return tuple(sorted((tok, 1) for tok in exps))
    return tuple(sorted(exps.items()))


def _mono_str(m: Monomial) -> str:
    if not m:
        return "1"
    return "*".join(f"p{tok}" if e == 1 else f"p{tok}^{e}" for tok, e in m)


def _canonical(terms: Mapping[Monomial, int]) -> tuple:
    return tuple(sorted((m, c) for m, c in terms.items() if c != 0))


@dataclass(frozen=True)
class ProvPolynomial:
    """Polynomial in N[T], canonically ordered so equality is structural."""

    terms: tuple
    idempotent: bool = True

    @staticmethod
    def from_dict(d: Mapping[Monomial, int], idempotent: bool = True) -> "ProvPolynomial":
        if idempotent:
            collapsed: dict = {}
            for m, c in d.items():
                key = tuple(sorted((tok, 1) for tok, _ in m))
                collapsed[key] = collapsed.get(key, 0) + c
            d = collapsed
        return ProvPolynomial(_canonical(d), idempotent)

    @staticmethod
    def zero(idempotent: bool = True) -> "ProvPolynomial":
        return ProvPolynomial((), idempotent)

    @staticmethod
    def one(idempotent: bool = True) -> "ProvPolynomial":
        return ProvPolynomial((((), 1),), idempotent)

    @staticmethod
    def token(tok: int, idempotent: bool = True) -> "ProvPolynomial":
        return ProvPolynomial(((((tok, 1),), 1),), idempotent)

    @property
    def is_zero(self) -> bool:
        return not self.terms

    def tokens(self) -> set:
        return {tok for m, _ in self.terms for tok, _ in m}

    def __str__(self) -> str:
        if self.is_zero:
            return "0"
        parts = []
        for m, c in self.terms:
            body = _mono_str(m)
            if c == 1:
                parts.append(body)
            elif body == "1":
                parts.append(str(c))
            else:
                parts.append(f"{c}*{body}")
        return " + ".join(parts)


def _check_mode(a: ProvPolynomial, b: ProvPolynomial) -> None:
    if a.idempotent != b.idempotent:
        raise ConfigError("cannot mix idempotent and non-idempotent polynomials")


def poly_add(a: ProvPolynomial, b: ProvPolynomial) -> ProvPolynomial:
    _check_mode(a, b)
    out = dict(a.terms)
    for m, c in b.terms:
        out[m] = out.get(m, 0) + c
    return ProvPolynomial(_canonical(out), a.idempotent)


def poly_mul(a: ProvPolynomial, b: ProvPolynomial) -> ProvPolynomial:
    _check_mode(a, b)
    out: dict = {}
    for ma, ca in a.terms:
        for mb, cb in b.terms:
            m = _mono_mul(ma, mb, a.idempotent)
            out[m] = out.get(m, 0) + ca * cb
    return ProvPolynomial(_canonical(out), a.idempotent)


class AnnotatedMatrix:
    """Formal sum of (monomial, matrix) terms of one common shape.

    A general polynomial annotation p*A is normalized by folding numeric
    coefficients into the matrices, so each stored term is keyed by a
    distinct monomial. Terms whose matrix is all-zero are dropped.
    """

    __slots__ = ("shape", "terms", "idempotent")

    def __init__(self, shape: tuple, terms: Mapping[Monomial, np.ndarray],
                 idempotent: bool = True):
        self.shape = tuple(shape)
        kept = {}
        for m, mat in terms.items():
            mat = np.asarray(mat, dtype=np.float64)
            if mat.shape != self.shape:
                raise ConfigError(f"term shape {mat.shape} != expression shape {self.shape}")
            if np.any(mat != 0.0):
                kept[m] = mat
        self.terms = kept
        self.idempotent = idempotent

    @staticmethod
    def annotate(poly: ProvPolynomial, matrix: np.ndarray) -> "AnnotatedMatrix":
        matrix = np.asarray(matrix, dtype=np.float64)
        terms: dict = {}
        for m, c in poly.terms:
            terms[m] = terms.get(m, np.zeros(matrix.shape)) + c * matrix
        return AnnotatedMatrix(matrix.shape, terms, poly.idempotent)

    def num_terms(self) -> int:
        return len(self.terms)

    def monomials(self) -> list:
        return sorted(self.terms)

    def term(self, monomial: Monomial) -> Optional[np.ndarray]:
        return self.terms.get(tuple(monomial))

    def tokens(self) -> set:
        return {tok for m in self.terms for tok, _ in m}

    def render(self) -> str:
        """Canonical one-line rendering used by golden-file tests."""
        if not self.terms:
            return "0"
        parts = []
        for m in sorted(self.terms):
            mat = self.terms[m]
            body = np.array2string(mat.ravel(), precision=6, separator=",",
                                   suppress_small=True)
            parts.append(f"{_mono_str(m)}*{body}")
        return " + ".join(parts)


def annot_add(a: AnnotatedMatrix, b: AnnotatedMatrix) -> AnnotatedMatrix:
    if a.idempotent != b.idempotent:
        raise ConfigError("cannot mix idempotent modes")
    if a.shape != b.shape:
        raise ConfigError(f"shape mismatch in annotated addition: {a.shape} vs {b.shape}")
    out = dict(a.terms)
    for m, mat in b.terms.items():
        out[m] = out[m] + mat if m in out else mat
    return AnnotatedMatrix(a.shape, out, a.idempotent)


def annot_mul(a: AnnotatedMatrix, b: AnnotatedMatrix, term_cap: int = TERM_CAP) -> AnnotatedMatrix:
    if a.idempotent != b.idempotent:
        raise ConfigError("cannot mix idempotent modes")
    if a.shape[1] != b.shape[0]:
        raise ConfigError(f"inner dimensions disagree: {a.shape} x {b.shape}")
    out: dict = {}
    for ma, A in a.terms.items():
        for mb, B in b.terms.items():
            m = _mono_mul(ma, mb, a.idempotent)
            prod = A @ B
            out[m] = out[m] + prod if m in out else prod
            if len(out) > term_cap:
                raise SymbolicLimitError(f"term count exceeded the cap of {term_cap}")
    return AnnotatedMatrix((a.shape[0], b.shape[1]), out, a.idempotent)


def specialize(expr: AnnotatedMatrix, assignment: Mapping[int, int]) -> np.ndarray:
    """Set each token to 0_prov or 1_prov; drop terms touching a zeroed
    token, sum the rest."""
    missing = expr.tokens() - set(assignment)
    if missing:
        raise ConfigError(f"unassigned tokens in specialization: {sorted(missing)}")
    for tok, v in assignment.items():
        if v not in (0, 1):
            raise ConfigError(f"token p{tok} must map to 0 or 1, got {v!r}")
    acc = np.zeros(expr.shape)
    for m, mat in expr.terms.items():
        if all(assignment.get(tok, 1) == 1 for tok, _ in m):
            acc = acc + mat
    return acc


def symbolic_train(ds: TrainingDataset, hp: Hyperparams, schedule: BatchSchedule,
                   linearizer_coeffs: Optional[LinearCoeffs] = None,
                   removed: Optional[DeletionRequest] = None,
                   idempotent: bool = True,
                   w0: Optional[np.ndarray] = None,
                   max_samples: int = 6, max_iterations: int = 4,
                   term_cap: int = TERM_CAP) -> AnnotatedMatrix:
    """Unroll the annotated update rule and return the expression for the
    final parameters over the dataset's tokens.

    The per-iteration divisor is the survivor count of that batch (an
    integer once ``removed`` is fixed; the symbolic layer never divides
    polynomials). Removed samples' terms are dropped here, so specializing
    their tokens to zero afterwards is a no-op, and the remaining tokens
    stay symbolic for finer-grained specialization.
    """
    if ds.n > max_samples or hp.iterations > max_iterations:
        raise SymbolicLimitError(
            f"instance (n={ds.n}, tau={hp.iterations}) exceeds the symbolic "
            f"limit (n<={max_samples}, tau<={max_iterations})")
    if not idempotent and hp.iterations > NON_IDEMPOTENT_ITER_CAP:
        raise SymbolicLimitError(
            f"non-idempotent mode is capped at {NON_IDEMPOTENT_ITER_CAP} iterations")
    if ds.model_kind == BINARY_LOGISTIC and linearizer_coeffs is None:
        raise ConfigError("binary logistic needs linearization coefficients")
    if linearizer_coeffs is not None and linearizer_coeffs.kind != BINARY_COEFFS:
        raise ConfigError("symbolic training supports scalar coefficients only")
    if ds.model_kind not in (LINEAR, BINARY_LOGISTIC):
        raise ConfigError(f"symbolic training unsupported for {ds.model_kind}")
    if hp.eta is None:
        raise ConfigError("symbolic training needs an explicit learning rate")

    m = ds.m
    X, y, toks = np.asarray(ds.features), ds.labels, ds.tokens
    removed_rows = set() if removed is None else set(int(i) for i in removed.removed)
    eta, lam = hp.eta, hp.lam
    one = ProvPolynomial.one(idempotent)
    w_start = np.zeros((m, 1)) if w0 is None else np.asarray(w0, dtype=np.float64).reshape(m, 1)
    W = AnnotatedMatrix.annotate(one, w_start)

    for t in range(hp.iterations):
        survivors = [int(i) for i in schedule.batch(t) if int(i) not in removed_rows]
        bu = len(survivors)
        M = AnnotatedMatrix.annotate(one, (1.0 - eta * lam) * np.eye(m))
        v = AnnotatedMatrix((m, 1), {}, idempotent)
        if ds.model_kind == BINARY_LOGISTIC:
            a_t, b_t = linearizer_coeffs.ab(t)
        for pos, i in enumerate(schedule.batch(t)):
            i = int(i)
            if i in removed_rows:
                continue
            p2 = poly_mul(ProvPolynomial.token(int(toks[i]), idempotent),
                          ProvPolynomial.token(int(toks[i]), idempotent))
            xi = X[i].reshape(m, 1)
            if ds.model_kind == LINEAR:
                gram = AnnotatedMatrix.annotate(p2, (-2.0 * eta / bu) * (xi @ xi.T))
                mom = AnnotatedMatrix.annotate(p2, (2.0 * eta / bu) * xi * y[i])
            else:
                gram = AnnotatedMatrix.annotate(p2, (eta / bu) * float(a_t[pos]) * (xi @ xi.T))
                mom = AnnotatedMatrix.annotate(p2, (eta / bu) * float(b_t[pos]) * y[i] * xi)
            M = annot_add(M, gram)
            v = annot_add(v, mom)
        W = annot_add(annot_mul(M, W, term_cap), v)
        if W.num_terms() > term_cap:
            raise SymbolicLimitError(f"term count exceeded the cap of {term_cap}")
    return W
