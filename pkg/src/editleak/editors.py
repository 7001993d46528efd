"""Closed-form locate-then-edit updates: ROME, MEMIT and AlphaEdit.

Each method has an array-level ``*_delta`` function taking raw (K, R) and a
batch-level ``*_update`` wrapper returning a WeightUpdate. MEMIT and AlphaEdit
also come in a Woodbury form that only inverts an N x N matrix.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence, Union

import numpy as np
import scipy.linalg

from .errors import (
    DegenerateProjectionError,
    InvalidInputError,
    NotSPDError,
    SingularSystemError,
)
from .matcore import (
    as_matrix,
    as_vector,
    check_symmetric,
    cholesky,
    default_rank_tol,
    matrix_rank,
    max_abs,
    solve_spd,
    svd_thin,
    numerical_rank,
)


class Method(str, Enum):
    ROME = "ROME"
    MEMIT = "MEMIT"
    ALPHAEDIT = "ALPHAEDIT"

    @classmethod
    def parse(cls, value) -> "Method":
        if isinstance(value, Method):
            return value
        try:
            return cls(str(value).upper())
        except ValueError:
            raise InvalidInputError(f"unknown method {value!r}") from None


@dataclass(frozen=True)
class Covariance:
    c: np.ndarray

    def __post_init__(self):
        c = as_matrix(self.c, "covariance")
        check_symmetric(c, name="covariance")
        cholesky(c)
        object.__setattr__(self, "c", c)

    @property
    def dim(self) -> int:
        return self.c.shape[0]

    def solve(self, b) -> np.ndarray:
        return solve_spd(self.c, b)


@dataclass(frozen=True)
class Projector:
    p: np.ndarray

    def __post_init__(self):
        p = as_matrix(self.p, "projector")
        check_symmetric(p, name="projector")
        if max_abs(p @ p - p) > 1e-8:
            raise InvalidInputError("projector is not idempotent")
        object.__setattr__(self, "p", p)

    @property
    def dim(self) -> int:
        return self.p.shape[0]


@dataclass(frozen=True)
class EditBatch:
    """One single-time edit: N (subject, template, object) triples with K and R.

    K must have full column rank. R must too, except for the null edit R = 0.
    """

    subject_ids: Sequence[int]
    template_ids: Sequence[int]
    object_token_ids: Sequence[int]
    k: np.ndarray
    r: np.ndarray

    def __post_init__(self):
        k = as_matrix(self.k, "k")
        r = as_matrix(self.r, "r")
        n = k.shape[1]
        if r.shape[1] != n:
            raise InvalidInputError(f"k has {n} columns but r has {r.shape[1]}")
        for name in ("subject_ids", "template_ids", "object_token_ids"):
            ids = tuple(int(i) for i in getattr(self, name))
            if len(ids) != n:
                raise InvalidInputError(f"{name} has length {len(ids)}, expected {n}")
            object.__setattr__(self, name, ids)
        if matrix_rank(k) != n:
            raise InvalidInputError("key matrix k must have full column rank")
        if max_abs(r) > 0 and matrix_rank(r) != n:
            raise InvalidInputError("residual matrix r must have full column rank")
        object.__setattr__(self, "k", k)
        object.__setattr__(self, "r", r)

    @property
    def n(self) -> int:
        return self.k.shape[1]

    @classmethod
    def from_matrices(cls, k, r) -> "EditBatch":
        """Batch with placeholder ids, for algebra that only needs K and R."""
        n = as_matrix(k).shape[1]
        ids = list(range(n))
        return cls(ids, [0] * n, [0] * n, k, r)


@dataclass(frozen=True)
class WeightUpdate:
    dw: np.ndarray
    method: Method = field(default=Method.MEMIT)

    def __post_init__(self):
        object.__setattr__(self, "dw", as_matrix(self.dw, "dw"))
        object.__setattr__(self, "method", Method.parse(self.method))


CovOrProj = Union[Covariance, Projector]


def _dw_of(dw) -> np.ndarray:
    return dw.dw if isinstance(dw, WeightUpdate) else as_matrix(dw, "dw")


def _check_kr(k, r, d_in: int) -> tuple[np.ndarray, np.ndarray]:
    k = as_matrix(k, "k")
    r = as_matrix(r, "r")
    if k.shape[0] != d_in:
        raise InvalidInputError(f"keys have dimension {k.shape[0]}, expected {d_in}")
    if k.shape[1] != r.shape[1]:
        raise InvalidInputError("k and r must have the same number of columns")
    return k, r


def default_ridge(kp: np.ndarray) -> float:
    d_in, m = kp.shape
    if m >= d_in:
        return 0.0
    return 1e-6 * float(np.sum(kp * kp)) / d_in


def covariance_from_keys(kp, ridge: float | None = None) -> Covariance:
    """C = Kp Kp^T + ridge I. With ridge=None a small ridge is added when M < d_in."""
    kp = as_matrix(kp, "kp")
    if ridge is None:
        ridge = default_ridge(kp)
    if ridge < 0:
        raise InvalidInputError("ridge must be nonnegative")
    c = kp @ kp.T
    c = 0.5 * (c + c.T) + ridge * np.eye(kp.shape[0])
    return Covariance(c)


def nullspace_projector(kp, rel_tol: float | None = None) -> Projector:
    """Orthogonal projector onto the complement of col(Kp)."""
    kp = as_matrix(kp, "kp")
    res = svd_thin(kp)
    if rel_tol is None:
        rel_tol = default_rank_tol(kp.shape)
    q = res.u[:, : numerical_rank(res.sigma, rel_tol)]
    p = np.eye(kp.shape[0]) - q @ q.T
    return Projector(0.5 * (p + p.T))


# ROME

def rome_delta(k_star, r_star, c: Covariance) -> np.ndarray:
    k = as_vector(k_star, "k_star")
    r = as_vector(r_star, "r_star")
    if k.size != c.dim:
        raise InvalidInputError(f"k_star has dimension {k.size}, expected {c.dim}")
    if not np.any(k):
        raise InvalidInputError("k_star must be nonzero")
    x = c.solve(k)
    denom = float(k @ x)
    if denom <= 0:
        raise NotSPDError("k^T C^-1 k is not positive")
    return np.outer(r, x) / denom


def rome_update(k_star, r_star, c: Covariance) -> WeightUpdate:
    return WeightUpdate(rome_delta(k_star, r_star, c), Method.ROME)


# MEMIT

def memit_delta(k, r, c: Covariance) -> np.ndarray:
    """R K^T (C + K K^T)^-1, solved against the SPD matrix C + K K^T."""
    k, r = _check_kr(k, r, c.dim)
    a = c.c + k @ k.T
    x = solve_spd(0.5 * (a + a.T), k)
    return r @ x.T


def memit_delta_woodbury(k, r, c: Covariance) -> np.ndarray:
    """R (I + K^T C^-1 K)^-1 K^T C^-1."""
    k, r = _check_kr(k, r, c.dim)
    y = c.solve(k)
    inner = np.eye(k.shape[1]) + k.T @ y
    try:
        z = solve_spd(0.5 * (inner + inner.T), y.T)
    except NotSPDError:
        raise SingularSystemError("I + K^T C^-1 K is singular") from None
    return r @ z


def memit_update(batch: EditBatch, c: Covariance) -> WeightUpdate:
    return WeightUpdate(memit_delta(batch.k, batch.r, c), Method.MEMIT)


def memit_update_woodbury(batch: EditBatch, c: Covariance) -> WeightUpdate:
    return WeightUpdate(memit_delta_woodbury(batch.k, batch.r, c), Method.MEMIT)


# AlphaEdit

def _projected_keys(k: np.ndarray, p: Projector) -> np.ndarray | None:
    """P K, or None when it vanishes. Raises if it is nonzero but rank deficient."""
    pk = p.p @ k
    if max_abs(pk) <= 1e-14 * (1.0 + max_abs(k)):
        return None
    if matrix_rank(pk) < k.shape[1]:
        raise DegenerateProjectionError("rank(P K) is below the number of edits")
    return pk


def alphaedit_delta(k, r, p: Projector) -> np.ndarray:
    """R K^T P (K K^T P + I)^-1 in the direct d_in x d_in form."""
    k, r = _check_kr(k, r, p.dim)
    if _projected_keys(k, p) is None:
        return np.zeros((r.shape[0], k.shape[0]))
    a = k @ k.T @ p.p + np.eye(k.shape[0])
    rhs = r @ k.T @ p.p
    # X A = rhs  <=>  A^T X^T = rhs^T
    return scipy.linalg.solve(a.T, rhs.T, check_finite=False).T


def alphaedit_delta_woodbury(k, r, p: Projector) -> np.ndarray:
    """R (I + K^T P K)^-1 K^T P."""
    k, r = _check_kr(k, r, p.dim)
    pk = _projected_keys(k, p)
    if pk is None:
        return np.zeros((r.shape[0], k.shape[0]))
    inner = np.eye(k.shape[1]) + k.T @ pk
    try:
        z = solve_spd(0.5 * (inner + inner.T), pk.T)
    except NotSPDError:
        raise SingularSystemError("I + K^T P K is singular") from None
    return r @ z


def alphaedit_update(batch: EditBatch, p: Projector) -> WeightUpdate:
    return WeightUpdate(alphaedit_delta(batch.k, batch.r, p), Method.ALPHAEDIT)


def alphaedit_update_woodbury(batch: EditBatch, p: Projector) -> WeightUpdate:
    return WeightUpdate(alphaedit_delta_woodbury(batch.k, batch.r, p), Method.ALPHAEDIT)


def method_delta(method, k, r, c_or_p: CovOrProj) -> np.ndarray:
    """Update of the named method for raw (K, R); ROME takes a single column."""
    method = Method.parse(method)
    if method is Method.ALPHAEDIT:
        if not isinstance(c_or_p, Projector):
            raise InvalidInputError("AlphaEdit needs a Projector")
        return alphaedit_delta_woodbury(k, r, c_or_p)
    if not isinstance(c_or_p, Covariance):
        raise InvalidInputError(f"{method.value} needs a Covariance")
    if method is Method.ROME:
        k = as_matrix(k, "k")
        if k.shape[1] != 1:
            raise InvalidInputError("ROME edits exactly one fact")
        return rome_delta(k[:, 0], as_matrix(r, "r")[:, 0], c_or_p)
    return memit_delta(k, r, c_or_p)


def apply_method(method, batch: EditBatch, c_or_p: CovOrProj) -> WeightUpdate:
    method = Method.parse(method)
    if method is Method.ALPHAEDIT:
        if not isinstance(c_or_p, Projector):
            raise InvalidInputError("AlphaEdit needs a Projector")
        return alphaedit_update(batch, c_or_p)
    if not isinstance(c_or_p, Covariance):
        raise InvalidInputError(f"{method.value} needs a Covariance")
    if method is Method.ROME:
        if batch.n != 1:
            raise InvalidInputError("ROME edits exactly one fact")
        return rome_update(batch.k[:, 0], batch.r[:, 0], c_or_p)
    return memit_update(batch, c_or_p)
