"""Dense linear-algebra kernel.

Matrices are plain float64 numpy arrays. Everything here is a pure function;
the only state is numpy's own LAPACK bindings.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, TextIO

import numpy as np
import scipy.linalg

from .errors import InvalidInputError, NotSPDError

EPS = 2.2e-16


@dataclass(frozen=True)
class SvdResult:
    u: np.ndarray
    sigma: np.ndarray
    v: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return (self.u * self.sigma) @ self.v.T


def as_matrix(m, name: str = "matrix") -> np.ndarray:
    """Coerce to a 2-D float64 array with finite entries."""
    a = np.asarray(m, dtype=np.float64)
    if a.ndim == 1:
        a = a.reshape(-1, 1)
    if a.ndim != 2:
        raise InvalidInputError(f"{name} must be 2-D, got shape {a.shape}")
    if a.shape[0] < 1 or a.shape[1] < 1:
        raise InvalidInputError(f"{name} must have at least one row and column")
    if not np.all(np.isfinite(a)):
        raise InvalidInputError(f"{name} has non-finite entries")
    return a


def as_vector(x, name: str = "vector") -> np.ndarray:
    a = np.asarray(x, dtype=np.float64)
    if a.ndim == 2 and 1 in a.shape:
        a = a.ravel()
    if a.ndim != 1 or a.size == 0:
        raise InvalidInputError(f"{name} must be a nonempty vector, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise InvalidInputError(f"{name} has non-finite entries")
    return a


def default_rank_tol(shape: tuple[int, ...]) -> float:
    """Relative rank threshold max(rows, cols) * eps * 1e3."""
    return max(shape) * EPS * 1e3


def svd_thin(m) -> SvdResult:
    """Thin SVD with a fixed sign convention.

    In each column of V the entry of largest magnitude is made nonnegative
    (first such row on ties) and the matching column of U is flipped too.
    """
    a = as_matrix(m)
    u, s, vt = np.linalg.svd(a, full_matrices=False)
    v = vt.T.copy()
    pivot = np.argmax(np.abs(v), axis=0)
    signs = np.where(v[pivot, np.arange(v.shape[1])] < 0, -1.0, 1.0)
    return SvdResult(u=u * signs, sigma=s, v=v * signs)


def numerical_rank(sigma, rel_tol: float | None = None) -> int:
    """Count singular values above rel_tol * sigma_1."""
    s = np.asarray(sigma, dtype=np.float64).ravel()
    if s.size == 0:
        return 0
    if not np.all(np.isfinite(s)) or np.any(s < 0):
        raise InvalidInputError("singular values must be finite and nonnegative")
    if np.any(np.diff(s) > 0):
        raise InvalidInputError("singular values must be sorted nonincreasing")
    if rel_tol is None:
        rel_tol = default_rank_tol((s.size,))
    if rel_tol <= 0:
        raise InvalidInputError("rel_tol must be positive")
    if s[0] == 0:
        return 0
    return int(np.count_nonzero(s > rel_tol * s[0]))


def matrix_rank(m, rel_tol: float | None = None) -> int:
    a = as_matrix(m)
    if rel_tol is None:
        rel_tol = default_rank_tol(a.shape)
    return numerical_rank(np.linalg.svd(a, compute_uv=False), rel_tol)


def check_symmetric(a: np.ndarray, tol: float = 1e-8, name: str = "matrix") -> None:
    if a.shape[0] != a.shape[1]:
        raise InvalidInputError(f"{name} must be square, got {a.shape}")
    scale = np.max(np.abs(a))
    if np.max(np.abs(a - a.T)) > tol * max(scale, np.finfo(float).tiny):
        raise InvalidInputError(f"{name} is not symmetric")


def cholesky(a) -> tuple:
    """Cholesky factor of an SPD matrix, raising NotSPDError on failure."""
    a = as_matrix(a)
    check_symmetric(a)
    try:
        return scipy.linalg.cho_factor(a, lower=True, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise NotSPDError(f"matrix is not positive definite: {exc}") from None


def solve_spd(a, b) -> np.ndarray:
    """Solve A X = B for symmetric positive definite A via Cholesky."""
    a = as_matrix(a, "a")
    b_arr = np.asarray(b, dtype=np.float64)
    vec = b_arr.ndim == 1
    b2 = as_matrix(b_arr, "b")
    if b2.shape[0] != a.shape[0]:
        raise InvalidInputError(f"shape mismatch: a is {a.shape}, b is {b2.shape}")
    factor = cholesky(a)
    x = scipy.linalg.cho_solve(factor, b2, check_finite=False)
    return x.ravel() if vec else x


def _check_orthonormal(u: np.ndarray, name: str, tol: float = 1e-8) -> None:
    gram = u.T @ u
    if np.max(np.abs(gram - np.eye(u.shape[1]))) > tol:
        raise InvalidInputError(f"{name} does not have orthonormal columns")


def principal_angles(u1, u2) -> np.ndarray:
    """Principal angles between col(u1) and col(u2), nondecreasing, in radians."""
    a = as_matrix(u1, "u1")
    b = as_matrix(u2, "u2")
    if a.shape != b.shape:
        raise InvalidInputError(f"bases must have equal shape, got {a.shape} and {b.shape}")
    _check_orthonormal(a, "u1")
    _check_orthonormal(b, "u2")
    s = np.linalg.svd(a.T @ b, compute_uv=False)
    return np.sort(np.arccos(np.clip(s, 0.0, 1.0)))


def orth_basis(m, rel_tol: float | None = None) -> np.ndarray:
    """Orthonormal basis of col(m), truncated at the numerical rank."""
    a = as_matrix(m)
    res = svd_thin(a)
    if rel_tol is None:
        rel_tol = default_rank_tol(a.shape)
    r = numerical_rank(res.sigma, rel_tol)
    return res.u[:, :r]


def spectral_norm(m) -> float:
    a = as_matrix(m)
    return float(np.linalg.svd(a, compute_uv=False)[0])


def max_abs(m) -> float:
    return float(np.max(np.abs(m))) if np.size(m) else 0.0


def rel_gap(a, b) -> float:
    """max|a - b| / (1 + max|a|), the comparison used by every check."""
    return max_abs(np.asarray(a) - np.asarray(b)) / (1.0 + max_abs(a))


# Text format: "rows cols" header, then one whitespace-separated line per row.

def format_matrix(m) -> str:
    a = as_matrix(m)
    lines = [f"{a.shape[0]} {a.shape[1]}"]
    lines += [" ".join(repr(float(x)) for x in row) for row in a]
    return "\n".join(lines) + "\n"


def parse_matrix(lines: Iterable[str]) -> np.ndarray:
    it = iter(lines)
    try:
        header = next(it).split()
        rows, cols = int(header[0]), int(header[1])
    except (StopIteration, IndexError, ValueError):
        raise InvalidInputError("matrix header must be 'rows cols'") from None
    if rows < 1 or cols < 1:
        raise InvalidInputError("matrix dimensions must be positive")
    data = []
    for i in range(rows):
        try:
            row = [float(x) for x in next(it).split()]
        except StopIteration:
            raise InvalidInputError(f"expected {rows} rows, got {i}") from None
        except ValueError as exc:
            raise InvalidInputError(f"bad number in row {i}: {exc}") from None
        if len(row) != cols:
            raise InvalidInputError(f"row {i} has {len(row)} entries, expected {cols}")
        data.append(row)
    return as_matrix(np.array(data))


def write_matrix(path: str | Path | TextIO, m) -> None:
    text = format_matrix(m)
    if hasattr(path, "write"):
        path.write(text)
    else:
        Path(path).write_text(text)


def read_matrix(path: str | Path) -> np.ndarray:
    return parse_matrix(Path(path).read_text().splitlines())
