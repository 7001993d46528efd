"""Subspace camouflage: rewrite dW so its row space points at decoy-mixed keys.

The defended update acts exactly like dW on the true keys, dW_def K = dW K,
while its observable row space (after the C or P weighting) becomes
col(K~) with K~ = K + alpha (||K||_2 / ||K_dec||_2) K_dec.

Also here: the residuals under which the original editing algorithm run on
other keys reproduces the defended update exactly.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.linalg

from .editors import Covariance, CovOrProj, EditBatch, Method, Projector, WeightUpdate
from .errors import (
    CamouflageDegenerateError,
    ConstructionFailedError,
    InvalidInputError,
)
from .matcore import as_matrix, max_abs, spectral_norm
from .worldsim import SyntheticWorld

DEFAULT_LAMBDA = 1e-8
# Inner systems with a reciprocal condition number below this are singular.
RCOND_MIN = 1e-14


@dataclass(frozen=True)
class DefenseParams:
    alpha: float
    decoy_subject_ids: Sequence[int]
    lam: float = DEFAULT_LAMBDA

    def __post_init__(self):
        if self.alpha < 0:
            raise InvalidInputError("alpha must be nonnegative")
        if self.lam < 0:
            raise InvalidInputError("lambda must be nonnegative")
        object.__setattr__(self, "decoy_subject_ids", tuple(int(s) for s in self.decoy_subject_ids))

    def check_batch(self, batch: EditBatch) -> None:
        if len(self.decoy_subject_ids) != batch.n:
            raise InvalidInputError(
                f"need exactly {batch.n} decoys, got {len(self.decoy_subject_ids)}")
        overlap = set(self.decoy_subject_ids) & set(batch.subject_ids)
        if overlap:
            raise InvalidInputError(f"decoys overlap edited subjects: {sorted(overlap)}")


def sample_decoys(rng: np.random.Generator, n_subjects: int, edited: Sequence[int],
                  n: int) -> list[int]:
    """n distinct subjects drawn uniformly from the non-edited pool."""
    pool = np.setdiff1d(np.arange(n_subjects), np.asarray(edited, dtype=np.int64))
    if len(pool) < n:
        raise InvalidInputError(f"only {len(pool)} non-edited subjects for {n} decoys")
    return sorted(int(s) for s in rng.choice(pool, size=n, replace=False))


def build_decoy_keys(world: SyntheticWorld, decoy_ids: Sequence[int], template_id: int,
                     edited_ids: Sequence[int] = ()) -> np.ndarray:
    overlap = set(int(s) for s in decoy_ids) & set(int(s) for s in edited_ids)
    if overlap:
        raise InvalidInputError(f"decoys overlap edited subjects: {sorted(overlap)}")
    if len(decoy_ids) == 0:
        raise InvalidInputError("need at least one decoy")
    return world.keys(list(decoy_ids), template_id)


def aggregate_camouflage_keys(k, k_decoy, alpha: float) -> np.ndarray:
    """K~ = K + alpha (||K||_2 / ||K_dec||_2) K_dec with spectral norms."""
    k = as_matrix(k, "k")
    k_decoy = as_matrix(k_decoy, "k_decoy")
    if k.shape != k_decoy.shape:
        raise InvalidInputError(f"shape mismatch: {k.shape} vs {k_decoy.shape}")
    if alpha < 0:
        raise InvalidInputError("alpha must be nonnegative")
    if alpha == 0:
        return k.copy()
    dn = spectral_norm(k_decoy)
    if dn == 0:
        raise InvalidInputError("decoy keys vanish but alpha > 0")
    return k + alpha * (spectral_norm(k) / dn) * k_decoy


def _weighting(c_or_p: CovOrProj, x: np.ndarray) -> np.ndarray:
    """C^-1 x for a Covariance, P x for a Projector."""
    if isinstance(c_or_p, Covariance):
        return c_or_p.solve(x)
    if isinstance(c_or_p, Projector):
        return c_or_p.p @ x
    raise InvalidInputError("expected a Covariance or a Projector")


def _check_pairing(method: Method, c_or_p: CovOrProj) -> None:
    if method is Method.ALPHAEDIT and not isinstance(c_or_p, Projector):
        raise InvalidInputError("AlphaEdit needs a Projector")
    if method is not Method.ALPHAEDIT and not isinstance(c_or_p, Covariance):
        raise InvalidInputError(f"{method.value} needs a Covariance")


def _solve_general(a: np.ndarray, b: np.ndarray, err) -> np.ndarray:
    """a^-1 b with a conditioning guard."""
    if a.shape[0] == 0:
        return b
    with np.errstate(all="ignore"):
        rcond = 1.0 / np.linalg.cond(a)
    if not np.isfinite(rcond) or rcond < RCOND_MIN:
        raise err(f"inner system is numerically singular (rcond={rcond:.3g})")
    return scipy.linalg.solve(a, b, check_finite=False)


def _right_solve(x: np.ndarray, a: np.ndarray, err) -> np.ndarray:
    """x a^-1."""
    return _solve_general(a.T, x.T, err).T


def camouflage_delta(dw: np.ndarray, k: np.ndarray, k_tilde: np.ndarray,
                     c_or_p: CovOrProj, lam: float = DEFAULT_LAMBDA) -> np.ndarray:
    """dW K (K~^T W K + lam I)^-1 K~^T W, with W = C^-1 or P.

    For a single column this is the rank-one form
    dW k k~^T C^-1 / (k~^T C^-1 k + lam).
    """
    wt = _weighting(c_or_p, k_tilde)  # C^-1 K~ or P K~
    g = wt.T @ k + lam * np.eye(k.shape[1])
    if k.shape[1] == 1:
        if abs(g[0, 0]) <= RCOND_MIN * np.linalg.norm(wt) * np.linalg.norm(k):
            raise CamouflageDegenerateError("k~^T C^-1 k vanishes")
        return (dw @ k) @ wt.T / g[0, 0]
    f = _right_solve(dw @ k, g, CamouflageDegenerateError)
    return f @ wt.T


def defense_update(method, dw, batch: EditBatch, k_tilde, c_or_p: CovOrProj,
                   params: DefenseParams | None = None) -> WeightUpdate:
    method = Method.parse(method)
    _check_pairing(method, c_or_p)
    d = dw.dw if isinstance(dw, WeightUpdate) else as_matrix(dw, "dw")
    k_tilde = as_matrix(k_tilde, "k_tilde")
    if k_tilde.shape != batch.k.shape:
        raise InvalidInputError("k_tilde must have the shape of K")
    lam = DEFAULT_LAMBDA if params is None else params.lam
    return WeightUpdate(camouflage_delta(d, batch.k, k_tilde, c_or_p, lam), method)


def defend(world: SyntheticWorld, method, dw, batch: EditBatch, c_or_p: CovOrProj,
           params: DefenseParams, template_id: int = 0) -> tuple[WeightUpdate, np.ndarray]:
    """Full pipeline: decoy keys, K~, defended update. Returns (update, K~)."""
    params.check_batch(batch)
    k_dec = build_decoy_keys(world, params.decoy_subject_ids, template_id, batch.subject_ids)
    k_tilde = aggregate_camouflage_keys(batch.k, k_dec, params.alpha)
    return defense_update(method, dw, batch, k_tilde, c_or_p, params), k_tilde


def _weighted_gram(c_or_p: CovOrProj, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """a^T C^-1 b, or a^T P b."""
    return a.T @ _weighting(c_or_p, b)


def _alias(method: Method, batch: EditBatch, k_prime: np.ndarray, k_tilde: np.ndarray,
           c_or_p: CovOrProj) -> np.ndarray:
    """Residual R'' with dW_def(K', K~, R'') = dW_def(K, K~, R)."""
    _check_pairing(method, c_or_p)
    k, r = batch.k, batch.r
    err = ConstructionFailedError
    if method is Method.ROME:
        if k.shape[1] != 1:
            raise InvalidInputError("ROME edits exactly one fact")
        num = _weighted_gram(c_or_p, k_tilde, k_prime)[0, 0]
        den = _weighted_gram(c_or_p, k_tilde, k)[0, 0]
        if abs(den) <= RCOND_MIN * np.linalg.norm(k_tilde) * np.linalg.norm(k):
            raise err("k~^T C^-1 k vanishes")
        return r * (num / den)
    n = k.shape[1]
    eye = np.eye(n)
    # R (I + K^T W K)^-1 K^T W K (K~^T W K)^-1 (K~^T W K') (K'^T W K')^-1 (I + K'^T W K')
    kwk = _weighted_gram(c_or_p, k, k)
    x = _right_solve(r, eye + kwk, err) @ kwk
    x = _right_solve(x, _weighted_gram(c_or_p, k_tilde, k), err)
    x = x @ _weighted_gram(c_or_p, k_tilde, k_prime)
    kpk = _weighted_gram(c_or_p, k_prime, k_prime)
    x = _right_solve(x, kpk, err)
    return x @ (eye + kpk)


def equivalent_residual(method, batch: EditBatch, k_tilde, c_or_p: CovOrProj) -> np.ndarray:
    """R' such that the plain method on (K~, R') yields the defended update."""
    method = Method.parse(method)
    k_tilde = as_matrix(k_tilde, "k_tilde")
    return _alias(method, batch, k_tilde, k_tilde, c_or_p)


def alias_residual(method, batch: EditBatch, k_prime, k_tilde, c_or_p: CovOrProj) -> np.ndarray:
    """R'' such that defending an edit of (K', R'') reproduces the observed update."""
    method = Method.parse(method)
    k_prime = as_matrix(k_prime, "k_prime")
    k_tilde = as_matrix(k_tilde, "k_tilde")
    if k_prime.shape != batch.k.shape:
        raise InvalidInputError("k_prime must have the shape of K")
    return _alias(method, batch, k_prime, k_tilde, c_or_p)


def consistency_residual(dw_def, dw, k) -> float:
    """max|dW_def K - dW K| / (1 + max|dW K|)."""
    a = (dw_def.dw if isinstance(dw_def, WeightUpdate) else dw_def) @ k
    b = (dw.dw if isinstance(dw, WeightUpdate) else dw) @ k
    return max_abs(a - b) / (1.0 + max_abs(b))
