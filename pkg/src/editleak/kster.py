"""Two-stage reverse engineering of an edit from its weight update.

Stage I recovers the edited key space from the row space of dW C (or of dW
for AlphaEdit) and ranks candidate subjects by how much of their generic-
template key falls inside it. Stage II ranks prompt templates for each
predicted subject by relative entropy reduction. A gray-box baseline ranks
subjects by the Jensen-Shannon divergence of pre and post-edit outputs.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.spatial.distance import jensenshannon

from .editors import Covariance, CovOrProj, EditBatch, Projector, WeightUpdate
from .errors import InsufficientRankError, InvalidInputError
from .matcore import (
    as_matrix,
    as_vector,
    default_rank_tol,
    numerical_rank,
    svd_thin,
)
from .worldsim import SyntheticWorld, distributions, entropies

log = logging.getLogger(__name__)

DEFAULT_EPSILON = 1e-9


@dataclass(frozen=True)
class AttackConfig:
    rank_rel_tol: float | None = None
    generic_template_id: int = 0
    subject_candidates: Sequence[int] | None = None  # None: every subject
    prompt_candidates: Sequence[int] | None = None  # None: every template
    n_r: int = 5
    epsilon: float = DEFAULT_EPSILON

    def __post_init__(self):
        if self.n_r < 1:
            raise InvalidInputError("n_r must be positive")
        if self.epsilon <= 0:
            raise InvalidInputError("epsilon must be positive")
        if self.rank_rel_tol is not None and self.rank_rel_tol <= 0:
            raise InvalidInputError("rank_rel_tol must be positive")

    def subjects(self, world: SyntheticWorld) -> list[int]:
        if self.subject_candidates is None:
            return list(range(world.n_subjects))
        subs = [world.check_subject(s) for s in self.subject_candidates]
        if not subs:
            raise InvalidInputError("subject candidate pool is empty")
        return subs

    def templates(self, world: SyntheticWorld) -> list[int]:
        if self.prompt_candidates is None:
            return list(range(world.n_templates))
        tmps = [world.check_template(t) for t in self.prompt_candidates]
        if not tmps:
            raise InvalidInputError("prompt candidate pool is empty")
        return tmps


@dataclass
class RecallTable:
    subject_recall_at_n: float
    prompt_top1: float
    prompt_top5: float
    prompt_top20: float
    true_subject_ranks: list[int]
    mean_projection_coeff: float

    @property
    def mean_rank(self) -> float:
        return float(np.mean(self.true_subject_ranks)) if self.true_subject_ranks else 0.0

    def to_dict(self) -> dict:
        return {
            "subject_recall_at_n": self.subject_recall_at_n,
            "prompt_top1": self.prompt_top1,
            "prompt_top5": self.prompt_top5,
            "prompt_top20": self.prompt_top20,
            "true_subject_ranks": list(self.true_subject_ranks),
            "mean_projection_coeff": self.mean_projection_coeff,
        }


@dataclass
class AttackReport:
    n_hat: int
    basis: np.ndarray
    subject_scores: list[tuple[int, float]]
    predicted_subjects: list[int]
    prompt_rankings: dict[int, list[tuple[int, float]]] = field(default_factory=dict)
    metrics: RecallTable | None = None
    rank_dw: int = 0
    rank_m: int = 0
    degenerate_candidates: list[int] = field(default_factory=list)
    graybox_scores: list[tuple[int, float]] | None = None

    @property
    def rank_mismatch(self) -> bool:
        return self.rank_dw != self.rank_m

    def to_dict(self, include_basis: bool = False) -> dict:
        out = {
            "n_hat": self.n_hat,
            "rank_dw": self.rank_dw,
            "rank_m": self.rank_m,
            "rank_mismatch": self.rank_mismatch,
            "predicted_subjects": list(self.predicted_subjects),
            "subject_scores": [[s, v] for s, v in self.subject_scores],
            "prompt_rankings": {str(s): [[t, v] for t, v in r]
                                for s, r in sorted(self.prompt_rankings.items())},
            "degenerate_candidates": list(self.degenerate_candidates),
            "metrics": None if self.metrics is None else self.metrics.to_dict(),
        }
        if self.graybox_scores is not None:
            out["graybox_scores"] = [[s, v] for s, v in self.graybox_scores]
        if include_basis:
            out["basis"] = self.basis.tolist()
        return out


def _dw(dw) -> np.ndarray:
    return dw.dw if isinstance(dw, WeightUpdate) else as_matrix(dw, "dw")


def _rank_of(m: np.ndarray, rel_tol: float | None) -> tuple[int, object]:
    res = svd_thin(m)
    tol = default_rank_tol(m.shape) if rel_tol is None else rel_tol
    return numerical_rank(res.sigma, tol), res


def sort_scores(ids: Sequence[int], scores) -> list[tuple[int, float]]:
    """(id, score) pairs by descending score, ties by ascending id."""
    ids = np.asarray(ids)
    scores = np.asarray(scores, dtype=np.float64)
    order = np.lexsort((ids, -scores))
    return [(int(ids[i]), float(scores[i])) for i in order]


def estimate_edit_count(dw, rel_tol: float | None = None) -> int:
    m = _dw(dw)
    if not np.any(m):
        return 0
    return _rank_of(m, rel_tol)[0]


def _observation(dw: np.ndarray, c_or_p: CovOrProj | None) -> np.ndarray:
    """M = dW C for covariance-based edits, dW itself otherwise."""
    if isinstance(c_or_p, Covariance):
        if c_or_p.dim != dw.shape[1]:
            raise InvalidInputError("covariance dimension does not match dW")
        return dw @ c_or_p.c
    return dw


def recover_key_space(dw, c: Covariance | None, n: int,
                      rel_tol: float | None = None) -> np.ndarray:
    """Top-n right singular vectors of M = dW C (or dW when c is None)."""
    if n < 1:
        raise InvalidInputError("n must be positive")
    m = _observation(_dw(dw), c)
    rank, res = _rank_of(m, rel_tol)
    if n > rank:
        raise InsufficientRankError(f"requested {n} directions but rank(M) = {rank}")
    return res.v[:, :n]


def projection_coefficients(v_n: np.ndarray, keys: np.ndarray,
                            p: Projector | None = None) -> tuple[np.ndarray, np.ndarray]:
    """rho for every key column, plus a mask of degenerate (P k = 0) columns."""
    keys = as_matrix(keys, "keys")
    if p is not None:
        keys = p.p @ keys
    norms = np.linalg.norm(keys, axis=0)
    degenerate = norms <= 1e-12 * max(1.0, float(np.max(norms, initial=0.0)))
    if v_n.shape[1] == 0:
        return np.zeros(keys.shape[1]), degenerate
    proj = np.linalg.norm(v_n.T @ keys, axis=0)
    rho = np.divide(proj, norms, out=np.zeros_like(proj), where=~degenerate)
    return np.clip(rho, 0.0, 1.0), degenerate


def score_subject(v_n, k, p: Projector | None = None) -> float:
    """rho = ||V_N^T k|| / ||k||, with k replaced by P k when a projector is given."""
    k = as_vector(k, "k")
    if p is None and not np.any(k):
        raise InvalidInputError("candidate key must be nonzero")
    rho, degenerate = projection_coefficients(np.asarray(v_n, dtype=float), k[:, None], p)
    if degenerate[0]:
        log.debug("candidate key vanishes under P; scored 0")
    return float(rho[0])


def subject_inference(world: SyntheticWorld, dw, c_or_p: CovOrProj | None,
                      cfg: AttackConfig) -> AttackReport:
    """Stage I. A Covariance means a MEMIT/ROME edit, a Projector means AlphaEdit."""
    d = _dw(dw)
    candidates = cfg.subjects(world)
    p = c_or_p if isinstance(c_or_p, Projector) else None
    n_dw = estimate_edit_count(d, cfg.rank_rel_tol)
    if n_dw == 0:
        basis = np.zeros((d.shape[1], 0))
        return AttackReport(0, basis, sort_scores(candidates, np.zeros(len(candidates))),
                            [], rank_dw=0, rank_m=0)
    m = _observation(d, c_or_p)
    n_m, res = _rank_of(m, cfg.rank_rel_tol)
    n_hat = min(n_dw, n_m)
    if n_m != n_dw:
        log.warning("rank(dW) = %d but rank(M) = %d; using %d", n_dw, n_m, n_hat)
    basis = res.v[:, :n_hat]
    keys = world.keys(candidates, cfg.generic_template_id)
    rho, degenerate = projection_coefficients(basis, keys, p)
    scores = sort_scores(candidates, rho)
    return AttackReport(
        n_hat=n_hat,
        basis=basis,
        subject_scores=scores,
        predicted_subjects=[s for s, _ in scores[:n_hat]],
        rank_dw=n_dw,
        rank_m=n_m,
        degenerate_candidates=[int(s) for s, flag in zip(candidates, degenerate) if flag],
    )


def _prompt_scores(world: SyntheticWorld, dw, subject_id: int, template_ids: Sequence[int],
                   epsilon: float) -> np.ndarray:
    subs = [subject_id] * len(template_ids)
    keys = world.keys(subs, template_ids)
    h_pre = entropies(distributions(world, None, keys))
    h_post = entropies(distributions(world, dw, keys))
    return (h_pre - h_post) / (h_post + epsilon)


def prompt_score(world: SyntheticWorld, dw, subject_id: int, template_id: int,
                 epsilon: float = DEFAULT_EPSILON) -> float:
    """Relative entropy reduction (H_pre - H_post) / (H_post + epsilon)."""
    if epsilon <= 0:
        raise InvalidInputError("epsilon must be positive")
    return float(_prompt_scores(world, dw, subject_id, [template_id], epsilon)[0])


def rank_prompts(world: SyntheticWorld, dw, subjects: Sequence[int],
                 cfg: AttackConfig) -> dict[int, list[tuple[int, float]]]:
    """Full template ranking for each subject."""
    templates = cfg.templates(world)
    return {int(s): sort_scores(templates, _prompt_scores(world, dw, s, templates, cfg.epsilon))
            for s in subjects}


def prompt_recovery(world: SyntheticWorld, dw, predicted_subjects: Sequence[int],
                    cfg: AttackConfig) -> dict[int, list[tuple[int, float]]]:
    """Stage II: the n_r best templates per predicted subject."""
    full = rank_prompts(world, dw, predicted_subjects, cfg)
    return {s: r[: cfg.n_r] for s, r in full.items()}


def js_divergence(p, q) -> float:
    """Jensen-Shannon divergence in nats, bounded by ln 2."""
    p = as_vector(p, "p")
    q = as_vector(q, "q")
    if p.shape != q.shape:
        raise InvalidInputError("distributions must have equal length")
    return float(jensenshannon(p, q) ** 2)


def js_divergences(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Column-wise JS divergence of two column-stochastic matrices."""
    return jensenshannon(p, q, axis=0) ** 2


def graybox_scores(world: SyntheticWorld, dw, cfg: AttackConfig) -> list[tuple[int, float]]:
    candidates = cfg.subjects(world)
    keys = world.keys(candidates, cfg.generic_template_id)
    js = js_divergences(distributions(world, None, keys), distributions(world, dw, keys))
    return sort_scores(candidates, np.nan_to_num(js, nan=0.0))


def run_attack(world: SyntheticWorld, dw, c_or_p: CovOrProj | None, cfg: AttackConfig,
               graybox: bool = False) -> AttackReport:
    """Both stages; prompt rankings are kept in full, truncate with cfg.n_r."""
    report = subject_inference(world, dw, c_or_p, cfg)
    report.prompt_rankings = rank_prompts(world, dw, report.predicted_subjects, cfg)
    if graybox:
        report.graybox_scores = graybox_scores(world, dw, cfg)
    return report


def separation_gap(edited_keys: np.ndarray, other_keys: np.ndarray, basis: np.ndarray) -> float:
    """delta-theta: smallest non-edited angle to col(basis) minus largest edited angle."""
    def angles(keys):
        rho, _ = projection_coefficients(basis, keys)
        return np.arccos(np.clip(rho, 0.0, 1.0))
    return float(np.min(angles(other_keys)) - np.max(angles(edited_keys)))


def _topk_hit(ranking: list[tuple[int, float]], template: int, k: int) -> bool:
    return any(t == template for t, _ in ranking[:k])


def eval_metrics(report: AttackReport, batch: EditBatch,
                 graybox: bool = False) -> RecallTable:
    """Score a report against the ground-truth batch.

    White-box recall uses the attack's own n_hat predictions. A true subject
    that was not predicted has no prompt ranking and counts as a prompt miss.
    """
    position = {s: i + 1 for i, (s, _) in enumerate(report.subject_scores)}
    rho = dict(report.subject_scores)
    truth = list(batch.subject_ids)
    missing = [s for s in truth if s not in position]
    if missing:
        raise InvalidInputError(f"edited subjects {missing} are not in the candidate pool")
    n = len(truth)
    if graybox:
        # Gray-box access gives no rank signal, so the baseline is told N.
        if report.graybox_scores is None:
            raise InvalidInputError("report has no gray-box scores")
        predicted = [s for s, _ in report.graybox_scores[:n]]
    else:
        predicted = report.predicted_subjects
    recall = len(set(predicted) & set(truth)) / n
    hits = {1: 0, 5: 0, 20: 0}
    for s, t in zip(truth, batch.template_ids):
        ranking = report.prompt_rankings.get(s)
        if ranking is None:
            continue
        for k in hits:
            hits[k] += _topk_hit(ranking, t, k)
    return RecallTable(
        subject_recall_at_n=recall,
        prompt_top1=hits[1] / n,
        prompt_top5=hits[5] / n,
        prompt_top20=hits[20] / n,
        true_subject_ranks=[position[s] for s in truth],
        mean_projection_coeff=float(np.mean([rho[s] for s in truth])),
    )
