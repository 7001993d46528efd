"""Seeded synthetic stand-in for a language model.

A world holds unit subject embeddings e_s, per-template affine maps
k(s, t) = A_t e_s + b_t, a base weight W (the edited layer) and an unembedding
head U. Next-token distributions are softmax(U (W + dW) k / tau).

Template perturbations are drawn with entries of variance 1/d_in so that eta
is dimensionless: cos(k(s, t1), k(s, t2)) is roughly 1 - 2 eta^2 at any width.
"""

from __future__ import annotations

import functools
from dataclasses import asdict, dataclass, fields
from enum import IntEnum
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.special

from .editors import (
    Covariance,
    CovOrProj,
    EditBatch,
    Method,
    Projector,
    WeightUpdate,
    apply_method,
    covariance_from_keys,
    nullspace_projector,
)
from .errors import DegenerateBatchError, InvalidInputError, ResourceError
from .matcore import as_matrix, format_matrix, parse_matrix

MEMORY_BUDGET_BYTES = 2 * 1024**3


class Stream(IntEnum):
    WORLD = 0
    BATCH = 1
    TRIAL = 2
    COVARIANCE = 3
    DECOY = 4
    PRESERVED = 5
    NOISE = 6
    SHIFT = 7


def rng_stream(seed: int, *path: int) -> np.random.Generator:
    """Counter-based generator keyed by (seed, *path).

    Streams are independent of each other and of call order, so parallel
    trials draw the same numbers regardless of scheduling.
    """
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(p) for p in path))
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class WorldConfig:
    d_in: int = 128
    d_out: int = 96
    vocab: int = 512
    n_subjects: int = 512
    n_templates: int = 16
    eta: float = 0.2
    tau: float = 1.0
    beta: float = 10.0
    seed: int = 0
    # Extra shape knobs of the synthetic world.
    value_scale: float = 4.0  # typical ||W k|| for a unit key
    spectrum_decay: float = 0.6  # singular values of W fall off as j^-decay
    n_preserved: int | None = None  # preserved keys behind AlphaEdit's P; None: d_in // 4
    cov_floor: float | None = None  # isotropic floor in C; None means 1/d_in

    def __post_init__(self):
        for name in ("d_in", "d_out", "vocab", "n_subjects", "n_templates"):
            if int(getattr(self, name)) < 2:
                raise InvalidInputError(f"{name} must be at least 2")
        if self.eta < 0:
            raise InvalidInputError("eta must be nonnegative")
        if self.tau <= 0:
            raise InvalidInputError("tau must be positive")
        if self.beta < 0:
            raise InvalidInputError("beta must be nonnegative")
        if self.value_scale <= 0 or self.spectrum_decay < 0:
            raise InvalidInputError("value_scale must be positive and spectrum_decay nonnegative")
        if self.n_preserved is not None and not 0 <= self.n_preserved < self.d_in:
            raise InvalidInputError("n_preserved must lie in [0, d_in)")
        if self.cov_floor is not None and self.cov_floor < 0:
            raise InvalidInputError("cov_floor must be nonnegative")
        if not 0 <= int(self.seed) < 2**64:
            raise InvalidInputError("seed must be a 64-bit unsigned integer")

    @property
    def floor(self) -> float:
        return 1.0 / self.d_in if self.cov_floor is None else float(self.cov_floor)

    @property
    def preserved_count(self) -> int:
        return self.d_in // 4 if self.n_preserved is None else int(self.n_preserved)

    def memory_bytes(self) -> int:
        d = self.d_in
        words = (d * self.n_subjects + self.n_templates * (d * d + d)
                 + self.d_out * d + self.vocab * self.d_out
                 + d * self.n_subjects * self.n_templates)
        return 8 * words


@dataclass(frozen=True, eq=False)
class SyntheticWorld:
    cfg: WorldConfig
    subject_embeddings: np.ndarray  # d_in x S, unit columns
    template_a: np.ndarray  # T x d_in x d_in
    template_b: np.ndarray  # T x d_in
    w: np.ndarray  # d_out x d_in
    u: np.ndarray  # V x d_out, unit rows

    def __post_init__(self):
        for f in ("subject_embeddings", "template_a", "template_b", "w", "u"):
            getattr(self, f).setflags(write=False)

    @property
    def d_in(self) -> int:
        return self.cfg.d_in

    @property
    def n_subjects(self) -> int:
        return self.cfg.n_subjects

    @property
    def n_templates(self) -> int:
        return self.cfg.n_templates

    def check_subject(self, s) -> int:
        s = int(s)
        if not 0 <= s < self.n_subjects:
            raise InvalidInputError(f"subject id {s} out of range")
        return s

    def check_template(self, t) -> int:
        t = int(t)
        if not 0 <= t < self.n_templates:
            raise InvalidInputError(f"template id {t} out of range")
        return t

    def keys(self, subject_ids: Sequence[int], template_ids) -> np.ndarray:
        """Key matrix (d_in x n). template_ids is one id or one id per subject."""
        subs = np.array([self.check_subject(s) for s in subject_ids], dtype=np.int64)
        if np.isscalar(template_ids) or np.ndim(template_ids) == 0:
            t = self.check_template(template_ids)
            e = self.subject_embeddings[:, subs]
            return self.template_a[t] @ e + self.template_b[t][:, None]
        tids = [self.check_template(t) for t in template_ids]
        if len(tids) != len(subs):
            raise InvalidInputError("need one template id per subject")
        out = np.empty((self.d_in, len(subs)))
        for i, (s, t) in enumerate(zip(subs, tids)):
            out[:, i] = self.template_a[t] @ self.subject_embeddings[:, s] + self.template_b[t]
        return out

    @functools.cached_property
    def all_keys(self) -> np.ndarray:
        """Keys of every (subject, template) pair, template-major."""
        e = self.subject_embeddings
        blocks = [self.template_a[t] @ e + self.template_b[t][:, None]
                  for t in range(self.n_templates)]
        out = np.concatenate(blocks, axis=1)
        out.setflags(write=False)
        return out

    def population_covariance(self) -> Covariance:
        """Exact C: second moment over all keys plus the isotropic floor."""
        return _population_cov(self)

    def estimated_covariance(self, n_samples: int, stream_index: int = 0) -> Covariance:
        """C estimated from n random (subject, template) key samples."""
        if n_samples < 1:
            raise InvalidInputError("n_samples must be positive")
        rng = rng_stream(self.cfg.seed, Stream.COVARIANCE, stream_index)
        total = self.n_subjects * self.n_templates
        idx = rng.choice(total, size=n_samples, replace=n_samples > total)
        kp = self.all_keys[:, np.sort(idx)]
        return covariance_from_keys(kp / np.sqrt(n_samples), ridge=self.cfg.floor)

    def shifted_covariance(self, shift_seed: int) -> Covariance:
        """C from a different subject population pushed through the same templates."""
        rng = rng_stream(self.cfg.seed, Stream.SHIFT, shift_seed)
        e = _unit_columns(rng.standard_normal((self.d_in, self.n_subjects)))
        kp = np.concatenate([self.template_a[t] @ e + self.template_b[t][:, None]
                             for t in range(self.n_templates)], axis=1)
        return covariance_from_keys(kp / np.sqrt(kp.shape[1]), ridge=self.cfg.floor)

    def preserved_keys(self) -> np.ndarray:
        """General-knowledge keys that AlphaEdit protects."""
        rng = rng_stream(self.cfg.seed, Stream.PRESERVED)
        m = max(self.cfg.preserved_count, 1)
        return _unit_columns(rng.standard_normal((self.d_in, m)))

    def projector(self) -> Projector:
        if self.cfg.preserved_count == 0:
            return Projector(np.eye(self.d_in))
        return _projector(self)


@functools.lru_cache(maxsize=16)
def _population_cov(world: SyntheticWorld) -> Covariance:
    k = world.all_keys
    return covariance_from_keys(k / np.sqrt(k.shape[1]), ridge=world.cfg.floor)


@functools.lru_cache(maxsize=16)
def _projector(world: SyntheticWorld) -> Projector:
    return nullspace_projector(world.preserved_keys())


def _unit_columns(a: np.ndarray) -> np.ndarray:
    return a / np.linalg.norm(a, axis=0, keepdims=True)


def _decayed_weight(rng: np.random.Generator, cfg: WorldConfig) -> np.ndarray:
    z = rng.standard_normal((cfg.d_out, cfg.d_in))
    left, _, right = np.linalg.svd(z, full_matrices=False)
    s = np.arange(1, left.shape[1] + 1, dtype=np.float64) ** (-cfg.spectrum_decay)
    # Normalise so that E||W k|| is about value_scale for a random unit key.
    s *= cfg.value_scale * np.sqrt(cfg.d_in / np.sum(s**2))
    return (left * s) @ right


def new_world(cfg: WorldConfig) -> SyntheticWorld:
    if cfg.memory_bytes() > MEMORY_BUDGET_BYTES:
        raise ResourceError(
            f"world needs about {cfg.memory_bytes() / 2**20:.0f} MiB, "
            f"budget is {MEMORY_BUDGET_BYTES / 2**20:.0f} MiB")
    rng = rng_stream(cfg.seed, Stream.WORLD)
    d = cfg.d_in
    e = _unit_columns(rng.standard_normal((d, cfg.n_subjects)))
    g = rng.standard_normal((cfg.n_templates, d, d)) / np.sqrt(d)
    b = rng.standard_normal((cfg.n_templates, d)) / np.sqrt(d)
    a = np.eye(d)[None, :, :] + cfg.eta * g
    w = _decayed_weight(rng, cfg)
    u = rng.standard_normal((cfg.vocab, cfg.d_out))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    return SyntheticWorld(cfg, e, a, cfg.eta * b, w, u)


def extract_key(world: SyntheticWorld, subject_id: int, template_id: int) -> np.ndarray:
    return world.keys([subject_id], template_id)[:, 0]


def _dw_matrix(world: SyntheticWorld, dw) -> np.ndarray | None:
    if dw is None:
        return None
    if isinstance(dw, WeightUpdate):
        dw = dw.dw
    if np.isscalar(dw) and dw == 0:
        return None
    dw = as_matrix(dw, "dw")
    if dw.shape != world.w.shape:
        raise InvalidInputError(f"dw has shape {dw.shape}, expected {world.w.shape}")
    return dw


def logits(world: SyntheticWorld, dw, keys: np.ndarray) -> np.ndarray:
    """Logit matrix (V x n) for a block of keys."""
    d = _dw_matrix(world, dw)
    w = world.w if d is None else world.w + d
    return world.u @ (w @ keys) / world.cfg.tau


def distributions(world: SyntheticWorld, dw, keys: np.ndarray) -> np.ndarray:
    """Column-stochastic matrix of next-token distributions."""
    return scipy.special.softmax(logits(world, dw, keys), axis=0)


def next_token_dist(world: SyntheticWorld, dw, subject_id: int, template_id: int) -> np.ndarray:
    k = world.keys([subject_id], template_id)
    return distributions(world, dw, k)[:, 0]


def entropies(p: np.ndarray) -> np.ndarray:
    """Column-wise Shannon entropy in nats of a column-stochastic matrix."""
    return scipy.special.entr(p).sum(axis=0)


def shannon_entropy(p) -> float:
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 1 or p.size == 0 or not np.all(np.isfinite(p)):
        raise InvalidInputError("p must be a finite nonempty vector")
    if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
        raise InvalidInputError("p must be nonnegative and sum to 1")
    return float(scipy.special.entr(p).sum())


def _sample_batch(world: SyntheticWorld, n: int, rng: np.random.Generator) -> EditBatch:
    subs = np.sort(rng.choice(world.n_subjects, size=n, replace=False))
    tmps = rng.integers(0, world.n_templates, size=n)
    objs = rng.integers(0, world.cfg.vocab, size=n)
    k = world.keys(subs, tmps)
    v = world.w @ k
    r = world.cfg.beta * np.linalg.norm(v, axis=0) * world.u[objs].T
    return EditBatch(subs.tolist(), tmps.tolist(), objs.tolist(), k, r)


def synthesize_edit_batch(world: SyntheticWorld, n: int, method, c_or_p: CovOrProj,
                          call_index: int = 0) -> tuple[EditBatch, WeightUpdate]:
    """Draw n distinct subjects with one template and target object each, then edit.

    The target value is v* = v + beta ||v|| u_o, so r = beta ||v|| u_o.
    """
    method = Method.parse(method)
    if not 1 <= n <= world.n_subjects:
        raise InvalidInputError(f"n must be in [1, {world.n_subjects}]")
    if method is Method.ROME and n != 1:
        raise InvalidInputError("ROME edits exactly one fact")
    for attempt in range(9):
        rng = rng_stream(world.cfg.seed, Stream.BATCH, call_index, attempt)
        try:
            batch = _sample_batch(world, n, rng)
        except InvalidInputError:
            continue
        return batch, apply_method(method, batch, c_or_p)
    raise DegenerateBatchError(f"no full-rank batch of {n} edits after 8 retries")


def invariance_report(world: SyntheticWorld, subject_ids: Sequence[int],
                      template_ids: Sequence[int]) -> np.ndarray:
    """Entry (i, j): min over template pairs of cos(k(s_i, t1), k(s_j, t2)).

    The diagonal is the within-subject invariance, off-diagonal entries the
    worst-case cross-subject similarity floor.
    """
    subject_ids = list(subject_ids)
    template_ids = list(template_ids)
    if not subject_ids or not template_ids:
        raise InvalidInputError("id lists must be nonempty")
    blocks = [world.keys(subject_ids, t) for t in template_ids]
    blocks = [b / np.linalg.norm(b, axis=0, keepdims=True) for b in blocks]
    n = len(subject_ids)
    out = np.full((n, n), np.inf)
    for b1 in blocks:
        for b2 in blocks:
            out = np.minimum(out, b1.T @ b2)
    out = np.minimum(out, out.T)
    return np.clip(out, -1.0, 1.0)


# Structured text documents: "key = value" lines plus [matrix name] blocks.

def _matrix_block(name: str, m) -> str:
    return f"[matrix {name}]\n{format_matrix(m)}"


def _parse_document(text: str) -> tuple[dict, dict]:
    scalars, mats = {}, {}
    lines = text.splitlines()
    i = 0
    while i < len(lines):
        line = lines[i].strip()
        if not line or line.startswith("#"):
            i += 1
            continue
        if line.startswith("[matrix ") and line.endswith("]"):
            name = line[len("[matrix "):-1].strip()
            rows = int(lines[i + 1].split()[0])
            mats[name] = parse_matrix(lines[i + 1:i + 2 + rows])
            i += 2 + rows
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise InvalidInputError(f"line {i + 1}: expected 'key = value'")
        scalars[key.strip()] = value.strip()
        i += 1
    return scalars, mats


def _coerce(cfg_field, raw: str):
    if raw == "None":
        return None
    if cfg_field.type in ("int", int, "int | None"):
        return int(raw)
    return float(raw)


def dump_world(world: SyntheticWorld) -> str:
    parts = ["# editleak world"]
    parts += [f"{k} = {v!r}" for k, v in asdict(world.cfg).items()]
    parts.append(_matrix_block("subject_embeddings", world.subject_embeddings).rstrip())
    for t in range(world.n_templates):
        parts.append(_matrix_block(f"template_a.{t}", world.template_a[t]).rstrip())
    parts.append(_matrix_block("template_b", world.template_b).rstrip())
    parts.append(_matrix_block("w", world.w).rstrip())
    parts.append(_matrix_block("u", world.u).rstrip())
    return "\n".join(parts) + "\n"


def load_world(text: str) -> SyntheticWorld:
    scalars, mats = _parse_document(text)
    kwargs = {}
    for f in fields(WorldConfig):
        if f.name in scalars:
            kwargs[f.name] = _coerce(f, scalars[f.name])
    cfg = WorldConfig(**kwargs)
    a = np.stack([mats[f"template_a.{t}"] for t in range(cfg.n_templates)])
    return SyntheticWorld(cfg, mats["subject_embeddings"], a, mats["template_b"],
                          mats["w"], mats["u"])


def dump_batch(batch: EditBatch, dw: WeightUpdate | None = None) -> str:
    parts = ["# editleak edit batch",
             f"subject_ids = {' '.join(map(str, batch.subject_ids))}",
             f"template_ids = {' '.join(map(str, batch.template_ids))}",
             f"object_token_ids = {' '.join(map(str, batch.object_token_ids))}"]
    if dw is not None:
        parts.append(f"method = {dw.method.value}")
    parts.append(_matrix_block("k", batch.k).rstrip())
    parts.append(_matrix_block("r", batch.r).rstrip())
    if dw is not None:
        parts.append(_matrix_block("dw", dw.dw).rstrip())
    return "\n".join(parts) + "\n"


def load_batch(text: str) -> tuple[EditBatch, WeightUpdate | None]:
    scalars, mats = _parse_document(text)

    def ids(key):
        return [int(x) for x in scalars[key].split()]

    batch = EditBatch(ids("subject_ids"), ids("template_ids"), ids("object_token_ids"),
                      mats["k"], mats["r"])
    dw = WeightUpdate(mats["dw"], scalars["method"]) if "dw" in mats else None
    return batch, dw


def save_text(path: str | Path, text: str) -> None:
    Path(path).write_text(text)
