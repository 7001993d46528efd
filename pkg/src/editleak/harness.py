"""Experiment driver and command-line entry point.

Subcommands:
    world   generate a world and write it with invariance diagnostics
    run     edit, optionally defend, attack, and score over several trials
    sweep   the same pipeline over a list of camouflage strengths
    verify  the theorem check suite

Configs are JSON documents. Unknown keys are rejected so every experiment is
fully described by its file.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import re
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import camouflage as cam
from . import verify as vf
from .editors import CovOrProj, EditBatch, Method
from .errors import ConfigError, EditLeakError
from .kster import AttackConfig, AttackReport, RecallTable, eval_metrics, run_attack
from .worldsim import (
    Stream,
    SyntheticWorld,
    WorldConfig,
    dump_world,
    invariance_report,
    new_world,
    rng_stream,
    synthesize_edit_batch,
)

log = logging.getLogger(__name__)

TRIAL_CSV_HEADER = ["trial", "seed", "method", "n", "recall_at_n", "mean_rank",
                    "top1", "top5", "top20"]
SWEEP_CSV_HEADER = ["alpha", "mean_rank", "rank_std", "recall", "consistency_residual"]
DEFAULT_ALPHAS = (0.0, 1.0, 3.0, 5.0)


@dataclass(frozen=True)
class CovMode:
    kind: str = "exact"  # exact | estimated | shifted
    value: int = 0  # sample count or shift seed

    def label(self) -> str:
        return self.kind if self.kind == "exact" else f"{self.kind}({self.value})"


@dataclass(frozen=True)
class DefenseSpec:
    alpha: float = 3.0
    lam: float = cam.DEFAULT_LAMBDA
    decoy_subject_ids: tuple[int, ...] | None = None  # None: sampled per trial
    decoy_template_id: int = 0


@dataclass(frozen=True)
class ExperimentConfig:
    world: WorldConfig = field(default_factory=WorldConfig)
    method: Method = Method.MEMIT
    n_edits: int = 8
    attack: AttackConfig = field(default_factory=AttackConfig)
    defense: DefenseSpec | None = None
    cov_mode: CovMode = field(default_factory=CovMode)
    trials: int = 1
    out_dir: str = "out"
    alphas: tuple[float, ...] = DEFAULT_ALPHAS

    def to_dict(self) -> dict:
        d = {
            "world": asdict(self.world),
            "method": self.method.value,
            "n_edits": self.n_edits,
            "attack": {
                "rank_rel_tol": self.attack.rank_rel_tol,
                "generic_template_id": self.attack.generic_template_id,
                "subject_candidates": _opt_list(self.attack.subject_candidates),
                "prompt_candidates": _opt_list(self.attack.prompt_candidates),
                "n_r": self.attack.n_r,
                "epsilon": self.attack.epsilon,
            },
            "defense": None,
            "cov_mode": "exact" if self.cov_mode.kind == "exact"
            else {self.cov_mode.kind: self.cov_mode.value},
            "trials": self.trials,
            "out_dir": self.out_dir,
            "alphas": list(self.alphas),
        }
        if self.defense is not None:
            d["defense"] = {
                "alpha": self.defense.alpha,
                "lambda": self.defense.lam,
                "decoy_subject_ids": _opt_list(self.defense.decoy_subject_ids),
                "decoy_template_id": self.defense.decoy_template_id,
            }
        return d


def _opt_list(x):
    return None if x is None else [int(v) for v in x]


# Config parsing

def _line_of(text: str, key: str) -> int | None:
    m = re.search(r'"%s"\s*:' % re.escape(key), text)
    return text.count("\n", 0, m.start()) + 1 if m else None


class _Parser:
    def __init__(self, text: str):
        self.text = text

    def fail(self, key: str, message: str):
        raise ConfigError(message, _line_of(self.text, key))

    def section(self, obj, allowed: Sequence[str], where: str) -> dict:
        if not isinstance(obj, dict):
            self.fail(where, f"'{where}' must be an object")
        for key in obj:
            if key not in allowed:
                self.fail(key, f"unknown key '{key}' in {where}")
        return obj

    def integer(self, obj: dict, key: str, default, minimum=None, nullable=False):
        if key not in obj:
            return default
        v = obj[key]
        if v is None and nullable:
            return None
        if isinstance(v, bool) or not isinstance(v, int):
            self.fail(key, f"'{key}' must be an integer")
        if minimum is not None and v < minimum:
            self.fail(key, f"'{key}' must be at least {minimum}")
        return v

    def number(self, obj: dict, key: str, default, nullable=False):
        if key not in obj:
            return default
        v = obj[key]
        if v is None and nullable:
            return None
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            self.fail(key, f"'{key}' must be a number")
        return float(v)

    def id_list(self, obj: dict, key: str):
        if key not in obj or obj[key] is None:
            return None
        v = obj[key]
        if not isinstance(v, list) or not all(isinstance(i, int) and not isinstance(i, bool)
                                              for i in v):
            self.fail(key, f"'{key}' must be a list of integers or null")
        return tuple(v)


_WORLD_INT = {"d_in", "d_out", "vocab", "n_subjects", "n_templates", "seed", "n_preserved"}
_TOP_KEYS = ("world", "method", "n_edits", "attack", "defense", "cov_mode", "trials",
             "out_dir", "alphas")


def parse_config(text: str) -> ExperimentConfig:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc.msg}", exc.lineno) from None
    ps = _Parser(text)
    ps.section(raw, _TOP_KEYS, "config")

    wraw = ps.section(raw.get("world", {}), [f.name for f in fields(WorldConfig)], "world")
    wkw = {}
    for f in fields(WorldConfig):
        if f.name in wraw:
            if f.name in _WORLD_INT:
                wkw[f.name] = ps.integer(wraw, f.name, None, nullable=f.name == "n_preserved")
            else:
                wkw[f.name] = ps.number(wraw, f.name, None, nullable=f.name == "cov_floor")
    try:
        world = WorldConfig(**wkw)
    except EditLeakError as exc:
        raise ConfigError(str(exc), _line_of(text, "world")) from None

    method_raw = raw.get("method", "MEMIT")
    try:
        method = Method.parse(method_raw)
    except EditLeakError:
        ps.fail("method", f"unknown method {method_raw!r}")
    n_edits = ps.integer(raw, "n_edits", 8, minimum=1)
    if method is Method.ROME and n_edits != 1:
        ps.fail("n_edits", "ROME edits exactly one fact, so n_edits must be 1")
    if n_edits > world.n_subjects:
        ps.fail("n_edits", "n_edits exceeds the number of subjects")

    araw = ps.section(raw.get("attack", {}), [f.name for f in fields(AttackConfig)], "attack")
    try:
        attack = AttackConfig(
            rank_rel_tol=ps.number(araw, "rank_rel_tol", None, nullable=True),
            generic_template_id=ps.integer(araw, "generic_template_id", 0, minimum=0),
            subject_candidates=ps.id_list(araw, "subject_candidates"),
            prompt_candidates=ps.id_list(araw, "prompt_candidates"),
            n_r=ps.integer(araw, "n_r", 5, minimum=1),
            epsilon=ps.number(araw, "epsilon", 1e-9),
        )
    except EditLeakError as exc:
        raise ConfigError(str(exc), _line_of(text, "attack")) from None
    if attack.generic_template_id >= world.n_templates:
        ps.fail("generic_template_id", "generic_template_id out of range")

    defense = None
    if raw.get("defense") is not None:
        draw = ps.section(raw["defense"], ["alpha", "lambda", "decoy_subject_ids",
                                           "decoy_template_id"], "defense")
        defense = DefenseSpec(
            alpha=ps.number(draw, "alpha", 3.0),
            lam=ps.number(draw, "lambda", cam.DEFAULT_LAMBDA),
            decoy_subject_ids=ps.id_list(draw, "decoy_subject_ids"),
            decoy_template_id=ps.integer(draw, "decoy_template_id", 0, minimum=0),
        )
        if defense.alpha < 0:
            ps.fail("alpha", "alpha must be nonnegative")
        if defense.lam < 0:
            ps.fail("lambda", "lambda must be nonnegative")
        if defense.decoy_subject_ids is not None and len(defense.decoy_subject_ids) != n_edits:
            ps.fail("decoy_subject_ids", "need exactly n_edits decoy subjects")

    cov_mode = _parse_cov_mode(ps, raw.get("cov_mode", "exact"))
    trials = ps.integer(raw, "trials", 1, minimum=1)
    out_dir = raw.get("out_dir", "out")
    if not isinstance(out_dir, str):
        ps.fail("out_dir", "'out_dir' must be a string")
    alphas = raw.get("alphas", list(DEFAULT_ALPHAS))
    if (not isinstance(alphas, list) or not alphas
            or not all(isinstance(a, (int, float)) and not isinstance(a, bool) and a >= 0
                       for a in alphas)):
        ps.fail("alphas", "'alphas' must be a nonempty list of nonnegative numbers")
    return ExperimentConfig(world, method, n_edits, attack, defense, cov_mode, trials,
                            out_dir, tuple(float(a) for a in alphas))


def _parse_cov_mode(ps: _Parser, v) -> CovMode:
    if v == "exact":
        return CovMode()
    if isinstance(v, dict) and len(v) == 1:
        (kind, value), = v.items()
        if kind in ("estimated", "shifted"):
            if isinstance(value, bool) or not isinstance(value, int) or value < (
                    1 if kind == "estimated" else 0):
                ps.fail("cov_mode", f"cov_mode {kind} needs a positive integer")
            return CovMode(kind, value)
    ps.fail("cov_mode", "cov_mode must be \"exact\", {\"estimated\": n} or {\"shifted\": seed}")


def load_config(path: str | Path | None) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig()
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    return parse_config(text)


# Pipelines

@dataclass
class TrialResult:
    trial: int
    batch: EditBatch
    report: AttackReport
    metrics: RecallTable
    graybox: RecallTable
    consistency_residual: float | None = None
    alpha: float | None = None


def editor_side(world: SyntheticWorld, method: Method) -> CovOrProj:
    """What the editor used: the exact covariance, or the null-space projector."""
    if method is Method.ALPHAEDIT:
        return world.projector()
    return world.population_covariance()


def attacker_side(world: SyntheticWorld, cfg: ExperimentConfig, trial: int) -> CovOrProj:
    if cfg.method is Method.ALPHAEDIT:
        return world.projector()
    mode = cfg.cov_mode
    if mode.kind == "estimated":
        return world.estimated_covariance(mode.value, stream_index=trial)
    if mode.kind == "shifted":
        return world.shifted_covariance(mode.value)
    return world.population_covariance()


def decoys_for(world: SyntheticWorld, cfg: ExperimentConfig, batch: EditBatch,
               trial: int) -> list[int]:
    spec = cfg.defense
    if spec is not None and spec.decoy_subject_ids is not None:
        return list(spec.decoy_subject_ids)
    rng = rng_stream(world.cfg.seed, Stream.DECOY, trial)
    return cam.sample_decoys(rng, world.n_subjects, batch.subject_ids, batch.n)


def run_trial(world: SyntheticWorld, cfg: ExperimentConfig, trial: int,
              alpha: float | None = None) -> TrialResult:
    """One edit, optional camouflage at strength alpha, attack, and scoring."""
    c_or_p = editor_side(world, cfg.method)
    batch, dw = synthesize_edit_batch(world, cfg.n_edits, cfg.method, c_or_p, call_index=trial)
    observed, consistency = dw, None
    spec = cfg.defense
    if alpha is None and spec is not None:
        alpha = spec.alpha
    if alpha is not None:
        spec = spec or DefenseSpec()
        params = cam.DefenseParams(alpha, decoys_for(world, cfg, batch, trial), spec.lam)
        observed, _ = cam.defend(world, cfg.method, dw, batch, c_or_p, params,
                                 spec.decoy_template_id)
        consistency = cam.consistency_residual(observed, dw, batch.k)
    report = run_attack(world, observed, attacker_side(world, cfg, trial), cfg.attack,
                        graybox=True)
    report.metrics = eval_metrics(report, batch)
    return TrialResult(trial, batch, report, report.metrics,
                       eval_metrics(report, batch, graybox=True), consistency, alpha)


def thread_cap() -> int:
    raw = os.environ.get("EDITLEAK_THREADS")
    if raw is None or raw == "":
        return os.cpu_count() or 1
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"EDITLEAK_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError("EDITLEAK_THREADS must be a positive integer")
    return n


def map_trials(fn: Callable[[int], TrialResult], trials: int) -> list[TrialResult]:
    """Run trials, possibly in parallel; results come back in trial order."""
    workers = min(thread_cap(), trials)
    if workers <= 1:
        return [fn(t) for t in range(trials)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, range(trials)))


def run_trials(world: SyntheticWorld, cfg: ExperimentConfig,
               alpha: float | None = None) -> list[TrialResult]:
    # Warm the shared caches before threads start.
    editor_side(world, cfg.method)
    return map_trials(lambda t: run_trial(world, cfg, t, alpha), cfg.trials)


def _mean_std(xs) -> dict:
    a = np.asarray(list(xs), dtype=np.float64)
    return {"mean": float(a.mean()), "std": float(a.std())}


def summarize(results: list[TrialResult]) -> dict:
    m = [r.metrics for r in results]
    out = {
        "trials": len(results),
        "recall_at_n": _mean_std(x.subject_recall_at_n for x in m),
        "mean_rank": _mean_std(x.mean_rank for x in m),
        "top1": _mean_std(x.prompt_top1 for x in m),
        "top5": _mean_std(x.prompt_top5 for x in m),
        "top20": _mean_std(x.prompt_top20 for x in m),
        "mean_projection_coeff": _mean_std(x.mean_projection_coeff for x in m),
        "graybox_recall_at_n": _mean_std(r.graybox.subject_recall_at_n for r in results),
        "n_hat": [r.report.n_hat for r in results],
        "rank_mismatch_trials": [r.trial for r in results if r.report.rank_mismatch],
    }
    cons = [r.consistency_residual for r in results if r.consistency_residual is not None]
    if cons:
        out["consistency_residual_max"] = float(max(cons))
    return out


def _fmt(x) -> str:
    return repr(float(x)) if isinstance(x, (float, np.floating)) else str(x)


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(x) for x in row])
    path.write_text(buf.getvalue())


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def trial_rows(cfg: ExperimentConfig, results: list[TrialResult]) -> list[list]:
    return [[r.trial, cfg.world.seed, cfg.method.value, r.batch.n,
             r.metrics.subject_recall_at_n, r.metrics.mean_rank, r.metrics.prompt_top1,
             r.metrics.prompt_top5, r.metrics.prompt_top20] for r in results]


def cmd_run(cfg: ExperimentConfig, world: SyntheticWorld | None = None) -> dict:
    """Per-trial CSV, per-trial report JSON and an aggregate summary."""
    world = world or new_world(cfg.world)
    results = run_trials(world, cfg)
    out = Path(cfg.out_dir)
    (out / "reports").mkdir(parents=True, exist_ok=True)
    _write_csv(out / "trials.csv", TRIAL_CSV_HEADER, trial_rows(cfg, results))
    for r in results:
        doc = r.report.to_dict()
        doc["truth"] = {"subject_ids": list(r.batch.subject_ids),
                        "template_ids": list(r.batch.template_ids),
                        "object_token_ids": list(r.batch.object_token_ids)}
        doc["graybox_metrics"] = r.graybox.to_dict()
        _write_json(out / "reports" / f"trial_{r.trial:03d}.json", doc)
    summary = {"config": cfg.to_dict(), "cov_mode": cfg.cov_mode.label(),
               "summary": summarize(results)}
    _write_json(out / "summary.json", summary)
    return summary


@dataclass
class SweepRow:
    alpha: float
    mean_rank: float
    rank_std: float
    recall: float
    recall_std: float
    consistency_residual: float

    def csv_row(self) -> list:
        return [self.alpha, self.mean_rank, self.rank_std, self.recall,
                self.consistency_residual]


def sweep_rows(world: SyntheticWorld, cfg: ExperimentConfig,
               alphas: Sequence[float]) -> list[SweepRow]:
    rows = []
    for a in alphas:
        results = run_trials(world, cfg, alpha=float(a))
        ranks = [r.metrics.mean_rank for r in results]
        recalls = [r.metrics.subject_recall_at_n for r in results]
        rows.append(SweepRow(float(a), float(np.mean(ranks)), float(np.std(ranks)),
                             float(np.mean(recalls)), float(np.std(recalls)),
                             float(max(r.consistency_residual for r in results))))
    return rows


def cmd_sweep_alpha(cfg: ExperimentConfig, alphas: Sequence[float] | None = None,
                    world: SyntheticWorld | None = None) -> list[SweepRow]:
    world = world or new_world(cfg.world)
    alphas = cfg.alphas if alphas is None else tuple(alphas)
    rows = sweep_rows(world, cfg, alphas)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / "sweep.csv", SWEEP_CSV_HEADER, [r.csv_row() for r in rows])
    _write_json(out / "sweep.json", {"config": cfg.to_dict(),
                                     "rows": [asdict(r) for r in rows]})
    return rows


def verify_suite(world: SyntheticWorld, cfg: ExperimentConfig) -> list[vf.CheckResult]:
    """All theorem checks across the three editing methods."""
    n = cfg.n_edits if cfg.method is not Method.ROME else 8
    c = world.population_covariance()
    p = world.projector()
    batches = {
        Method.ROME: synthesize_edit_batch(world, 1, Method.ROME, c)[0],
        Method.MEMIT: synthesize_edit_batch(world, n, Method.MEMIT, c)[0],
        Method.ALPHAEDIT: synthesize_edit_batch(world, n, Method.ALPHAEDIT, p)[0],
    }
    side = {Method.ROME: c, Method.MEMIT: c, Method.ALPHAEDIT: p}
    spec = cfg.defense or DefenseSpec()
    results = [vf.check_woodbury(batches[Method.MEMIT], c, p)]
    for m in Method:
        results.append(vf.check_subspace_recovery(batches[m], side[m], m))
    for i, scale in enumerate((0.5, 2.0, 4.0)):
        results.append(vf.check_noisy_cov_bound(world, batches[Method.MEMIT], c, scale,
                                                cfg.attack, stream_index=i))
    for i, m in enumerate(Method):
        b = batches[m]
        rng = rng_stream(world.cfg.seed, Stream.DECOY, 1000 + i)
        decoys = cam.sample_decoys(rng, world.n_subjects, b.subject_ids, b.n)
        params = cam.DefenseParams(spec.alpha, decoys, spec.lam)
        k_dec = cam.build_decoy_keys(world, decoys, spec.decoy_template_id, b.subject_ids)
        k_tilde = cam.aggregate_camouflage_keys(b.k, k_dec, spec.alpha)
        results.extend(vf.check_defense_theorems(b, params, side[m], m, k_tilde,
                                                 seed=world.cfg.seed + 41))
        results.append(vf.check_degeneration(b, side[m], m, k_dec))
    return results


def render_checks(results: list[vf.CheckResult]) -> str:
    lines = [f"{'check':32s} {'method':18s} {'status':8s} {'witness':>12s} {'tol':>10s}"]
    for r in results:
        status = ("PASS" if r.passed else "FAIL") if r.asserted else "RECORDED"
        lines.append(f"{r.name:32s} {r.method:18s} {status:8s} {r.witness:12.4g} "
                     f"{r.tolerance:10.3g}")
    return "\n".join(lines)


def cmd_verify(cfg: ExperimentConfig, world: SyntheticWorld | None = None,
               stream=None) -> tuple[list[vf.CheckResult], bool]:
    world = world or new_world(cfg.world)
    results = verify_suite(world, cfg)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "verify.json", {"config": cfg.to_dict(),
                                      "checks": [r.to_dict() for r in results]})
    print(render_checks(results), file=stream or sys.stdout)
    ok = all(r.passed for r in results if r.asserted)
    return results, ok


def cmd_world(cfg: ExperimentConfig) -> dict:
    world = new_world(cfg.world)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "world.txt").write_text(dump_world(world))
    subs = list(range(min(world.n_subjects, 64)))
    inv = invariance_report(world, subs, list(range(world.n_templates)))
    diag = np.diag(inv)
    off = inv[~np.eye(len(subs), dtype=bool)] if len(subs) > 1 else np.zeros(1)
    e = world.subject_embeddings
    gram = e.T @ e
    summary = {
        "config": asdict(world.cfg),
        "min_within_subject_cos": float(diag.min()),
        "max_cross_subject_cos_floor": float(off.max()),
        "max_pairwise_subject_cos": float(np.max(np.abs(gram - np.eye(len(gram))))),
    }
    _write_json(out / "world_summary.json", summary)
    return summary


# CLI

def _alphas_arg(text: str) -> tuple[float, ...]:
    try:
        vals = tuple(float(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad alpha list {text!r}") from None
    if not vals or any(a < 0 for a in vals):
        raise argparse.ArgumentTypeError("alphas must be nonnegative")
    return vals


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="editleak",
                                 description="Weight-update forensics laboratory.")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, text in [("world", "generate a synthetic world"),
                       ("run", "edit, attack and score"),
                       ("sweep", "camouflage strength sweep"),
                       ("verify", "run the theorem checks")]:
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", help="JSON experiment config")
        p.add_argument("--seed", type=int, help="override world.seed")
        p.add_argument("--out", help="override out_dir")
        p.add_argument("--trials", type=int, help="override trials")
        p.add_argument("--alphas", type=_alphas_arg, help="comma-separated alphas (sweep)")
        p.add_argument("-v", "--verbose", action="store_true")
    return ap


def _apply_overrides(cfg: ExperimentConfig, args) -> ExperimentConfig:
    if args.seed is not None:
        if not 0 <= args.seed < 2**64:
            raise ConfigError("--seed must be a 64-bit unsigned integer")
        cfg = replace(cfg, world=replace(cfg.world, seed=args.seed))
    if args.out is not None:
        cfg = replace(cfg, out_dir=args.out)
    if args.trials is not None:
        if args.trials < 1:
            raise ConfigError("--trials must be positive")
        cfg = replace(cfg, trials=args.trials)
    if args.alphas is not None:
        cfg = replace(cfg, alphas=args.alphas)
    return cfg


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors, which is also our config-error code.
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _apply_overrides(load_config(args.config), args)
        thread_cap()
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    try:
        if args.command == "world":
            s = cmd_world(cfg)
            print(f"world written to {cfg.out_dir}; min within-subject cos "
                  f"{s['min_within_subject_cos']:.4f}")
        elif args.command == "run":
            s = cmd_run(cfg)["summary"]
            print(f"recall@N {s['recall_at_n']['mean']:.4f} +- {s['recall_at_n']['std']:.4f}  "
                  f"mean rank {s['mean_rank']['mean']:.2f}  top5 {s['top5']['mean']:.3f}  "
                  f"gray-box recall {s['graybox_recall_at_n']['mean']:.4f}")
        elif args.command == "sweep":
            if cfg.defense is None:
                cfg = replace(cfg, defense=DefenseSpec())
            for r in cmd_sweep_alpha(cfg):
                print(f"alpha={r.alpha:g} mean_rank={r.mean_rank:.2f} +- {r.rank_std:.2f} "
                      f"recall={r.recall:.3f} consistency={r.consistency_residual:.2e}")
        else:
            _, ok = cmd_verify(cfg)
            return 0 if ok else 1
    except EditLeakError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError, np.linalg.LinAlgError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
