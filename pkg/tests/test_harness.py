import csv
import json
from dataclasses import replace

import pytest

from editleak import harness as hz
from editleak.editors import Method
from editleak.errors import ConfigError
from editleak.worldsim import WorldConfig, new_world


def write(tmp_path, obj, name="cfg.json"):
    p = tmp_path / name
    p.write_text(obj if isinstance(obj, str) else json.dumps(obj, indent=2))
    return str(p)


def read_csv(path):
    with open(path) as f:
        return list(csv.reader(f))


def test_parse_defaults():
    cfg = hz.parse_config("{}")
    assert cfg.method is Method.MEMIT and cfg.n_edits == 8 and cfg.defense is None
    assert cfg.world == WorldConfig()
    assert hz.parse_config(json.dumps(cfg.to_dict())) == cfg


def test_parse_full_config():
    text = json.dumps({
        "world": {"seed": 4, "d_in": 64, "d_out": 48, "n_preserved": None},
        "method": "alphaedit", "n_edits": 4,
        "attack": {"n_r": 3, "subject_candidates": [0, 1, 2, 3, 4, 5]},
        "defense": {"alpha": 1.5, "lambda": 1e-7},
        "cov_mode": {"estimated": 100}, "trials": 2, "alphas": [0, 2],
    })
    cfg = hz.parse_config(text)
    assert cfg.method is Method.ALPHAEDIT and cfg.world.d_in == 64
    assert cfg.defense.alpha == 1.5 and cfg.defense.lam == 1e-7
    assert cfg.cov_mode == hz.CovMode("estimated", 100) and cfg.alphas == (0.0, 2.0)
    assert cfg.attack.subject_candidates == (0, 1, 2, 3, 4, 5)


@pytest.mark.parametrize("text,line", [
    ('{\n  "method": "MEMIT",\n  "bogus": 1\n}', 3),
    ('{\n  "world": {\n    "d_inn": 64\n  }\n}', 3),
    ('{\n  "n_edits": 2,\n  "method": "ROME"\n}', 2),
    ('{\n  "trials": 0\n}', 2),
    ('{\n  "method": "SGD"\n}', 2),
    ('{\n  "cov_mode": "approx"\n}', 2),
    ('{\n  "trials": 1,\n', 3),
])
def test_parse_errors_carry_line(text, line):
    with pytest.raises(ConfigError) as exc:
        hz.parse_config(text)
    assert exc.value.line == line
    assert str(exc.value).startswith(f"line {line}: ")


def test_cli_config_errors_exit_2(tmp_path, capsys):
    assert hz.main(["run", "--config", write(tmp_path, '{\n  "nope": 1\n}')]) == 2
    assert "line 2" in capsys.readouterr().err
    assert hz.main(["run", "--config",
                    write(tmp_path, {"method": "ROME", "n_edits": 2})]) == 2
    assert hz.main(["run", "--config", str(tmp_path / "missing.json")]) == 2
    assert hz.main(["frobnicate"]) == 2
    assert hz.main(["run", "--alphas", "1,-2"]) == 2


def test_thread_cap(monkeypatch):
    monkeypatch.setenv("EDITLEAK_THREADS", "3")
    assert hz.thread_cap() == 3
    monkeypatch.setenv("EDITLEAK_THREADS", "0")
    with pytest.raises(ConfigError):
        hz.thread_cap()
    monkeypatch.setenv("EDITLEAK_THREADS", "many")
    assert hz.main(["world", "--out", "/nonexistent-dir-unused"]) == 2


def test_run_seed13(tmp_path):
    out = tmp_path / "run"
    assert hz.main(["run", "--seed", "13", "--out", str(out)]) == 0
    rows = read_csv(out / "trials.csv")
    assert rows[0] == hz.TRIAL_CSV_HEADER
    assert float(rows[1][4]) == 1.0
    report = json.loads((out / "reports" / "trial_000.json").read_text())
    assert len(report["truth"]["subject_ids"]) == 8
    assert json.loads((out / "summary.json").read_text())["summary"]["trials"] == 1


def test_run_is_stable_across_trials():
    # Each trial draws a fresh batch, but recall stays perfect on the exact covariance.
    cfg = hz.ExperimentConfig(world=WorldConfig(seed=13, eta=0.05), trials=5)
    s = hz.summarize(hz.run_trials(new_world(cfg.world), cfg))
    assert s["recall_at_n"] == {"mean": 1.0, "std": 0.0}
    assert s["n_hat"] == [8] * 5 and s["rank_mismatch_trials"] == []


def test_threads_do_not_change_results(tmp_path, monkeypatch):
    outs = []
    for threads in ("1", "4"):
        monkeypatch.setenv("EDITLEAK_THREADS", threads)
        out = tmp_path / threads
        assert hz.main(["run", "--trials", "4", "--out", str(out)]) == 0
        summary = json.loads((out / "summary.json").read_text())
        summary["config"].pop("out_dir")
        outs.append(((out / "trials.csv").read_bytes(), summary))
    assert outs[0] == outs[1]


def test_sweep_alpha_zero_matches_plain_run():
    cfg = hz.ExperimentConfig(world=WorldConfig(seed=13), trials=2)
    w = new_world(cfg.world)
    plain = hz.run_trials(w, cfg)
    row, = hz.sweep_rows(w, cfg, [0.0])
    assert row.mean_rank == pytest.approx(sum(r.metrics.mean_rank for r in plain) / 2)
    assert row.recall == pytest.approx(sum(r.metrics.subject_recall_at_n for r in plain) / 2)
    assert row.consistency_residual <= 1e-6


def test_sweep_cli(tmp_path):
    out = tmp_path / "sweep"
    assert hz.main(["sweep", "--seed", "23", "--trials", "3", "--alphas", "0,1,3,5",
                    "--out", str(out)]) == 0
    rows = read_csv(out / "sweep.csv")
    assert rows[0] == hz.SWEEP_CSV_HEADER
    ranks = [float(r[1]) for r in rows[1:]]
    assert ranks == sorted(ranks)
    assert all(float(r[4]) <= 1e-6 for r in rows[1:])
    assert len(json.loads((out / "sweep.json").read_text())["rows"]) == 4


def test_verify_cli(tmp_path, capsys):
    out = tmp_path / "verify"
    assert hz.main(["verify", "--out", str(out)]) == 0
    checks = json.loads((out / "verify.json").read_text())["checks"]
    names = {c["name"] for c in checks}
    assert {"woodbury", "subspace_recovery", "noisy_covariance", "defense_uniqueness",
            "defense_indistinguishability", "defense_non_recoverability",
            "degeneration"} <= names
    assert {c["method"] for c in checks if c["name"] == "subspace_recovery"} == {
        m.value for m in Method}
    assert "PASS" in capsys.readouterr().out


def test_verify_outputs_are_byte_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert hz.main(["verify", "--out", str(a)]) == 0
    assert hz.main(["verify", "--out", str(b)]) == 0
    ja = json.loads((a / "verify.json").read_text())
    jb = json.loads((b / "verify.json").read_text())
    ja["config"].pop("out_dir"), jb["config"].pop("out_dir")
    assert ja == jb


def test_world_cli(tmp_path):
    out = tmp_path / "w"
    cfg = write(tmp_path, {"world": {"d_in": 32, "d_out": 24, "vocab": 64,
                                     "n_subjects": 40, "n_templates": 4}})
    assert hz.main(["world", "--config", cfg, "--out", str(out)]) == 0
    s = json.loads((out / "world_summary.json").read_text())
    assert s["config"]["d_in"] == 32 and 0 < s["min_within_subject_cos"] <= 1
    assert "d_in = 32" in (out / "world.txt").read_text()


def test_defended_run_records_consistency():
    cfg = hz.ExperimentConfig(world=WorldConfig(seed=23), defense=hz.DefenseSpec(alpha=3.0))
    r = hz.run_trial(new_world(cfg.world), cfg, 0)
    assert r.alpha == 3.0 and r.consistency_residual <= 1e-6
    cfg2 = replace(cfg, method=Method.ROME, n_edits=1)
    r2 = hz.run_trial(new_world(cfg.world), cfg2, 0)
    assert r2.batch.n == 1 and r2.consistency_residual <= 1e-6
