import csv
import json
import math

import numpy as np
import pytest

from invq import cli, io
from invq.experiments import RunRecord, run_algorithm, summarize
from invq.objectworld import ObjectworldSpec, generate


@pytest.fixture
def env(tmp_path):
    path = tmp_path / "env.json"
    assert cli.main(["gen-env", "--n", "6", "--objects", "6", "--seed", "1",
                     "--out", str(path)]) == 0
    return path


def read_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def test_gen_env_deterministic(tmp_path, env):
    again = tmp_path / "again.json"
    cli.main(["gen-env", "--n", "6", "--objects", "6", "--seed", "1", "--out", str(again)])
    assert env.read_bytes() == again.read_bytes()


def test_gen_env_invalid(tmp_path, capsys):
    code = cli.main(["gen-env", "--n", "8", "--objects", "100", "--out", str(tmp_path / "x")])
    assert code != 0
    assert "100 objects" in capsys.readouterr().err


def test_sample_and_inspect(tmp_path, env, capsys):
    demos = tmp_path / "demos.json"
    assert cli.main(["sample-demos", "--env", str(env), "--episodes", "10",
                     "--out", str(demos), "--features-sidecar"]) == 0
    assert (tmp_path / "demos.features.npy").exists()
    capsys.readouterr()
    cli.main(["inspect", str(demos)])
    assert "episodes=10" in capsys.readouterr().out
    cli.main(["inspect", str(env)])
    assert "states=36" in capsys.readouterr().out


def test_run_layout_and_audit(tmp_path, env):
    out = tmp_path / "run"
    code = cli.main(["run", "--algorithm", "iavi", "--env", str(env), "--exact",
                     "--seeds", "0", "1", "2", "--out", str(out), "--audit"])
    assert code == 0
    assert {p.name for p in out.iterdir()} >= {"manifest.json", "records.json", "summary.csv",
                                              "seed_0", "seed_1", "seed_2"}
    doc = io.read_json(out / "records.json")
    assert len(doc["records"]) == 3
    assert all(r["converged"] and r["evd"] < 0.1 for r in doc["records"])
    rows = read_csv(out / "summary.csv")
    assert rows[0]["n_runs"] == "3" and "evd_sd" in rows[0]
    records = [RunRecord(**r) for r in doc["records"]]
    assert cli.audit_summary(records, doc["summary"])


def test_run_manifest_and_evd(tmp_path, env, capsys):
    manifest = tmp_path / "m.json"
    manifest.write_text(json.dumps({"algorithm": "iql", "env": str(env), "seeds": [4],
                                    "out": str(tmp_path / "r"),
                                    "config": {"episodes": 20, "iql": {"alpha_r": 0.05}}}))
    assert cli.main(["run", "--manifest", str(manifest)]) == 0
    capsys.readouterr()
    assert cli.main(["evd", "--env", str(env),
                     "--reward", str(tmp_path / "r" / "seed_4" / "reward.json")]) == 0
    evd = float(capsys.readouterr().out)
    rec = io.read_json(tmp_path / "r" / "records.json")["records"][0]
    assert evd == pytest.approx(rec["evd"], abs=1e-6)


def test_run_bad_manifest(tmp_path, env):
    assert cli.main(["run", "--algorithm", "iavi", "--env", str(tmp_path / "missing.json"),
                     "--out", str(tmp_path / "o")]) == 2
    assert cli.main(["run", "--env", str(env), "--out", str(tmp_path / "o")]) == 2


def test_errors_recorded_per_seed(tmp_path, env):
    # a MaxEnt learning rate of zero is rejected inside the run, not by the parser
    out = tmp_path / "bad"
    code = cli.main(["run", "--algorithm", "maxent", "--env", str(env), "--seeds", "0", "1",
                     "--out", str(out), "--config", '{"maxent": {"lr": 0}}'])
    doc = io.read_json(out / "records.json")
    assert code == 1
    assert all(r["error"] and "lr" in r["error"] for r in doc["records"])
    assert doc["summary"]["n_failed"] == 2


def test_parallel_jobs_match_serial(tmp_path, env):
    args = ["run", "--algorithm", "iql", "--env", str(env), "--seeds", "0", "1",
            "--config", '{"episodes": 10}']
    cli.main(args + ["--out", str(tmp_path / "a")])
    cli.main(args + ["--out", str(tmp_path / "b"), "--jobs", "2"])
    strip = lambda p: [RunRecord(**r).metrics() for r in io.read_json(p)["records"]]  # noqa
    assert strip(tmp_path / "a" / "records.json") == strip(tmp_path / "b" / "records.json")


def test_curve(tmp_path, env):
    out = tmp_path / "curve.csv"
    args = ["curve", "--algorithm", "iavi", "--env", str(env), "--counts", "4", "64",
            "--seeds", "0", "1", "--out", str(out)]
    assert cli.main(args) == 0
    rows = read_csv(out)
    assert [r["traj_count"] for r in rows] == ["4", "64"]
    first = out.read_bytes()
    cli.main(args)
    assert out.read_bytes() == first


@pytest.mark.parametrize("counts", [[], ["64", "4"]])
def test_curve_usage_errors(tmp_path, env, counts):
    assert cli.main(["curve", "--algorithm", "iavi", "--env", str(env), "--counts", *counts,
                     "--out", str(tmp_path / "c.csv")]) == 2


def test_summarize_math():
    recs = [RunRecord("iavi", s, evd, 1.0 + s, 1, True) for s, evd in enumerate([1.0, 2.0, 3.0])]
    recs.append(RunRecord("iavi", 9, math.nan, 0.0, 0, False, error="boom"))
    s = summarize(recs)
    assert (s["n_runs"], s["n_failed"]) == (3, 1)
    assert s["evd_mean"] == 2.0 and s["evd_sd"] == 1.0


@pytest.mark.parametrize("algorithm", ["iavi", "iql", "ciql", "maxent-1step"])
def test_reruns_identical(algorithm):
    inst = generate(ObjectworldSpec(n=5, n_objects=5, seed=2))
    cfg = {"episodes": 16, "maxent": {"max_outer": 20}}
    a, _ = run_algorithm(algorithm, inst, 3, config=cfg)
    b, _ = run_algorithm(algorithm, inst, 3, config=cfg)
    assert a.metrics() == b.metrics()
    assert np.isfinite(a.evd)


def test_constrained_run_reports_violations():
    inst = generate(ObjectworldSpec(n=6, n_objects=6, seed=1))
    rec, out = run_algorithm("ciql", inst, 0, config={"episodes": 30})
    assert rec.violations == 0
    assert out["policy"].shape == (36, 5)


def test_unknown_algorithm():
    with pytest.raises(ValueError):
        run_algorithm("gail", generate(ObjectworldSpec(n=3, n_objects=1)), 0)
