"""Command line entry point: ``invq <subcommand>``.

Subcommands: gen-env, sample-demos, run, curve, evd, inspect.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import io, objectworld
from .experiments import ALGORITHMS, RunRecord, run_algorithm, summarize
from .mdp import expected_value_difference, sample_trajectories

log = logging.getLogger("invq")

SUMMARY_FIELDS = ("algorithm", "n_runs", "n_failed", "evd_mean", "evd_sd",
                  "wall_clock_mean", "wall_clock_sd")
CURVE_FIELDS = ("traj_count", "evd_mean", "evd_sd", "n_runs")


class UsageError(Exception):
    pass


def _load_config(value):
    if not value:
        return {}
    path = Path(value)
    text = path.read_text(encoding="utf-8") if path.exists() else value
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise UsageError(f"--config is neither a JSON file nor inline JSON: {exc}") from None
    if not isinstance(cfg, dict):
        raise UsageError("--config must be a JSON object")
    return cfg


def _load_instance(path):
    if not Path(path).exists():
        raise UsageError(f"environment file not found: {path}")
    return io.instance_from_dict(io.read_json(path))


def cmd_gen_env(args):
    spec = objectworld.ObjectworldSpec(n=args.n, n_colors=args.colors, n_objects=args.objects,
                                       wind=args.wind, gamma=args.gamma, seed=args.seed,
                                       binary_features=args.binary)
    try:
        inst = objectworld.generate(spec)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    io.write_json(args.out, io.instance_to_dict(inst))
    print(f"wrote {args.out} ({inst.n_states} states, digest {inst.digest()[:12]})")
    return 0


def cmd_sample_demos(args):
    inst = _load_instance(args.env)
    policy, _ = objectworld.expert(inst)
    demos = sample_trajectories(inst.mdp, policy, args.episodes, args.horizon, args.seed)
    if args.features_sidecar:
        io.save_replay_buffer(args.out, demos, inst.feature_matrix)
    else:
        io.write_json(args.out, io.trajectories_to_dict(demos))
    print(f"wrote {args.out} ({len(demos)} episodes, {demos.n_transitions} transitions)")
    return 0


def _run_one(job):
    algorithm, env_path, demo_path, exact, config, seed, seed_dir = job
    inst = io.instance_from_dict(io.read_json(env_path))
    demos = io.trajectories_from_dict(io.read_json(demo_path)) if demo_path else None
    try:
        record, tables = run_algorithm(algorithm, inst, seed, demos=demos, exact=exact,
                                       config=config)
    except Exception as exc:  # recorded per seed, remaining seeds continue
        return RunRecord(algorithm, seed, math.nan, 0.0, 0, False,
                         error=f"{type(exc).__name__}: {exc}",
                         artifacts={"traceback": traceback.format_exc()})
    seed_dir = Path(seed_dir)
    seed_dir.mkdir(parents=True, exist_ok=True)
    io.write_json(seed_dir / "reward.json", io.table_to_dict(tables["reward"], "reward"))
    record.artifacts["reward"] = str(seed_dir / "reward.json")
    if tables.get("policy") is not None:
        io.write_json(seed_dir / "policy.json", io.table_to_dict(tables["policy"], "policy"))
        record.artifacts["policy"] = str(seed_dir / "policy.json")
    if tables.get("log"):
        path = seed_dir / "train_log.csv"
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, fieldnames=list(tables["log"][0]))
            w.writeheader()
            w.writerows(tables["log"])
        record.artifacts["log"] = str(path)
    return record


def _map_jobs(jobs, n_workers):
    if n_workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=n_workers) as pool:
            return list(pool.map(_run_one, jobs))
    return [_run_one(j) for j in jobs]


def _manifest_from_args(args):
    manifest = {}
    if args.manifest:
        manifest = io.read_json(args.manifest)
    for key in ("algorithm", "env", "demos", "out"):
        value = getattr(args, key, None)
        if value is not None:
            manifest[key] = value
    if args.seeds is not None:
        manifest["seeds"] = args.seeds
    if args.exact:
        manifest["exact"] = True
    if args.config:
        manifest.setdefault("config", {}).update(_load_config(args.config))
    manifest.setdefault("seeds", [0])
    manifest.setdefault("exact", False)
    manifest.setdefault("config", {})
    return validate_manifest(manifest)


def validate_manifest(m):
    if m.get("algorithm") not in ALGORITHMS:
        raise UsageError(f"algorithm must be one of {', '.join(ALGORITHMS)}")
    for key in ("env", "out"):
        if not m.get(key):
            raise UsageError(f"manifest needs '{key}'")
    if not Path(m["env"]).exists():
        raise UsageError(f"environment file not found: {m['env']}")
    if m.get("demos") and not Path(m["demos"]).exists():
        raise UsageError(f"demonstration file not found: {m['demos']}")
    if not m["seeds"]:
        raise UsageError("seeds must be non-empty")
    m["seeds"] = [int(s) for s in m["seeds"]]
    return m


def write_summary_csv(path, rows, fields=SUMMARY_FIELDS):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=fields)
        w.writeheader()
        for row in rows:
            w.writerow({k: row[k] for k in fields})


def audit_summary(records, summary) -> bool:
    again = summarize(records)
    return all(
        (isinstance(v, float) and math.isnan(v) and math.isnan(again[k])) or again[k] == v
        for k, v in summary.items()
    )


def execute_run(m, jobs: int = 1):
    out = Path(m["out"])
    out.mkdir(parents=True, exist_ok=True)
    io.write_json(out / "manifest.json", {"schema": io.SCHEMA, "kind": "manifest", **m})
    work = [(m["algorithm"], m["env"], m.get("demos"), m["exact"], m["config"], seed,
             str(out / f"seed_{seed}")) for seed in m["seeds"]]
    records = _map_jobs(work, jobs)
    summary = summarize(records)
    io.write_json(out / "records.json",
                  {"schema": io.SCHEMA, "kind": "run_records",
                   "records": [asdict(r) for r in records], "summary": summary})
    write_summary_csv(out / "summary.csv", [summary])
    return records, summary


def cmd_run(args):
    m = _manifest_from_args(args)
    records, summary = execute_run(m, args.jobs)
    for r in records:
        status = f"ERROR {r.error}" if r.error else (
            f"evd={r.evd:.4f} time={r.wall_clock:.3f}s iters={r.iterations} "
            f"converged={r.converged}" + ("" if r.violations is None
                                          else f" violations={r.violations}"))
        print(f"{r.algorithm} seed={r.seed} {status}")
    print(f"summary: evd {summary['evd_mean']:.4f} +- {summary['evd_sd']:.4f} over "
          f"{summary['n_runs']} run(s) -> {m['out']}")
    if args.audit and not audit_summary(records, summary):
        print("audit failed: summary does not match per-seed records", file=sys.stderr)
        return 1
    return 0 if summary["n_runs"] else 1


def run_curve(algorithm, inst, counts, seeds, horizon=8, config=None, exact=False):
    """Mean/sd EVD per trajectory count; demos are resampled per (count, seed)."""
    policy, _ = objectworld.expert(inst)
    rows = []
    for count in counts:
        evds = []
        for seed in seeds:
            demos = sample_trajectories(inst.mdp, policy, count, horizon, seed)
            record, _ = run_algorithm(algorithm, inst, seed, demos=demos, exact=exact,
                                      config=config)
            evds.append(record.evd)
        rows.append({"traj_count": count, "evd_mean": float(np.mean(evds)),
                     "evd_sd": float(np.std(evds, ddof=1)) if len(evds) > 1 else 0.0,
                     "n_runs": len(evds)})
    return rows


def cmd_curve(args):
    if not args.counts:
        raise UsageError("--counts needs at least one trajectory count")
    if list(args.counts) != sorted(args.counts):
        raise UsageError("--counts must be ascending")
    inst = _load_instance(args.env)
    rows = run_curve(args.algorithm, inst, args.counts, args.seeds or [0],
                     horizon=args.horizon, config=_load_config(args.config))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_summary_csv(out, rows, CURVE_FIELDS)
    for row in rows:
        print(f"{row['traj_count']:>6} {row['evd_mean']:.4f} +- {row['evd_sd']:.4f}")
    return 0


def cmd_evd(args):
    inst = _load_instance(args.env)
    learned = io.table_from_dict(io.read_json(args.reward), "reward")
    print(f"{expected_value_difference(inst.mdp, inst.true_reward, learned):.6f}")
    return 0


def cmd_inspect(args):
    kind, obj = io.load_any(args.path)
    if kind == "objectworld":
        s = obj.spec
        print(f"objectworld N={s.n} colors={s.n_colors} objects={s.n_objects} wind={s.wind} "
              f"gamma={s.gamma} seed={s.seed}")
        print(f"states={obj.n_states} actions={obj.n_actions} "
              f"features={obj.feature_matrix.shape[1]} digest={obj.digest()[:12]}")
        vals, counts = np.unique(obj.true_reward[:, 0], return_counts=True)
        print("reward cells: " + ", ".join(f"{v:+g}: {c}" for v, c in zip(vals, counts)))
    elif kind == "trajectories":
        print(f"trajectories episodes={len(obj)} transitions={obj.n_transitions} "
              f"horizon={obj.horizon} seed={obj.seed}")
    elif kind == "tabular_mdp":
        print(f"mdp states={obj.n_states} actions={obj.n_actions} gamma={obj.gamma} "
              f"terminals={int(obj.terminal.sum())}")
    elif kind in ("reward", "policy", "q"):
        print(f"{kind} table {obj.shape[0]}x{obj.shape[1]} min={obj.min():.4g} "
              f"max={obj.max():.4g}")
    elif kind == "run_records":
        print(json.dumps(obj["summary"], indent=2))
    else:
        print(json.dumps({k: v for k, v in obj.items() if not isinstance(v, list)}, indent=2))
    return 0


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON overrides (file path or inline JSON)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="invq", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-env", parents=[common], help="generate an Objectworld instance")
    g.add_argument("--n", type=int, default=8)
    g.add_argument("--colors", type=int, default=2)
    g.add_argument("--objects", type=int, default=12)
    g.add_argument("--wind", type=float, default=0.3)
    g.add_argument("--gamma", type=float, default=0.9)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--binary", action="store_true", help="thresholded binary features")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_env)

    d = sub.add_parser("sample-demos", parents=[common], help="sample expert trajectories")
    d.add_argument("--env", required=True)
    d.add_argument("--episodes", type=int, default=64)
    d.add_argument("--horizon", type=int, default=8)
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--features-sidecar", action="store_true",
                   help="also write <out>.features.npy for deep replay buffers")
    d.add_argument("--out", required=True)
    d.set_defaults(func=cmd_sample_demos)

    r = sub.add_parser("run", parents=[common], help="run an algorithm over seeds")
    r.add_argument("--manifest", help="experiment manifest JSON")
    r.add_argument("--algorithm", choices=ALGORITHMS)
    r.add_argument("--env")
    r.add_argument("--demos")
    r.add_argument("--exact", action="store_true",
                   help="use the true expert action distribution instead of samples")
    r.add_argument("--seeds", "--seed", type=int, nargs="+")
    r.add_argument("--jobs", type=int, default=1)
    r.add_argument("--audit", action="store_true",
                   help="recompute the summary from per-seed records and compare")
    r.add_argument("--out")
    r.set_defaults(func=cmd_run)

    c = sub.add_parser("curve", parents=[common], help="EVD versus number of trajectories")
    c.add_argument("--algorithm", choices=ALGORITHMS, required=True)
    c.add_argument("--env", required=True)
    c.add_argument("--counts", type=int, nargs="*", required=True)
    c.add_argument("--seeds", "--seed", type=int, nargs="+")
    c.add_argument("--horizon", type=int, default=8)
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_curve)

    e = sub.add_parser("evd", parents=[common], help="EVD of a learned reward")
    e.add_argument("--env", required=True)
    e.add_argument("--reward", required=True)
    e.set_defaults(func=cmd_evd)

    i = sub.add_parser("inspect", parents=[common], help="summarise a JSON artifact")
    i.add_argument("path")
    i.set_defaults(func=cmd_inspect)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"invq {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
