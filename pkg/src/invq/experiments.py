"""Run one algorithm on one Objectworld instance and score it."""
from __future__ import annotations

import statistics
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import deep_iql, iavi, iql, maxent
from .constraints import constrained_greedy_policy, count_violations
from .mdp import (
    TrajectorySet,
    boltzmann_policy,
    expected_value_difference,
    policy_value_difference,
    sample_trajectories,
)
from .objectworld import ConstraintSpecOW, ObjectworldInstance, constraint_mask, expert

ALGORITHMS = ("iavi", "iql", "ciql", "diql", "dciql", "maxent", "maxent-1step")
CONSTRAINED = ("ciql", "dciql")

DEFAULTS = {
    "episodes": 64,
    "horizon": 8,
    "iavi": {},
    "iql": {},
    "diql": {},
    "maxent": {},
    "constraint": {"outer_color": 0, "radius": 1.0},
    "features": "onehot",  # deep variants: "onehot" or "objectworld"
    "copies": 4,  # exact-mode deep buffer: successors drawn per (s, a)
}


@dataclass
class RunRecord:
    algorithm: str
    seed: int
    evd: float
    wall_clock: float
    iterations: int
    converged: bool
    violations: int | None = None
    error: str | None = None
    artifacts: dict = field(default_factory=dict)

    def metrics(self) -> dict:
        """Everything except wall-clock, for reproducibility checks."""
        d = asdict(self)
        d.pop("wall_clock")
        d.pop("artifacts")
        return d


def merged_config(overrides: dict | None) -> dict:
    cfg = {k: (dict(v) if isinstance(v, dict) else v) for k, v in DEFAULTS.items()}
    for key, value in (overrides or {}).items():
        if isinstance(value, dict) and isinstance(cfg.get(key), dict):
            cfg[key].update(value)
        else:
            cfg[key] = value
    return cfg


def _deep_features(instance, cfg):
    if cfg["features"] == "onehot":
        return np.eye(instance.n_states)
    if cfg["features"] == "objectworld":
        return instance.feature_matrix
    raise ValueError(f"unknown feature kind {cfg['features']!r}")


def run_algorithm(algorithm: str, instance: ObjectworldInstance, seed: int, *,
                  demos: TrajectorySet | None = None, exact: bool = False,
                  config: dict | None = None) -> tuple[RunRecord, dict]:
    """Returns the run record and a dict of learned tables (reward, policy, ...).

    Without ``demos`` and outside exact mode, demonstrations are sampled from
    the Boltzmann expert with ``seed``. Wall-clock covers the learner only.
    """
    if algorithm not in ALGORITHMS:
        raise ValueError(f"unknown algorithm {algorithm!r}; choose from {ALGORITHMS}")
    cfg = merged_config(config)
    mdp = instance.mdp
    S, A = instance.n_states, instance.n_actions
    true_policy, _ = expert(instance)
    if demos is None and not (exact and algorithm in ("iavi", "maxent", "maxent-1step")):
        demos = sample_trajectories(mdp, true_policy, cfg["episodes"], cfg["horizon"], seed)

    safe = None
    if algorithm in CONSTRAINED:
        safe = constraint_mask(instance, ConstraintSpecOW(**cfg["constraint"]))

    out = {}
    iterations, converged = 1, True
    policy = None
    t0 = time.perf_counter()
    if algorithm == "iavi":
        pol = true_policy if exact else iavi.empirical_policy(demos, S, A)[0]
        res = iavi.iavi_solve(mdp, pol, iavi.IaviConfig(**cfg["iavi"]))
        reward, iterations, converged = res.reward, res.sweeps_used, res.converged
    elif algorithm in ("iql", "ciql"):
        icfg = iql.IqlConfig(gamma=mdp.gamma, **cfg["iql"])
        st = iql.run_iql(demos, icfg, S, A, terminal=mdp.terminal, constraints=safe,
                         policy=true_policy if exact else None)
        reward, iterations = st.reward, icfg.epochs * demos.n_transitions
        out["q"] = st.q
        if safe is not None:
            policy = constrained_greedy_policy(st.q_constrained, safe)
    elif algorithm in ("diql", "dciql"):
        dcfg = deep_iql.DiqlConfig(gamma=mdp.gamma, seed=seed,
                                   **{"use_true_distribution": exact, **cfg["diql"]})
        feats = _deep_features(instance, cfg)
        if exact:
            transitions = deep_iql.exhaustive_transitions(mdp, cfg["copies"], seed)
        else:
            transitions = demos.transitions()
        buf = deep_iql.ReplayBuffer.from_transitions(transitions, feats, mdp.terminal,
                                                     policy=true_policy)
        result = deep_iql.train(buf, dcfg, constraints=safe, n_actions=A, log_every=100)
        reward = result.nets.reward_values(feats)
        iterations = dcfg.iterations
        out["q"] = result.nets.q_values(feats)
        out["log"] = result.log
        if safe is not None:
            policy = constrained_greedy_policy(result.nets.q_values(feats, "c"), safe)
    else:
        mcfg = maxent.MaxEntConfig(**{"inner_steps": 1 if algorithm == "maxent-1step" else None,
                                      **cfg["maxent"]})
        if exact:
            res = maxent.maxent_irl(mdp, instance.feature_matrix, cfg=mcfg,
                                    expert_policy=true_policy, horizon=cfg["horizon"])
        else:
            res = maxent.maxent_irl(mdp, instance.feature_matrix, demos, mcfg)
        reward, iterations, converged = res.reward, res.iterations, res.converged
        out["log"] = res.log
    wall = time.perf_counter() - t0

    out["reward"] = reward
    violations = None
    if policy is not None:
        evd = policy_value_difference(mdp, instance.true_reward, policy,
                                      reference_policy=true_policy)
        violations = count_violations(policy, safe)
        out["policy"] = policy
    else:
        evd = expected_value_difference(mdp, instance.true_reward, reward)
        out["policy"] = boltzmann_policy(out["q"]) if "q" in out else None
    record = RunRecord(algorithm, int(seed), float(evd), wall, int(iterations), bool(converged),
                       violations)
    return record, out


def summarize(records) -> dict:
    """Mean and sample standard deviation of EVD and wall-clock over successful runs."""
    ok = [r for r in records if r.error is None]
    evds = [r.evd for r in ok]
    walls = [r.wall_clock for r in ok]

    def sd(xs):
        return statistics.stdev(xs) if len(xs) > 1 else 0.0

    return {
        "algorithm": records[0].algorithm if records else "",
        "n_runs": len(ok),
        "n_failed": len(records) - len(ok),
        "evd_mean": statistics.fmean(evds) if evds else float("nan"),
        "evd_sd": sd(evds) if evds else float("nan"),
        "wall_clock_mean": statistics.fmean(walls) if walls else float("nan"),
        "wall_clock_sd": sd(walls) if walls else float("nan"),
    }
