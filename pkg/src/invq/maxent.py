"""Tabular Maximum Entropy IRL baseline.

The reward is linear in per-state features and broadcast over actions. Each
outer iteration runs soft value iteration (either to convergence or a
single backup warm-started from the previous values), propagates expected
state visitations forward over the demonstration horizon, and takes a
gradient step on the feature-expectation mismatch.
"""
from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .errors import ConvergenceError
from .mdp import TabularMdp, TrajectorySet


@dataclass
class MaxEntConfig:
    lr: float = 0.01
    max_outer: int = 5000
    inner_steps: int | None = None  # None: iterate soft VI to `inner_tol`
    inner_tol: float = 1e-8
    inner_max_iters: int = 100_000
    reward_tol: float = 1e-4

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.inner_steps is not None and self.inner_steps < 1:
            raise ValueError("inner_steps must be >= 1")


def soft_value_iteration(mdp: TabularMdp, reward, inner_steps: int | None = None,
                         tol: float = 1e-8, max_iters: int = 100_000, v_init=None):
    """Soft Bellman backups ``V(s) = log sum_a exp(r(s,a) + gamma E[V(s')])``.

    With ``inner_steps`` exactly that many backups are applied starting from
    ``v_init`` (zeros by default); otherwise backups run until the value
    change drops below ``tol``. Returns ``(policy, v)`` where the policy is
    ``exp(Q - V)``.
    """
    reward = np.asarray(reward, dtype=np.float64)
    v = np.zeros(mdp.n_states) if v_init is None else np.array(v_init, dtype=np.float64)
    steps = inner_steps if inner_steps is not None else max_iters
    for i in range(steps):
        q = reward + mdp.gamma * mdp.expected_next_value(v)
        v_new = logsumexp(q, axis=1)
        delta = np.max(np.abs(v_new - v))
        v = v_new
        if inner_steps is None and delta <= tol:
            break
        if not np.isfinite(delta):
            raise ConvergenceError("soft value iteration diverged", iterations=i + 1)
    else:
        if inner_steps is None:
            raise ConvergenceError(
                f"soft value iteration did not converge in {max_iters} backups",
                iterations=max_iters, residual=delta,
            )
    q = reward + mdp.gamma * mdp.expected_next_value(v)
    policy = np.exp(q - logsumexp(q, axis=1, keepdims=True))
    return policy, v


def expected_state_visitation(mdp: TabularMdp, policy, horizon: int, initial) -> np.ndarray:
    """Summed state occupancy over ``horizon`` steps starting from ``initial``.

    Mass keeps flowing through terminal states' transition rows, so the
    result always sums to ``horizon``.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    d = np.asarray(initial, dtype=np.float64).copy()
    # state-to-state kernel under the policy
    kernel = np.einsum("sa,sat->st", policy, mdp.transitions)
    total = d.copy()
    for _ in range(horizon - 1):
        d = d @ kernel
        total += d
    return total


def demo_feature_expectations(demos: TrajectorySet, feature_matrix) -> np.ndarray:
    """Average over episodes of the summed features of visited states."""
    if len(demos) == 0:
        raise ValueError("no demonstrations")
    fm = np.asarray(feature_matrix, dtype=np.float64)
    return np.mean([fm[np.asarray(ep)[:, 0]].sum(axis=0) for ep in demos.episodes], axis=0)


def start_distribution(demos: TrajectorySet, n_states: int) -> np.ndarray:
    starts = np.array([ep[0][0] for ep in demos.episodes if len(ep)])
    return np.bincount(starts, minlength=n_states) / len(starts)


@dataclass
class MaxEntResult:
    weights: np.ndarray
    reward: np.ndarray
    iterations: int
    converged: bool
    wall_clock: float
    log: list = field(default_factory=list)


def maxent_irl(mdp: TabularMdp, feature_matrix, demos: TrajectorySet | None = None,
               cfg: MaxEntConfig | None = None, *, expert_policy=None, horizon: int | None = None,
               initial=None, weights=None) -> MaxEntResult:
    """Gradient ascent on the MaxEnt log-likelihood with a linear state reward.

    Expert feature expectations come from ``demos`` or, in exact mode, from
    the visitation of ``expert_policy`` over ``horizon`` steps from
    ``initial`` (uniform by default). Stops once an update changes the
    reward by less than ``cfg.reward_tol`` in sup-norm.
    """
    cfg = cfg or MaxEntConfig()
    fm = np.asarray(feature_matrix, dtype=np.float64)
    S, A = mdp.n_states, mdp.n_actions
    if demos is not None:
        horizon = horizon or demos.horizon
        initial = start_distribution(demos, S) if initial is None else initial
        f_expert = demo_feature_expectations(demos, fm)
    elif expert_policy is not None:
        if horizon is None:
            raise ValueError("exact mode needs a horizon")
        initial = np.full(S, 1.0 / S) if initial is None else initial
        f_expert = expected_state_visitation(mdp, expert_policy, horizon, initial) @ fm
    else:
        raise ValueError("need demonstrations or an expert policy")

    w = np.zeros(fm.shape[1]) if weights is None else np.array(weights, dtype=np.float64)
    v = None
    log = []
    converged = False
    start = time.perf_counter()
    it = 0
    for it in range(1, cfg.max_outer + 1):
        reward = np.repeat((fm @ w)[:, None], A, axis=1)
        if cfg.inner_steps is None:
            policy, _ = soft_value_iteration(mdp, reward, tol=cfg.inner_tol,
                                             max_iters=cfg.inner_max_iters)
        else:
            policy, v = soft_value_iteration(mdp, reward, inner_steps=cfg.inner_steps, v_init=v)
        grad = f_expert - expected_state_visitation(mdp, policy, horizon, initial) @ fm
        step = cfg.lr * grad
        w = w + step
        change = float(np.max(np.abs(fm @ step), initial=0.0))
        log.append({"iteration": it, "grad_norm": float(np.linalg.norm(grad)),
                    "wall_clock": time.perf_counter() - start})
        if change < cfg.reward_tol:
            converged = True
            break
    reward = np.repeat((fm @ w)[:, None], A, axis=1)
    return MaxEntResult(w, reward, it, converged, time.perf_counter() - start, log)


def maxent_gradient(mdp, feature_matrix, weights, f_expert, horizon, initial,
                    inner_tol: float = 1e-10) -> np.ndarray:
    fm = np.asarray(feature_matrix, dtype=np.float64)
    reward = np.repeat((fm @ weights)[:, None], mdp.n_actions, axis=1)
    policy, _ = soft_value_iteration(mdp, reward, tol=inner_tol)
    return f_expert - expected_state_visitation(mdp, policy, horizon, initial) @ fm


def write_log_csv(log, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=("iteration", "grad_norm", "wall_clock"))
        w.writeheader()
        w.writerows(log)
