"""Closed-form Inverse Action-value Iteration.

Given a model and the expert's action distribution, each state's reward
vector is the solution of a small linear system whose data are the eta
values ``log pi(a|s) - gamma * E[max_a' Q(s', a')]``. Acyclic models are
solved in one pass, successors first; otherwise whole-table sweeps are
repeated until the reward stops changing.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .mdp import TabularMdp, TrajectorySet, topological_state_order, validate_policy
from .reward_solver import solve_rewards


@dataclass
class IaviConfig:
    epsilon_logprob: float = 1e-9
    convergence_tol: float = 1e-4
    max_sweeps: int = 10_000
    # "auto" uses the one-pass solve whenever the model is acyclic
    mode: str = "auto"

    def __post_init__(self):
        if not 0.0 < self.epsilon_logprob < 1.0:
            raise ValueError("epsilon_logprob must lie in (0, 1)")
        if self.convergence_tol <= 0:
            raise ValueError("convergence_tol must be positive")
        if self.mode not in ("auto", "sweep"):
            raise ValueError(f"unknown mode {self.mode!r}")


@dataclass
class IaviResult:
    reward: np.ndarray
    q: np.ndarray
    sweeps_used: int
    converged: bool
    one_pass: bool = False
    reward_deltas: list = field(default_factory=list)


def safe_log(p, epsilon):
    return np.log(np.maximum(p, epsilon))


def compute_eta(mdp: TabularMdp, q, policy, state: int, action: int,
                epsilon: float = 1e-9) -> float:
    q = np.asarray(q, dtype=np.float64)
    logp = float(safe_log(policy[state, action], epsilon))
    if mdp.terminal[state]:
        return logp
    return logp - mdp.gamma * float(mdp.transitions[state, action] @ q.max(axis=1))


def eta_table(mdp: TabularMdp, q, policy, epsilon: float = 1e-9) -> np.ndarray:
    """Eta for every (state, action) pair against a fixed Q snapshot."""
    return safe_log(policy, epsilon) - mdp.gamma * mdp.expected_next_value(np.max(q, axis=1))


def empirical_policy(demos: TrajectorySet, n_states: int, n_actions: int):
    """Count-based action frequencies.

    Returns ``(policy, visited)``; unvisited states get a uniform row and
    ``visited[s] = False``. Zero-count actions stay at probability 0 here and
    are floored only inside the logarithm.
    """
    counts = np.zeros((n_states, n_actions))
    tr = demos.transitions()
    if len(tr):
        np.add.at(counts, (tr[:, 0], tr[:, 1]), 1.0)
    return policy_from_counts(counts)


def policy_from_counts(counts):
    counts = np.asarray(counts, dtype=np.float64)
    totals = counts.sum(axis=1, keepdims=True)
    visited = totals[:, 0] > 0
    policy = np.full(counts.shape, 1.0 / counts.shape[1])
    policy[visited] = counts[visited] / totals[visited]
    return policy, visited


def iavi_solve(mdp: TabularMdp, expert, cfg: IaviConfig | None = None) -> IaviResult:
    cfg = cfg or IaviConfig()
    expert = validate_policy(expert, mdp.n_states, mdp.n_actions)
    logp = safe_log(expert, cfg.epsilon_logprob)
    order = topological_state_order(mdp) if cfg.mode == "auto" else None
    if order is not None:
        return _solve_one_pass(mdp, logp, order)
    return _solve_sweeps(mdp, logp, cfg)


def _solve_one_pass(mdp, logp, order):
    S, A = mdp.n_states, mdp.n_actions
    q = np.zeros((S, A))
    reward = np.zeros((S, A))
    v = np.zeros(S)
    for s in order:
        if mdp.terminal[s]:
            next_value = np.zeros(A)
        else:
            # successors precede s in `order`, so their v is final
            next_value = mdp.gamma * (mdp.transitions[s] @ v)
        reward[s] = solve_rewards((logp[s] - next_value)[None, :])[0]
        q[s] = reward[s] + next_value
        v[s] = q[s].max()
    return IaviResult(reward=reward, q=q, sweeps_used=1, converged=True, one_pass=True)


def _solve_sweeps(mdp, logp, cfg):
    S, A = mdp.n_states, mdp.n_actions
    q = np.zeros((S, A))
    reward = np.zeros((S, A))
    deltas = []
    for sweep in range(1, cfg.max_sweeps + 1):
        next_value = mdp.gamma * mdp.expected_next_value(q.max(axis=1))
        new_reward = solve_rewards(logp - next_value)
        q = new_reward + next_value
        delta = float(np.max(np.abs(new_reward - reward)))
        deltas.append(delta)
        reward = new_reward
        if delta < cfg.convergence_tol:
            return IaviResult(reward, q, sweep, True, reward_deltas=deltas)
    return IaviResult(reward, q, cfg.max_sweeps, False, reward_deltas=deltas)
