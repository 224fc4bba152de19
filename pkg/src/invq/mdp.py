"""Finite MDPs: ground-truth solving, Boltzmann policies, evaluation, sampling and EVD.

Tables (Q-values, rewards, policies) are plain ``float64`` arrays of shape
``(n_states, n_actions)``. Terminal states end the episode after their action
is taken, so their successor value is always treated as 0.
"""
from __future__ import annotations

import graphlib
from dataclasses import dataclass, field

import numpy as np

from .errors import ConvergenceError, ModelValidationError

STOCHASTIC_ATOL = 1e-12


@dataclass
class TabularMdp:
    transitions: np.ndarray  # (S, A, S')
    terminal: np.ndarray  # (S,) bool
    gamma: float

    def __post_init__(self):
        self.transitions = np.ascontiguousarray(self.transitions, dtype=np.float64)
        if self.transitions.ndim != 3 or self.transitions.shape[0] != self.transitions.shape[2]:
            raise ModelValidationError(
                f"transitions must have shape (S, A, S), got {self.transitions.shape}"
            )
        self.terminal = np.asarray(self.terminal, dtype=bool).reshape(-1)
        if self.terminal.shape[0] != self.n_states:
            raise ModelValidationError("terminal mask length does not match n_states")
        self.gamma = float(self.gamma)
        if not 0.0 <= self.gamma <= 1.0:
            raise ModelValidationError(f"gamma must lie in [0, 1], got {self.gamma}")
        validate_transitions(self.transitions)

    @property
    def n_states(self) -> int:
        return self.transitions.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transitions.shape[1]

    def expected_next_value(self, v: np.ndarray) -> np.ndarray:
        """E[v(s')] per (s, a); zero in terminal states."""
        S, A = self.n_states, self.n_actions
        ev = (self.transitions.reshape(S * A, S) @ v).reshape(S, A)
        ev[self.terminal] = 0.0
        return ev

    def successors(self, state: int) -> np.ndarray:
        if self.terminal[state]:
            return np.empty(0, dtype=np.int64)
        return np.flatnonzero(self.transitions[state].sum(axis=0) > 0.0)


def validate_transitions(transitions: np.ndarray) -> None:
    if not np.all(np.isfinite(transitions)) or np.any(transitions < 0.0):
        raise ModelValidationError("transition probabilities must be finite and non-negative")
    sums = transitions.sum(axis=2)
    bad = np.abs(sums - 1.0) > STOCHASTIC_ATOL
    if np.any(bad):
        s, a = np.argwhere(bad)[0]
        raise ModelValidationError(
            f"transition row (s={s}, a={a}) sums to {sums[s, a]!r}, expected 1"
        )


def validate_policy(policy: np.ndarray, n_states=None, n_actions=None) -> np.ndarray:
    policy = np.asarray(policy, dtype=np.float64)
    if policy.ndim != 2:
        raise ModelValidationError("policy must be a 2-d (state, action) table")
    if n_states is not None and policy.shape != (n_states, n_actions):
        raise ModelValidationError(
            f"policy shape {policy.shape} does not match ({n_states}, {n_actions})"
        )
    if np.any(policy < 0.0) or not np.all(np.isfinite(policy)):
        raise ModelValidationError("policy entries must be finite and non-negative")
    if np.any(np.abs(policy.sum(axis=1) - 1.0) > STOCHASTIC_ATOL):
        raise ModelValidationError("policy rows must sum to 1")
    return policy


def _check_table(table, mdp: TabularMdp, name: str) -> np.ndarray:
    table = np.asarray(table, dtype=np.float64)
    if table.shape != (mdp.n_states, mdp.n_actions):
        raise ModelValidationError(
            f"{name} shape {table.shape} does not match ({mdp.n_states}, {mdp.n_actions})"
        )
    if not np.all(np.isfinite(table)):
        raise ModelValidationError(f"{name} contains non-finite entries")
    return table


def value_iteration(mdp: TabularMdp, reward, tol: float = 1e-10, max_iters: int = 100_000,
                    q_init=None) -> np.ndarray:
    """Optimal action values for ``reward`` by synchronous Bellman optimality backups.

    Raises ``ConvergenceError`` when the sup-norm residual is still above ``tol``
    after ``max_iters`` backups (e.g. gamma = 1 without reachable terminals).
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    reward = _check_table(reward, mdp, "reward")
    q = reward.copy() if q_init is None else np.array(q_init, dtype=np.float64)
    residual = np.inf
    for it in range(1, max_iters + 1):
        q_new = reward + mdp.gamma * mdp.expected_next_value(q.max(axis=1))
        residual = np.max(np.abs(q_new - q))
        q = q_new
        if residual <= tol:
            return q
        if not np.isfinite(residual):
            break
    raise ConvergenceError(
        f"value iteration did not converge: residual {residual:.3e} after {max_iters} iterations",
        iterations=max_iters, residual=residual,
    )


def bellman_residual(mdp: TabularMdp, reward, q) -> float:
    target = reward + mdp.gamma * mdp.expected_next_value(np.max(q, axis=1))
    return float(np.max(np.abs(target - q)))


def boltzmann_policy(q) -> np.ndarray:
    """Row-wise softmax of Q-values (temperature 1)."""
    q = np.asarray(q, dtype=np.float64)
    z = np.exp(q - q.max(axis=1, keepdims=True))
    return z / z.sum(axis=1, keepdims=True)


def greedy_policy(q, mask=None) -> np.ndarray:
    """Deterministic argmax policy; ties go to the lowest action index."""
    q = np.asarray(q, dtype=np.float64)
    if mask is not None:
        q = np.where(mask, q, -np.inf)
    pi = np.zeros_like(q)
    pi[np.arange(q.shape[0]), np.argmax(q, axis=1)] = 1.0
    return pi


def policy_evaluation(mdp: TabularMdp, reward, policy, tol: float = 1e-10,
                      max_iters: int = 100_000) -> np.ndarray:
    """State values of ``policy`` under ``reward``.

    Solved directly as a linear system; falls back to iterative evaluation
    when the system is singular or the direct residual exceeds ``tol``.
    """
    reward = _check_table(reward, mdp, "reward")
    policy = validate_policy(policy, mdp.n_states, mdp.n_actions)
    S, A = mdp.n_states, mdp.n_actions
    r_pi = np.einsum("sa,sa->s", policy, reward)
    p_pi = np.einsum("sa,sat->st", policy, mdp.transitions)
    p_pi[mdp.terminal] = 0.0

    def residual(v):
        return float(np.max(np.abs(r_pi + mdp.gamma * (p_pi @ v) - v)))

    try:
        v = np.linalg.solve(np.eye(S) - mdp.gamma * p_pi, r_pi)
        if np.all(np.isfinite(v)) and residual(v) <= tol:
            return v
    except np.linalg.LinAlgError:
        pass
    v = np.zeros(S)
    res = np.inf
    for _ in range(max_iters):
        v_new = r_pi + mdp.gamma * (p_pi @ v)
        res = np.max(np.abs(v_new - v))
        v = v_new
        if res <= tol:
            return v
    raise ConvergenceError(
        f"policy evaluation did not converge: residual {res:.3e}", iterations=max_iters,
        residual=res,
    )


def policy_value_difference(mdp: TabularMdp, true_reward, policy, tol: float = 1e-10,
                            reference_policy=None) -> float:
    """Mean over states of V_true(expert) - V_true(policy).

    The reference is the Boltzmann policy over the true optimal Q unless
    ``reference_policy`` is supplied.
    """
    if reference_policy is None:
        reference_policy = boltzmann_policy(value_iteration(mdp, true_reward, tol=tol))
    v_ref = policy_evaluation(mdp, true_reward, reference_policy, tol=tol)
    v_pol = policy_evaluation(mdp, true_reward, policy, tol=tol)
    return float(np.mean(v_ref - v_pol))


def expected_value_difference(mdp: TabularMdp, true_reward, learned_reward,
                              tol: float = 1e-10) -> float:
    """EVD between the stochastic policies induced by the true and the learned reward.

    Both are Boltzmann policies over optimal Q-values and both are evaluated
    under ``true_reward``; states are weighted uniformly.
    """
    _check_table(learned_reward, mdp, "learned_reward")
    learned_policy = boltzmann_policy(value_iteration(mdp, learned_reward, tol=tol))
    return policy_value_difference(mdp, true_reward, learned_policy, tol=tol)


def policy_kl(p, q) -> np.ndarray:
    """Per-state KL(p || q)."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * (np.log(p) - np.log(q)), 0.0)
    return terms.sum(axis=1)


@dataclass
class TrajectorySet:
    """Demonstrations as per-episode ``(state, action, next_state)`` int arrays."""

    episodes: list = field(default_factory=list)
    seed: int | None = None
    horizon: int = 0

    def __len__(self):
        return len(self.episodes)

    @property
    def n_transitions(self) -> int:
        return int(sum(len(e) for e in self.episodes))

    def transitions(self) -> np.ndarray:
        """All transitions concatenated in stored order, shape (M, 3)."""
        if not self.episodes:
            return np.empty((0, 3), dtype=np.int64)
        return np.concatenate([np.asarray(e, dtype=np.int64).reshape(-1, 3) for e in self.episodes])

    def subset(self, n_episodes: int) -> "TrajectorySet":
        return TrajectorySet(self.episodes[:n_episodes], seed=self.seed, horizon=self.horizon)


def _sample_rows(cdf: np.ndarray, u: np.ndarray) -> np.ndarray:
    # inverse-CDF draw per row; clip guards against cdf[-1] < 1 by rounding
    idx = (u[:, None] >= cdf).sum(axis=1)
    return np.minimum(idx, cdf.shape[1] - 1)


def sample_trajectories(mdp: TabularMdp, policy, episodes: int, horizon: int, seed: int,
                        start=None) -> TrajectorySet:
    """Roll out ``policy`` for ``episodes`` episodes of at most ``horizon`` steps.

    Start states are uniform over all states unless a start distribution is
    given. An episode stops after the action taken in a terminal state.
    All episodes advance in lockstep, so results depend only on ``seed``.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    policy = validate_policy(policy, mdp.n_states, mdp.n_actions)
    rng = np.random.default_rng(seed)
    if episodes == 0:
        return TrajectorySet([], seed=seed, horizon=horizon)
    S = mdp.n_states
    start = np.full(S, 1.0 / S) if start is None else np.asarray(start, dtype=np.float64)
    pi_cdf = np.cumsum(policy, axis=1)
    p_cdf = np.cumsum(mdp.transitions, axis=2)

    states = _sample_rows(np.cumsum(start)[None, :].repeat(episodes, 0), rng.random(episodes))
    steps = np.empty((episodes, horizon, 3), dtype=np.int64)
    alive = np.ones(episodes, dtype=bool)
    lengths = np.zeros(episodes, dtype=np.int64)
    for t in range(horizon):
        u_a = rng.random(episodes)
        u_s = rng.random(episodes)
        actions = _sample_rows(pi_cdf[states], u_a)
        nxt = _sample_rows(p_cdf[states, actions], u_s)
        steps[:, t, 0] = states
        steps[:, t, 1] = actions
        steps[:, t, 2] = nxt
        lengths += alive
        alive &= ~mdp.terminal[states]
        states = nxt
    eps = [steps[i, : lengths[i]].copy() for i in range(episodes)]
    return TrajectorySet(eps, seed=seed, horizon=horizon)


def topological_state_order(mdp: TabularMdp):
    """Reverse topological order (successors first) of the reachability graph.

    Returns ``None`` when the graph has a cycle (including self-loops), in
    which case callers fall back to iterative sweeps.
    """
    support = mdp.transitions.sum(axis=1) > 0.0
    support[mdp.terminal] = False
    graph = {s: np.flatnonzero(support[s]).tolist() for s in range(mdp.n_states)}
    try:
        return np.fromiter(graphlib.TopologicalSorter(graph).static_order(), dtype=np.int64)
    except graphlib.CycleError:
        return None
