"""Model-free tabular Inverse Q-learning and its constrained variant.

Each observed transition ``(s, a, s')`` updates, in this order: the visit
counter, the count-based action distribution of ``s``, the shifted Q-value
``Q_sh(s, a)`` toward ``gamma * max Q(s', .)``, the reward ``r(s, a)`` toward
the stochastic-approximation target built from the eta values of all
actions, and finally ``Q(s, a)``. The constrained variant additionally
updates ``Q_c(s, a)`` with the maximum taken over the safe actions of ``s'``.

Bootstrapping is switched off for transitions taken in terminal states.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import _kernels
from .constraints import ConstraintSet, check_feasible
from .iavi import policy_from_counts
from .mdp import TrajectorySet


@dataclass
class IqlConfig:
    alpha_r: float = 1e-3
    alpha_sh: float = 1e-3
    alpha_q: float = 1e-3
    alpha_c: float = 1e-3
    gamma: float = 0.9
    epsilon_logprob: float = 1e-9
    epochs: int = 1

    def __post_init__(self):
        for name in ("alpha_r", "alpha_sh", "alpha_q", "alpha_c"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {value}")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")

    def to_dict(self):
        return asdict(self)


@dataclass
class IqlState:
    reward: np.ndarray
    q: np.ndarray
    q_shifted: np.ndarray
    counter: np.ndarray
    q_constrained: np.ndarray | None = None

    @classmethod
    def zeros(cls, n_states: int, n_actions: int, constrained: bool = False) -> "IqlState":
        if n_actions < 2:
            raise ValueError("inverse Q-learning needs at least 2 actions")
        z = lambda: np.zeros((n_states, n_actions))  # noqa: E731
        return cls(z(), z(), z(), np.zeros((n_states, n_actions), dtype=np.int64),
                   z() if constrained else None)

    @property
    def shape(self):
        return self.q.shape

    def copy(self) -> "IqlState":
        qc = None if self.q_constrained is None else self.q_constrained.copy()
        return IqlState(self.reward.copy(), self.q.copy(), self.q_shifted.copy(),
                        self.counter.copy(), qc)

    def empirical_policy(self):
        """Count-based action distribution and visited-state flags."""
        return policy_from_counts(self.counter)


def _check_transition(st: IqlState, transition):
    s, a, sn = (int(x) for x in transition)
    S, A = st.shape
    if not (0 <= s < S and 0 <= sn < S and 0 <= a < A):
        raise IndexError(f"transition {transition} out of range for {S} states, {A} actions")
    return s, a, sn


def iql_step(st: IqlState, cfg: IqlConfig, transition, done: bool = False,
             policy=None) -> IqlState:
    """One inverse Q-learning update, applied in place; returns ``st``.

    ``policy`` replaces the count-based estimate with a known action
    distribution (the counter is still incremented).
    """
    s, a, sn = _check_transition(st, transition)
    _kernels.iql_step_numpy(
        s, a, sn, bool(done), st.reward, st.q, st.q_shifted, st.counter, None, None, policy,
        cfg.gamma, cfg.alpha_r, cfg.alpha_sh, cfg.alpha_q, cfg.alpha_c, cfg.epsilon_logprob,
    )
    return st


def ciql_step(st: IqlState, cfg: IqlConfig, constraints, transition, done: bool = False,
              policy=None) -> IqlState:
    """``iql_step`` followed by the constrained Q update over the safe set of ``s'``.

    ``constraints`` is a ``ConstraintSet`` or a boolean safe mask.
    """
    s, a, sn = _check_transition(st, transition)
    if st.q_constrained is None:
        st.q_constrained = np.zeros_like(st.q)
    safe = _safe_mask(constraints, st.shape[0])
    _kernels.iql_step_numpy(
        s, a, sn, bool(done), st.reward, st.q, st.q_shifted, st.counter, st.q_constrained, safe,
        policy, cfg.gamma, cfg.alpha_r, cfg.alpha_sh, cfg.alpha_q, cfg.alpha_c,
        cfg.epsilon_logprob,
    )
    return st


def _safe_mask(constraints, n_states):
    if isinstance(constraints, ConstraintSet):
        return constraints.mask(n_states)
    safe = np.asarray(constraints, dtype=bool)
    check_feasible(safe)
    return safe


def run_iql(demos, cfg: IqlConfig, n_states: int, n_actions: int, *, terminal=None,
            constraints=None, policy=None, state: IqlState | None = None,
            backend=None) -> IqlState:
    """Replay demonstrations through (constrained) inverse Q-learning.

    ``demos`` is a ``TrajectorySet`` or an (M, 3) transition array; it is
    replayed in stored order ``cfg.epochs`` times. ``terminal`` marks states
    whose transitions do not bootstrap.
    """
    transitions = demos.transitions() if isinstance(demos, TrajectorySet) else np.asarray(demos)
    transitions = transitions.reshape(-1, 3).astype(np.int64)
    if len(transitions) == 0:
        raise ValueError("no demonstrations to learn from")
    if transitions.min() < 0 or transitions[:, [0, 2]].max() >= n_states \
            or transitions[:, 1].max() >= n_actions:
        raise IndexError("transition indices out of range")
    st = state if state is not None else IqlState.zeros(n_states, n_actions,
                                                        constrained=constraints is not None)
    done = (np.zeros(len(transitions), dtype=bool) if terminal is None
            else np.asarray(terminal, dtype=bool)[transitions[:, 0]])
    safe = None
    if constraints is not None:
        safe = _safe_mask(constraints, n_states)
        if st.q_constrained is None:
            st.q_constrained = np.zeros_like(st.q)
    fixed = None if policy is None else np.ascontiguousarray(policy, dtype=np.float64)
    _kernels.iql_replay(
        transitions, done, cfg.epochs, st.reward, st.q, st.q_shifted, st.counter,
        st.q_constrained if constraints is not None else None, safe, fixed,
        gamma=cfg.gamma, alpha_r=cfg.alpha_r, alpha_sh=cfg.alpha_sh, alpha_q=cfg.alpha_q,
        alpha_c=cfg.alpha_c, eps=cfg.epsilon_logprob, backend=backend,
    )
    return st
