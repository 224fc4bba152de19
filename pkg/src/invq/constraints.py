"""Hard action constraints and their safe sets."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import InfeasibleConstraintError
from .mdp import greedy_policy


@dataclass
class ConstraintSet:
    """Constraints ``c_i(s, a) <= beta_i``; an action is safe when all hold.

    ``constraints`` holds ``(c_i, beta_i)`` pairs where ``c_i`` maps
    ``(state, action)`` to a real number.
    """

    n_actions: int
    constraints: list = field(default_factory=list)

    def add(self, fn: Callable[[int, int], float], beta: float) -> "ConstraintSet":
        self.constraints.append((fn, float(beta)))
        return self

    def mask(self, n_states: int, validate: bool = True) -> np.ndarray:
        """Boolean (S, A) table of safe actions."""
        safe = np.ones((n_states, self.n_actions), dtype=bool)
        for fn, beta in self.constraints:
            for s in range(n_states):
                for a in range(self.n_actions):
                    if safe[s, a] and fn(s, a) > beta:
                        safe[s, a] = False
        if validate:
            check_feasible(safe)
        return safe

    @classmethod
    def from_mask(cls, safe) -> "ConstraintSet":
        """Single 0/1 constraint forbidding every action where ``safe`` is False."""
        safe = np.asarray(safe, dtype=bool)
        cs = cls(safe.shape[1])
        return cs.add(lambda s, a: 0.0 if safe[s, a] else 1.0, 0.5)


def check_feasible(safe) -> None:
    empty = np.flatnonzero(~np.asarray(safe).any(axis=1))
    if len(empty):
        raise InfeasibleConstraintError(empty)


def safe_set(constraints: ConstraintSet, state: int) -> list[int]:
    actions = [
        a for a in range(constraints.n_actions)
        if all(fn(state, a) <= beta for fn, beta in constraints.constraints)
    ]
    if not actions:
        raise InfeasibleConstraintError([state])
    return actions


def constrained_greedy_policy(qc, constraints: ConstraintSet | np.ndarray) -> np.ndarray:
    """Argmax over each state's safe set, ties to the lowest action index.

    ``constraints`` may also be a precomputed boolean safe mask.
    """
    qc = np.asarray(qc, dtype=np.float64)
    if isinstance(constraints, ConstraintSet):
        safe = constraints.mask(qc.shape[0])
    else:
        safe = np.asarray(constraints, dtype=bool)
        check_feasible(safe)
    return greedy_policy(qc, mask=safe)


def count_violations(policy, safe) -> int:
    """Number of states whose policy puts probability on an unsafe action."""
    return int(np.sum(np.any((np.asarray(policy) > 0) & ~np.asarray(safe, dtype=bool), axis=1)))
