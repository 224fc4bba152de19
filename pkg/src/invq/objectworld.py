"""Objectworld benchmark.

An N x N grid with five actions (up, down, left, right, stay). Objects with
an inner and an outer color are scattered over the grid; with probability
``wind`` the realised move is drawn uniformly from all five actions. States
are cells in row-major order (``state = row * N + col``), row 0 on top.

The true reward follows the usual benchmark convention: +1 within distance
3 of outer color 0 and within distance 2 of outer color 1, -1 within
distance 3 of outer color 0 otherwise, 0 elsewhere.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .constraints import ConstraintSet, check_feasible
from .mdp import TabularMdp, boltzmann_policy, value_iteration

ACTIONS = ("up", "down", "left", "right", "stay")
MOVES = np.array([(-1, 0), (1, 0), (0, -1), (0, 1), (0, 0)])
STAY = 4


@dataclass(frozen=True)
class ObjectworldSpec:
    n: int = 8
    n_colors: int = 2
    n_objects: int = 12
    wind: float = 0.3
    gamma: float = 0.9
    seed: int = 0
    binary_features: bool = False

    def validate(self):
        if self.n < 1:
            raise ValueError("grid size must be positive")
        if self.n_colors < 2:
            raise ValueError("need at least 2 colors")
        if not 0 <= self.n_objects <= self.n * self.n:
            raise ValueError(
                f"{self.n_objects} objects do not fit on a {self.n}x{self.n} grid"
            )
        if not 0.0 <= self.wind <= 1.0:
            raise ValueError("wind must lie in [0, 1]")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")


@dataclass
class ObjectworldInstance:
    spec: ObjectworldSpec
    objects: np.ndarray  # (K, 4): row, col, inner color, outer color
    mdp: TabularMdp
    true_reward: np.ndarray
    feature_matrix: np.ndarray  # (S, F)

    @property
    def n_states(self):
        return self.mdp.n_states

    @property
    def n_actions(self):
        return self.mdp.n_actions

    def cell(self, state):
        return divmod(int(state), self.spec.n)

    def digest(self) -> str:
        h = hashlib.sha256()
        for arr in (self.objects, self.mdp.transitions, self.true_reward, self.feature_matrix):
            h.update(np.ascontiguousarray(arr).tobytes())
        h.update(repr(self.spec).encode())
        return h.hexdigest()


def grid_transitions(n: int, wind: float) -> np.ndarray:
    S, A = n * n, len(ACTIONS)
    rows, cols = np.divmod(np.arange(S), n)
    dest = np.empty((S, A), dtype=np.int64)
    for a, (dr, dc) in enumerate(MOVES):
        dest[:, a] = np.clip(rows + dr, 0, n - 1) * n + np.clip(cols + dc, 0, n - 1)
    p = np.zeros((S, A, S))
    for a in range(A):
        p[np.arange(S), a, dest[:, a]] += 1.0 - wind
        for b in range(A):
            p[np.arange(S), a, dest[:, b]] += wind / A
    return p


def move_destination(n: int, state: int, action: int) -> int:
    r, c = divmod(int(state), n)
    dr, dc = MOVES[action]
    return int(min(max(r + dr, 0), n - 1) * n + min(max(c + dc, 0), n - 1))


def color_distances(n: int, objects: np.ndarray, n_colors: int) -> np.ndarray:
    """(S, 2C) Euclidean distance to the nearest object of each inner then outer color.

    Colors with no object get distance ``n``.
    """
    rows, cols = np.divmod(np.arange(n * n), n)
    out = np.full((n * n, 2 * n_colors), float(n))
    if len(objects) == 0:
        return out
    d = np.hypot(rows[:, None] - objects[None, :, 0], cols[:, None] - objects[None, :, 1])
    for offset, column in ((0, 2), (n_colors, 3)):
        for c in range(n_colors):
            hit = objects[:, column] == c
            if hit.any():
                out[:, offset + c] = d[:, hit].min(axis=1)
    return out


def binary_features(distances: np.ndarray, n: int) -> np.ndarray:
    """Thresholded variant: for each distance column and each d in 1..n, [dist < d]."""
    thresholds = np.arange(1, n + 1)
    return (distances[:, :, None] < thresholds[None, None, :]).reshape(len(distances), -1) \
        .astype(np.float64)


def true_reward_from_distances(distances: np.ndarray, n_colors: int) -> np.ndarray:
    d_outer0 = distances[:, n_colors]
    d_outer1 = distances[:, n_colors + 1]
    r = np.zeros(len(distances))
    near0 = d_outer0 <= 3
    r[near0] = -1.0
    r[near0 & (d_outer1 <= 2)] = 1.0
    return r


def generate(spec: ObjectworldSpec) -> ObjectworldInstance:
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    n = spec.n
    cells = rng.choice(n * n, size=spec.n_objects, replace=False)
    inner = rng.integers(0, spec.n_colors, size=spec.n_objects)
    outer = rng.integers(0, spec.n_colors, size=spec.n_objects)
    rows, cols = np.divmod(cells, n)
    objects = np.stack([rows, cols, inner, outer], axis=1).astype(np.int64)
    dist = color_distances(n, objects, spec.n_colors)
    state_reward = true_reward_from_distances(dist, spec.n_colors)
    feats = binary_features(dist, n) if spec.binary_features else dist
    mdp = TabularMdp(grid_transitions(n, spec.wind), np.zeros(n * n, dtype=bool), spec.gamma)
    reward = np.repeat(state_reward[:, None], len(ACTIONS), axis=1)
    return ObjectworldInstance(spec, objects, mdp, reward, feats)


def features(instance: ObjectworldInstance, state: int) -> np.ndarray:
    return instance.feature_matrix[int(state)]


def one_hot_features(n_states: int) -> np.ndarray:
    return np.eye(n_states)


def expert(instance: ObjectworldInstance, tol: float = 1e-10):
    """Boltzmann expert over the true optimal Q. Returns ``(policy, q)``."""
    q = value_iteration(instance.mdp, instance.true_reward, tol=tol)
    return boltzmann_policy(q), q


@dataclass(frozen=True)
class ConstraintSpecOW:
    """Forbid moving into cells within ``radius`` of an object of ``outer_color``.

    Only entering is forbidden: from a cell already inside the zone every
    action stays allowed, so each state keeps at least one safe action.
    ``forbid_stay`` additionally removes the stay action everywhere.
    """

    outer_color: int | None = 0
    radius: float = 1.0
    forbid_stay: bool = False


def forbidden_zone(instance: ObjectworldInstance, outer_color: int, radius: float) -> np.ndarray:
    dist = color_distances(instance.spec.n, instance.objects, instance.spec.n_colors)
    has_color = np.any(instance.objects[:, 3] == outer_color)
    if not has_color:
        return np.zeros(instance.n_states, dtype=bool)
    return dist[:, instance.spec.n_colors + outer_color] <= radius


def constraint_mask(instance: ObjectworldInstance, cspec: ConstraintSpecOW) -> np.ndarray:
    n = instance.spec.n
    S, A = instance.n_states, instance.n_actions
    safe = np.ones((S, A), dtype=bool)
    if cspec.outer_color is not None:
        zone = forbidden_zone(instance, cspec.outer_color, cspec.radius)
        for s in range(S):
            if zone[s]:
                continue
            for a in range(A):
                if zone[move_destination(n, s, a)]:
                    safe[s, a] = False
    if cspec.forbid_stay:
        safe[:, STAY] = False
    return safe


def constrained_variant(instance: ObjectworldInstance, cspec: ConstraintSpecOW) -> ConstraintSet:
    safe = constraint_mask(instance, cspec)
    check_feasible(safe)
    return ConstraintSet.from_mask(safe)
