import numpy as np
import pytest

from invq.mdp import TabularMdp


def random_mdp(rng, n_states, n_actions, gamma=0.9, n_terminal=0, sparsity=0.5):
    p = rng.random((n_states, n_actions, n_states))
    p *= rng.random(p.shape) < sparsity
    # every row keeps at least one successor
    p[np.arange(n_states)[:, None], np.arange(n_actions)[None, :],
      rng.integers(0, n_states, (n_states, n_actions))] += 0.1
    p /= p.sum(axis=2, keepdims=True)
    terminal = np.zeros(n_states, dtype=bool)
    if n_terminal:
        terminal[rng.choice(n_states, n_terminal, replace=False)] = True
    return TabularMdp(p, terminal, gamma)


def random_dag_mdp(rng, n_states, n_actions, gamma=0.9):
    """States only move to higher indices; the last state is terminal."""
    p = np.zeros((n_states, n_actions, n_states))
    for s in range(n_states - 1):
        for a in range(n_actions):
            k = rng.integers(1, min(3, n_states - s - 1) + 1)
            succ = rng.choice(np.arange(s + 1, n_states), size=k, replace=False)
            p[s, a, succ] = rng.dirichlet(np.ones(k))
    p[-1, :, -1] = 1.0
    terminal = np.zeros(n_states, dtype=bool)
    terminal[-1] = True
    return TabularMdp(p, terminal, gamma)


def chain_mdp(n_states=2, n_actions=2, gamma=0.9):
    """s0 -> s1 -> ... -> s_{n-1} (terminal), every action moves forward."""
    p = np.zeros((n_states, n_actions, n_states))
    for s in range(n_states - 1):
        p[s, :, s + 1] = 1.0
    p[-1, :, -1] = 1.0
    terminal = np.zeros(n_states, dtype=bool)
    terminal[-1] = True
    return TabularMdp(p, terminal, gamma)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
