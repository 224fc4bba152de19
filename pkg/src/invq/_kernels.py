"""Hot inner loops: tabular inverse Q-learning replay.

``iql_replay_loop`` is written in scalar-loop form so numba can compile it;
``iql_replay_numpy`` is the row-vectorised fallback. Both apply exactly the
same update order per transition.
"""
import math

import numpy as np

from ._accel import compile_kernel, resolve_backend


def iql_replay_loop(states, actions, next_states, done, epochs,
                    reward, q, q_sh, counter, q_c, safe,
                    fixed_policy, use_fixed, use_constraints,
                    gamma, alpha_r, alpha_sh, alpha_q, alpha_c, eps):
    n = q.shape[1]
    inv = 1.0 / (n - 1)
    eta = np.empty(n)
    for _ in range(epochs):
        for k in range(states.shape[0]):
            s = states[k]
            a = actions[k]
            sn = next_states[k]
            counter[s, a] += 1
            total = 0.0
            for b in range(n):
                total += counter[s, b]
            if done[k]:
                vnext = 0.0
            else:
                vnext = q[sn, 0]
                for b in range(1, n):
                    if q[sn, b] > vnext:
                        vnext = q[sn, b]
            q_sh[s, a] = (1.0 - alpha_sh) * q_sh[s, a] + alpha_sh * gamma * vnext
            for b in range(n):
                if use_fixed:
                    p = fixed_policy[s, b]
                else:
                    p = counter[s, b] / total
                eta[b] = math.log(max(p, eps)) - q_sh[s, b]
            acc = 0.0
            for b in range(n):
                if b != a:
                    acc += reward[s, b] - eta[b]
            target = eta[a] + inv * acc
            reward[s, a] = (1.0 - alpha_r) * reward[s, a] + alpha_r * target
            q[s, a] = (1.0 - alpha_q) * q[s, a] + alpha_q * (reward[s, a] + gamma * vnext)
            if use_constraints:
                vc = 0.0
                if not done[k]:
                    vc = -np.inf
                    for b in range(n):
                        if safe[sn, b] and q_c[sn, b] > vc:
                            vc = q_c[sn, b]
                q_c[s, a] = (1.0 - alpha_c) * q_c[s, a] + alpha_c * (reward[s, a] + gamma * vc)


_iql_replay_jit = compile_kernel(iql_replay_loop)


def iql_step_numpy(s, a, sn, done, reward, q, q_sh, counter, q_c, safe, fixed_policy,
                   gamma, alpha_r, alpha_sh, alpha_q, alpha_c, eps):
    n = q.shape[1]
    counter[s, a] += 1
    if fixed_policy is None:
        pi = counter[s] / counter[s].sum()
    else:
        pi = fixed_policy[s]
    vnext = 0.0 if done else q[sn].max()
    q_sh[s, a] = (1.0 - alpha_sh) * q_sh[s, a] + alpha_sh * gamma * vnext
    eta = np.log(np.maximum(pi, eps)) - q_sh[s]
    others = reward[s] - eta
    target = eta[a] + (others.sum() - others[a]) / (n - 1)
    reward[s, a] = (1.0 - alpha_r) * reward[s, a] + alpha_r * target
    q[s, a] = (1.0 - alpha_q) * q[s, a] + alpha_q * (reward[s, a] + gamma * vnext)
    if q_c is not None:
        vc = 0.0 if done else q_c[sn][safe[sn]].max()
        q_c[s, a] = (1.0 - alpha_c) * q_c[s, a] + alpha_c * (reward[s, a] + gamma * vc)


def iql_replay(transitions, done, epochs, reward, q, q_sh, counter, q_c=None, safe=None,
               fixed_policy=None, *, gamma, alpha_r, alpha_sh, alpha_q, alpha_c, eps,
               backend=None):
    """Apply the per-transition update to every row of ``transitions``, ``epochs`` times.

    Tables are updated in place.
    """
    backend = resolve_backend(backend)
    transitions = np.ascontiguousarray(transitions, dtype=np.int64).reshape(-1, 3)
    done = np.ascontiguousarray(done, dtype=np.bool_)
    if backend == "numpy":
        for _ in range(epochs):
            for (s, a, sn), d in zip(transitions.tolist(), done.tolist()):
                iql_step_numpy(s, a, sn, d, reward, q, q_sh, counter, q_c, safe, fixed_policy,
                               gamma, alpha_r, alpha_sh, alpha_q, alpha_c, eps)
        return
    use_constraints = q_c is not None
    use_fixed = fixed_policy is not None
    if not use_constraints:
        q_c = np.zeros((1, 1))
        safe = np.ones((1, 1), dtype=np.bool_)
    if not use_fixed:
        fixed_policy = np.zeros((1, 1))
    _iql_replay_jit(
        transitions[:, 0].copy(), transitions[:, 1].copy(), transitions[:, 2].copy(), done,
        int(epochs), reward, q, q_sh, counter, q_c, np.ascontiguousarray(safe, dtype=np.bool_),
        np.ascontiguousarray(fixed_policy, dtype=np.float64), use_fixed, use_constraints,
        float(gamma), float(alpha_r), float(alpha_sh), float(alpha_q), float(alpha_c), float(eps),
    )
