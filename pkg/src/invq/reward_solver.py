"""Per-state reward linear system.

For one state with ``n`` actions the rewards satisfy ``X r = Y`` where ``X``
has unit diagonal and ``-1/(n-1)`` elsewhere and ``Y`` is built from the
per-action eta values (log-probability minus discounted next-state value).
``X`` has rank ``n - 1`` with the all-ones vector spanning its null space and
``Y`` always sums to zero, so the system is consistent; we return the
minimum-norm least-squares solution.
"""
from functools import lru_cache

import numpy as np

RESIDUAL_TOL = 1e-8


def _check_n(n):
    if int(n) != n or n < 2:
        raise ValueError(f"need at least 2 actions, got n={n}")
    return int(n)


def build_coefficient_matrix(n: int) -> np.ndarray:
    n = _check_n(n)
    x = np.full((n, n), -1.0 / (n - 1))
    np.fill_diagonal(x, 1.0)
    return x


def build_target_vector(eta) -> np.ndarray:
    """Entry i is ``eta_i - sum_{j != i} eta_j / (n - 1)``.

    Works row-wise on a 2-d array of eta vectors as well.
    """
    eta = np.asarray(eta, dtype=np.float64)
    n = _check_n(eta.shape[-1])
    if not np.all(np.isfinite(eta)):
        raise ValueError("eta must be finite")
    others = eta.sum(axis=-1, keepdims=True) - eta
    return eta - others / (n - 1)


@lru_cache(maxsize=32)
def _pinv(n):
    p = np.linalg.pinv(build_coefficient_matrix(n))
    p.flags.writeable = False
    return p


def solve_state_rewards(eta) -> np.ndarray:
    """Minimum-norm reward vector for one state's eta vector."""
    eta = np.asarray(eta, dtype=np.float64)
    if eta.ndim != 1:
        raise ValueError("eta must be a vector; use solve_rewards for batches")
    x = build_coefficient_matrix(eta.shape[0])
    y = build_target_vector(eta)
    r, *_ = np.linalg.lstsq(x, y, rcond=None)
    _check_residual(x, r, y)
    return r


def solve_rewards(eta) -> np.ndarray:
    """Row-wise minimum-norm solve for an (S, n) array of eta vectors."""
    eta = np.asarray(eta, dtype=np.float64)
    y = build_target_vector(eta)
    n = eta.shape[-1]
    r = y @ _pinv(n).T
    _check_residual(build_coefficient_matrix(n), r, y)
    return r


def _check_residual(x, r, y):
    resid = r @ x.T - y
    scale = max(1.0, float(np.max(np.abs(y), initial=0.0)))
    if np.max(np.abs(resid), initial=0.0) > RESIDUAL_TOL * scale:
        raise FloatingPointError(
            f"reward system residual {np.max(np.abs(resid)):.3e} exceeds tolerance"
        )
