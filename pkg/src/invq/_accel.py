"""Optional numba acceleration for the hot loops.

Every kernel exists as plain python/numpy code; when numba is importable a
compiled twin is built from the same function. ``INVQ_DISABLE_NUMBA=1`` makes
the plain path the default (both stay callable, which the benchmark uses).
"""
import os

try:
    import numba

    NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover
    numba = None
    NUMBA_AVAILABLE = False

DISABLE_NUMBA = os.environ.get("INVQ_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes")


def compile_kernel(func):
    """Return a lazily compiled njit twin of ``func`` (or None without numba)."""
    if not NUMBA_AVAILABLE:
        return None
    return numba.njit(cache=True, nogil=True)(func)


def default_backend() -> str:
    if DISABLE_NUMBA or not NUMBA_AVAILABLE:
        return "numpy"
    return "numba"


def resolve_backend(backend=None) -> str:
    if backend is None:
        return default_backend()
    if backend not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {backend!r}")
    if backend == "numba" and not NUMBA_AVAILABLE:
        raise RuntimeError("numba backend requested but numba is not installed")
    return backend
