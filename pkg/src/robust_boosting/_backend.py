"""Kernel backend selection.

The hot loops exist twice: compiled versions in ``_kernels_numba`` and
vectorised numpy versions in ``_kernels_numpy``.  Numba is used unless
``ROBUST_BOOSTING_BACKEND=numpy`` is set or numba cannot be imported.
"""
import contextlib
import importlib
import os

BACKEND_ENV = "ROBUST_BOOSTING_BACKEND"
THREADS_ENV = "ROBUST_BOOSTING_THREADS"

_active = None


def _numba_available():
    try:
        import numba  # noqa: F401
    except ImportError:
        return False
    return True


def _resolve(name):
    name = (name or "numba").lower()
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {name!r}, expected 'numba' or 'numpy'")
    if name == "numba" and not _numba_available():
        name = "numpy"
    return name


def backend_name():
    global _active
    if _active is None:
        _active = _resolve(os.environ.get(BACKEND_ENV))
    return _active


def kernels():
    """Module holding the active kernel implementations."""
    return importlib.import_module(f"robust_boosting._kernels_{backend_name()}")


@contextlib.contextmanager
def use_backend(name):
    global _active
    previous = backend_name()
    _active = _resolve(name)
    try:
        yield kernels()
    finally:
        _active = previous


def set_num_threads(n=None):
    """Cap worker threads for the parallel kernels; returns the value used."""
    if n is None:
        env = os.environ.get(THREADS_ENV)
        if env is None:
            return None
        n = int(env)
    if n < 1:
        raise ValueError("thread count must be >= 1")
    if _numba_available():
        import numba

        n = min(n, numba.config.NUMBA_NUM_THREADS)
        numba.set_num_threads(n)
    return n
