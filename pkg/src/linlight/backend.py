"""Compute-backend selection.

Hot kernels (convolutions, ray casting, rasterization, scatter ops) exist in
two lanes: a numba-jitted lane and a pure-numpy fallback.  The lane is chosen
once at import from the ``LL_BACKEND`` environment variable:

    LL_BACKEND=numba   force the jitted lane (error if numba is missing)
    LL_BACKEND=numpy   force the pure-numpy lane
    unset / auto       numba if importable, else numpy

``LL_DETERMINISTIC=1`` (or the CLI's ``--deterministic``) pins numba to a
single thread so parallel reductions keep a fixed order.  ``LL_THREADS=N``
sets the numba thread count otherwise.
"""

import os
import warnings

_VALID = ("auto", "numba", "numpy")


def _requested() -> str:
    val = os.environ.get("LL_BACKEND", "auto").strip().lower()
    if val not in _VALID:
        raise ValueError(f"LL_BACKEND must be one of {_VALID}, got {val!r}")
    return val


def _probe_numba() -> bool:
    # workqueue is always available and keeps scheduling deterministic
    os.environ.setdefault("NUMBA_THREADING_LAYER", "workqueue")
    try:
        import numba  # noqa: F401
        return True
    except ImportError:
        return False


_req = _requested()
if _req == "numpy":
    HAVE_NUMBA = False
elif _req == "numba":
    if not _probe_numba():
        raise ImportError("LL_BACKEND=numba but numba is not importable")
    HAVE_NUMBA = True
else:
    HAVE_NUMBA = _probe_numba()
    if not HAVE_NUMBA:
        warnings.warn("numba unavailable; falling back to the pure-numpy lane")

BACKEND = "numba" if HAVE_NUMBA else "numpy"


def deterministic() -> bool:
    return os.environ.get("LL_DETERMINISTIC", "0") == "1"


def configure_threads() -> None:
    """Apply LL_THREADS / LL_DETERMINISTIC to the numba thread pool."""
    if not HAVE_NUMBA:
        return
    import numba
    if deterministic():
        numba.set_num_threads(1)
        return
    n = os.environ.get("LL_THREADS")
    if n:
        numba.set_num_threads(max(1, min(int(n), numba.config.NUMBA_NUM_THREADS)))


def accumulate_f64() -> bool:
    """Conv reductions accumulate in float64 when LL_ACC64=1 (off by default)."""
    return os.environ.get("LL_ACC64", "0") == "1"


configure_threads()
