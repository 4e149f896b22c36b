"""Kernel backend selection: numba-accelerated loops with a pure-numpy fallback.

The active backend is chosen once from the TACOFORMER_KERNELS environment
variable ("numba" or "numpy", default numba when importable) and can be
switched at runtime with set_backend(). Both backends compute the same
float64 arithmetic; they differ only in how the loops are executed.
"""

import os

_VALID = ("numba", "numpy")


def _tune_allocator():
    """Keep large numpy temporaries on glibc's free lists.

    Training allocates tens of multi-megabyte arrays per step; with the
    default mmap threshold each one is a fresh mmap whose page faults
    dominate the actual arithmetic (measured ~4x slowdown). Raising the
    mmap/trim thresholds makes those buffers reusable. Best effort only.
    """
    try:
        import ctypes

        libc = ctypes.CDLL("libc.so.6")
        libc.mallopt(-3, 1 << 30)  # M_MMAP_THRESHOLD
        libc.mallopt(-1, 1 << 30)  # M_TRIM_THRESHOLD
    except (OSError, AttributeError):
        pass


_tune_allocator()

try:
    import numba  # noqa: F401
    _HAVE_NUMBA = True
except ImportError:
    _HAVE_NUMBA = False

_env = os.environ.get("TACOFORMER_KERNELS", "").strip().lower()
if _env and _env not in _VALID:
    raise ValueError(f"TACOFORMER_KERNELS must be one of {_VALID}, got {_env!r}")
if _env == "numba" and not _HAVE_NUMBA:
    raise ImportError("TACOFORMER_KERNELS=numba but numba is not installed")

_backend = _env or ("numba" if _HAVE_NUMBA else "numpy")


def active_backend() -> str:
    return _backend


def have_numba() -> bool:
    return _HAVE_NUMBA


def set_backend(name: str) -> None:
    """Switch kernel backend at runtime (used by tests and the benchmark)."""
    global _backend
    if name not in _VALID:
        raise ValueError(f"backend must be one of {_VALID}, got {name!r}")
    if name == "numba" and not _HAVE_NUMBA:
        raise ImportError("numba backend requested but numba is not installed")
    _backend = name
