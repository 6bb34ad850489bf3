"""Kernel backend selection.

The numerically hot loops (Chen products, signature accumulation, the
Goursat PDE sweep, reservoir recursions) ship in two versions: numba
``@njit`` kernels and pure-numpy fallbacks. The environment variable
``SIGRES_BACKEND`` picks one at import time:

    auto   use numba when importable (default)
    numba  require numba, fail loudly if it is missing
    numpy  force the pure-numpy path

``set_backend`` flips the choice at runtime; the benchmark script and the
backend-equivalence tests use it to drive both paths in one process.
"""

import os

_ENV_VAR = "SIGRES_BACKEND"
_requested = os.environ.get(_ENV_VAR, "auto").lower()
if _requested not in ("auto", "numba", "numpy"):
    raise ValueError(
        f"{_ENV_VAR} must be one of auto/numba/numpy, got {_requested!r}"
    )

HAS_NUMBA = False
if _requested != "numpy":
    try:
        import numba  # noqa: F401

        HAS_NUMBA = True
    except ImportError:
        if _requested == "numba":
            raise ImportError(
                f"{_ENV_VAR}=numba but numba is not importable"
            ) from None

_use_numba = HAS_NUMBA


def use_numba() -> bool:
    """True when the numba kernels are the active backend."""
    return _use_numba


def get_backend() -> str:
    return "numba" if _use_numba else "numpy"


def set_backend(name: str) -> None:
    """Switch backends at runtime ('auto', 'numba', or 'numpy')."""
    global _use_numba
    if name == "numba":
        if not HAS_NUMBA:
            raise ValueError("numba backend requested but numba is not importable")
        _use_numba = True
    elif name == "numpy":
        _use_numba = False
    elif name == "auto":
        _use_numba = HAS_NUMBA
    else:
        raise ValueError(f"unknown backend {name!r}")
