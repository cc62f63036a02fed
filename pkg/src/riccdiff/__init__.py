"""riccdiff: simulation and verification lab for matrix-valued Riccati
diffusions and ensemble Kalman-Bucy filters."""

import os as _os

# deterministic kernels work on any layer; omp avoids the noisy TBB probe
_os.environ.setdefault("NUMBA_THREADING_LAYER", "omp")

from . import dyson, enkf, matcore, mc, riccati
from .errors import RiccdiffError

__all__ = ["matcore", "riccati", "dyson", "enkf", "mc", "RiccdiffError"]

__version__ = "0.1.0"


def set_threads(n: int) -> int:
    """Cap the compiled-kernel thread pool; returns the applied count.
    Results are bit-identical for any thread count."""
    import numba

    n = max(1, min(int(n), numba.config.NUMBA_NUM_THREADS))
    numba.set_num_threads(n)
    return n
