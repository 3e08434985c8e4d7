"""Kernel backend selection.

The hot numeric kernels (Jacobi sweeps, Davies integrand, REML likelihood)
exist twice: numba-compiled and pure numpy.  META3_BACKEND=numpy forces the
numpy path; the default is numba when importable.  benchmarks/bench_backends.py
compares the two.
"""
from __future__ import annotations

import os

_requested = os.environ.get("META3_BACKEND", "numba").strip().lower()
if _requested not in ("numba", "numpy"):
    raise ValueError(f"META3_BACKEND must be 'numba' or 'numpy', got {_requested!r}")

if _requested == "numba":
    try:
        from . import _kernels_numba as _impl

        BACKEND = "numba"
    except ImportError:
        from . import _kernels_numpy as _impl

        BACKEND = "numpy"
else:
    from . import _kernels_numpy as _impl

    BACKEND = "numpy"

jacobi_eigh = _impl.jacobi_eigh
scaled_block_eigvals = _impl.scaled_block_eigvals
davies_sum = _impl.davies_sum
chernoff_bound = _impl.chernoff_bound
tail_cutoff = _impl.tail_cutoff
reml_loglik_core = _impl.reml_loglik_core
profile_loglik = _impl.profile_loglik


def backend_name() -> str:
    return BACKEND
