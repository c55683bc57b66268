"""Spatial-temporal multi-frequency video prediction at desk scale."""

import os

# BLAS thread count must be fixed before numpy loads for reproducible sums.
_threads = os.environ.get("STMFA_THREADS", "1")
for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, _threads)

__version__ = "0.1.0"
