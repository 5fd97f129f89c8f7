"""Value iteration and simulation tools for perishable inventory problems."""

import numba

# TBB is probed first by default and warns when the installed version is old.
numba.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]

__version__ = "0.1.0"
