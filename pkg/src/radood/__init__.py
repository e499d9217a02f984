"""radood: radar out-of-distribution detection.

Clutter simulation, classical and adaptive detectors, local whitening, a
complex-valued VAE with a non-circular latent, PIT calibration and weighted
log-p fusion, plus a seeded Monte Carlo experiment harness.
"""

import os as _os

# Heavy lifting happens in our own batched kernels and worker pool; nested
# BLAS threading on tiny matrices only thrashes.  Best effort: respected
# only if numpy has not been imported yet.
_os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
_os.environ.setdefault("OMP_NUM_THREADS", "1")
_os.environ.setdefault("MKL_NUM_THREADS", "1")

from . import calibrate, covariance, detectors, linalg, simulate, whitening  # noqa: E402
from ._kernels import backend_name  # noqa: E402

__version__ = "0.1.0"

__all__ = ["calibrate", "covariance", "detectors", "linalg", "simulate",
           "whitening", "backend_name", "__version__"]
