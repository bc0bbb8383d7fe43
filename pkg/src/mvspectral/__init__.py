"""Multi-view spectral embedding with robust weighting fusion.

A stochastic, generalizable approximation of the joint eigenvectors of
per-view graph Laplacians: per-view encoder networks, a dynamic simplex
weighting fusion, and a QR orthogonalization layer, verified against an
exact dense spectral oracle.
"""

from ._kernels import BACKEND, NUMBA_ENABLED

__version__ = "0.1.0"

__all__ = ["BACKEND", "NUMBA_ENABLED", "__version__"]
