"""Hot numerical kernels with a compiled core and a NumPy fallback.

The compiled extension is used when it was built and imports cleanly.
Setting ``TEXT2PRESSURE_PURE_PYTHON=1`` forces the fallback, which is handy
for debugging and for the backend comparison benchmark.

Routines
--------
nearest_codes(latents, codebook) -> (indices, squared_distances)
scatter_sums(latents, indices, n_codes) -> (counts, sums)
r2_sums(pred, target) -> (ss_res, ss_tot)
mask_r2_sums(pred, target, tau) -> (ss_res, ss_tot)
"""

from __future__ import annotations

import os

import numpy as np

from . import _fallback

fallback = _fallback

try:
    from . import _core as compiled
except ImportError:  # extension not built
    compiled = None

if compiled is not None and os.environ.get("TEXT2PRESSURE_PURE_PYTHON", "") not in ("1", "true", "yes"):
    _impl = compiled
    BACKEND = "compiled"
else:
    _impl = _fallback
    BACKEND = "python"


def nearest_codes(latents, codebook):
    return _impl.nearest_codes(
        np.ascontiguousarray(latents, dtype=np.float64),
        np.ascontiguousarray(codebook, dtype=np.float64),
    )


def scatter_sums(latents, indices, n_codes: int):
    return _impl.scatter_sums(
        np.ascontiguousarray(latents, dtype=np.float64),
        np.ascontiguousarray(indices, dtype=np.int64),
        int(n_codes),
    )


def r2_sums(pred, target):
    return _impl.r2_sums(
        np.ascontiguousarray(pred, dtype=np.float64).ravel(),
        np.ascontiguousarray(target, dtype=np.float64).ravel(),
    )


def mask_r2_sums(pred, target, tau: float):
    return _impl.mask_r2_sums(
        np.ascontiguousarray(pred, dtype=np.float64).ravel(),
        np.ascontiguousarray(target, dtype=np.float64).ravel(),
        float(tau),
    )


__all__ = ["BACKEND", "compiled", "fallback", "nearest_codes", "scatter_sums", "r2_sums", "mask_r2_sums"]
