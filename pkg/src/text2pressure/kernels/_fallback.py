"""Pure NumPy versions of the compiled kernels.

Accumulation order mirrors the compiled loops (sequential over the latent
axis, in input order over samples) so both backends agree on ties.
"""

from __future__ import annotations

import numpy as np

_CHUNK = 2048


def nearest_codes(latents: np.ndarray, codebook: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    latents = np.ascontiguousarray(latents, dtype=np.float64)
    codebook = np.ascontiguousarray(codebook, dtype=np.float64)
    n, d = latents.shape
    if codebook.shape[1] != d:
        raise ValueError(f"latent width {d} does not match codebook width {codebook.shape[1]}")
    if codebook.shape[0] == 0:
        raise ValueError("empty codebook")

    idx = np.empty(n, dtype=np.int64)
    dist = np.empty(n, dtype=np.float64)
    for start in range(0, n, _CHUNK):
        block = latents[start:start + _CHUNK]
        acc = np.zeros((block.shape[0], codebook.shape[0]), dtype=np.float64)
        for c in range(d):
            diff = block[:, c, None] - codebook[None, :, c]
            acc += diff * diff
        # argmin returns the first minimum, i.e. the lowest code id on ties
        best = np.argmin(acc, axis=1)
        idx[start:start + block.shape[0]] = best
        dist[start:start + block.shape[0]] = acc[np.arange(block.shape[0]), best]
    return idx, dist


def scatter_sums(latents: np.ndarray, indices: np.ndarray, n_codes: int) -> tuple[np.ndarray, np.ndarray]:
    latents = np.ascontiguousarray(latents, dtype=np.float64)
    indices = np.ascontiguousarray(indices, dtype=np.int64)
    if indices.shape[0] != latents.shape[0]:
        raise ValueError("indices and latents disagree on length")
    if indices.size and (indices.min() < 0 or indices.max() >= n_codes):
        raise IndexError(f"code id out of range [0, {n_codes})")
    counts = np.zeros(n_codes, dtype=np.float64)
    sums = np.zeros((n_codes, latents.shape[1]), dtype=np.float64)
    np.add.at(counts, indices, 1.0)
    np.add.at(sums, indices, latents)
    return counts, sums


def r2_sums(pred: np.ndarray, target: np.ndarray) -> tuple[float, float]:
    pred = np.asarray(pred, dtype=np.float64).ravel()
    target = np.asarray(target, dtype=np.float64).ravel()
    if pred.shape != target.shape:
        raise ValueError("pred and target disagree on length")
    if target.size == 0:
        return 0.0, 0.0
    mean = target.sum() / target.size
    ss_res = float(np.sum((target - pred) ** 2))
    ss_tot = float(np.sum((target - mean) ** 2))
    return ss_res, ss_tot


def mask_r2_sums(pred: np.ndarray, target: np.ndarray, tau: float) -> tuple[float, float]:
    pred = np.asarray(pred, dtype=np.float64).ravel()
    target = np.asarray(target, dtype=np.float64).ravel()
    return r2_sums((pred > tau).astype(np.float64), (target > tau).astype(np.float64))
