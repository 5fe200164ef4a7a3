# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops: nearest-code search, per-code scatter sums, R² sums.

Every routine here has a NumPy twin in ``_fallback`` that produces the same
numbers; the compiled versions only exist because these loops sit on the
training and evaluation hot paths.
"""

import numpy as np
cimport numpy as cnp

cnp.import_array()


def nearest_codes(const double[:, ::1] latents, const double[:, ::1] codebook):
    """Exhaustive squared-Euclidean argmin; ties go to the lowest code id."""
    cdef Py_ssize_t n = latents.shape[0]
    cdef Py_ssize_t d = latents.shape[1]
    cdef Py_ssize_t k = codebook.shape[0]
    if codebook.shape[1] != d:
        raise ValueError("latent width %d does not match codebook width %d" % (d, codebook.shape[1]))
    if k == 0:
        raise ValueError("empty codebook")

    idx_arr = np.empty(n, dtype=np.int64)
    dist_arr = np.empty(n, dtype=np.float64)
    cdef cnp.int64_t[::1] idx = idx_arr
    cdef double[::1] dist = dist_arr
    cdef Py_ssize_t i, j, c
    cdef double acc, diff, best
    cdef cnp.int64_t best_j

    with nogil:
        for i in range(n):
            best = 0.0
            best_j = -1
            for j in range(k):
                acc = 0.0
                for c in range(d):
                    diff = latents[i, c] - codebook[j, c]
                    acc = acc + diff * diff
                if best_j < 0 or acc < best:
                    best = acc
                    best_j = j
            idx[i] = best_j
            dist[i] = best
    return idx_arr, dist_arr


def scatter_sums(const double[:, ::1] latents, const cnp.int64_t[::1] indices, Py_ssize_t n_codes):
    """Per-code assignment counts and latent sums, accumulated in input order."""
    cdef Py_ssize_t n = latents.shape[0]
    cdef Py_ssize_t d = latents.shape[1]
    if indices.shape[0] != n:
        raise ValueError("indices and latents disagree on length")

    counts_arr = np.zeros(n_codes, dtype=np.float64)
    sums_arr = np.zeros((n_codes, d), dtype=np.float64)
    cdef double[::1] counts = counts_arr
    cdef double[:, ::1] sums = sums_arr
    cdef Py_ssize_t i, c
    cdef cnp.int64_t j

    for i in range(n):
        j = indices[i]
        if j < 0 or j >= n_codes:
            raise IndexError("code id %d out of range [0, %d)" % (j, n_codes))
    with nogil:
        for i in range(n):
            j = indices[i]
            counts[j] += 1.0
            for c in range(d):
                sums[j, c] += latents[i, c]
    return counts_arr, sums_arr


def r2_sums(const double[::1] pred, const double[::1] target):
    """Return (SS_res, SS_tot) with SS_tot taken about the global target mean."""
    cdef Py_ssize_t n = target.shape[0]
    if pred.shape[0] != n:
        raise ValueError("pred and target disagree on length")
    cdef Py_ssize_t i
    cdef double mean = 0.0, ss_res = 0.0, ss_tot = 0.0, r, t
    with nogil:
        for i in range(n):
            mean += target[i]
        if n > 0:
            mean = mean / n
        for i in range(n):
            r = target[i] - pred[i]
            t = target[i] - mean
            ss_res += r * r
            ss_tot += t * t
    return ss_res, ss_tot


def mask_r2_sums(const double[::1] pred, const double[::1] target, double tau):
    """(SS_res, SS_tot) of the contact masks ``cell > tau`` without materialising them."""
    cdef Py_ssize_t n = target.shape[0]
    if pred.shape[0] != n:
        raise ValueError("pred and target disagree on length")
    cdef Py_ssize_t i
    cdef double mean = 0.0, ss_res = 0.0, ss_tot = 0.0, p, t
    with nogil:
        for i in range(n):
            if target[i] > tau:
                mean += 1.0
        if n > 0:
            mean = mean / n
        for i in range(n):
            t = 1.0 if target[i] > tau else 0.0
            p = 1.0 if pred[i] > tau else 0.0
            ss_res += (t - p) * (t - p)
            ss_tot += (t - mean) * (t - mean)
    return ss_res, ss_tot
