# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled simulation kernels.

Same contract as the numpy backend in ``_pykernels``: noise is pre-drawn by
the caller, outputs are the per-update excess risk, consensus distance and
first divergence/escape indices per replication.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport NAN, fabs

cnp.import_array()

ALG_CENTRALIZED = 0
ALG_CONSENSUS = 1
ALG_DIFFUSION = 2

cdef int _CEN = 0
cdef int _DIF = 2


def simulate_quadratic(double[:, :, ::1] w0, double[:, ::1] A,
                       double[:, :, ::1] H, double[:, ::1] w_loc,
                       double[:, ::1] h_bar, double[::1] w_star,
                       double[:, :, :, ::1] noise, double[::1] mu,
                       int alg, double div_threshold):
    cdef Py_ssize_t R = noise.shape[0]
    cdef Py_ssize_t n = noise.shape[1]
    cdef Py_ssize_t K = noise.shape[2]
    cdef Py_ssize_t M = noise.shape[3]

    er_arr = np.empty((R, n))
    cons_arr = np.empty((R, n))
    div_arr = np.full(R, -1, dtype=np.int64)
    cdef double[:, ::1] er = er_arr
    cdef double[:, ::1] cons = cons_arr
    cdef long long[::1] diverged_at = div_arr

    work = np.empty((K, M))
    work2 = np.empty((K, M))
    cdef double[:, ::1] w = work
    cdef double[:, ::1] phi = work2

    cdef Py_ssize_t r, t, k, l, m, j
    cdef double acc, val, quad, tmp, centroid, step
    cdef bint dead

    with nogil:
        for r in range(R):
            for k in range(K):
                for m in range(M):
                    w[k, m] = w0[r, k, m]
            dead = False
            for t in range(n):
                step = mu[t]
                if alg == _CEN:
                    # shared iterate lives in row 0; average the K agent batches
                    for m in range(M):
                        phi[0, m] = 0.0
                    for k in range(K):
                        for m in range(M):
                            acc = noise[r, t, k, m]
                            for j in range(M):
                                acc += H[k, m, j] * (w[0, j] - w_loc[k, j])
                            phi[0, m] += acc
                    for m in range(M):
                        w[0, m] -= step * phi[0, m] / K
                    for m in range(M):
                        if fabs(w[0, m]) > div_threshold:
                            dead = True
                    if dead:
                        diverged_at[r] = t
                        break
                    quad = 0.0
                    for m in range(M):
                        acc = 0.0
                        for j in range(M):
                            acc += h_bar[m, j] * (w[0, j] - w_star[j])
                        quad += (w[0, m] - w_star[m]) * acc
                    er[r, t] = 0.5 * quad
                    cons[r, t] = 0.0
                else:
                    if alg == _DIF:
                        # adapt: phi_k = w_k - mu * (grad_k(w_k) + noise_k)
                        for k in range(K):
                            for m in range(M):
                                acc = noise[r, t, k, m]
                                for j in range(M):
                                    acc += H[k, m, j] * (w[k, j] - w_loc[k, j])
                                phi[k, m] = w[k, m] - step * acc
                        # combine: w_k = sum_l a_{lk} phi_l
                        for k in range(K):
                            for m in range(M):
                                acc = 0.0
                                for l in range(K):
                                    acc += A[l, k] * phi[l, m]
                                w[k, m] = acc
                    else:
                        # consensus: combine previous iterates first
                        for k in range(K):
                            for m in range(M):
                                acc = 0.0
                                for l in range(K):
                                    acc += A[l, k] * w[l, m]
                                phi[k, m] = acc
                        for k in range(K):
                            for m in range(M):
                                acc = noise[r, t, k, m]
                                for j in range(M):
                                    acc += H[k, m, j] * (w[k, j] - w_loc[k, j])
                                phi[k, m] -= step * acc
                        for k in range(K):
                            for m in range(M):
                                w[k, m] = phi[k, m]
                    for k in range(K):
                        for m in range(M):
                            if fabs(w[k, m]) > div_threshold:
                                dead = True
                    if dead:
                        diverged_at[r] = t
                        break
                    quad = 0.0
                    for k in range(K):
                        for m in range(M):
                            acc = 0.0
                            for j in range(M):
                                acc += h_bar[m, j] * (w[k, j] - w_star[j])
                            quad += (w[k, m] - w_star[m]) * acc
                    er[r, t] = 0.5 * quad / K
                    tmp = 0.0
                    for m in range(M):
                        centroid = 0.0
                        for k in range(K):
                            centroid += w[k, m]
                        centroid /= K
                        for k in range(K):
                            val = w[k, m] - centroid
                            tmp += val * val
                    cons[r, t] = tmp
            if dead:
                for j in range(diverged_at[r], n):
                    er[r, j] = NAN
                    cons[r, j] = NAN
    return er_arr, cons_arr, div_arr


def simulate_double_well(double[:, ::1] w0, double[:, ::1] A, double[::1] b,
                         double[:, :, ::1] noise, double[::1] mu, int alg,
                         double j_star, double basin_lo, double basin_hi,
                         double div_threshold):
    cdef Py_ssize_t R = noise.shape[0]
    cdef Py_ssize_t n = noise.shape[1]
    cdef Py_ssize_t K = noise.shape[2]

    er_arr = np.empty((R, n))
    cons_arr = np.empty((R, n))
    esc_arr = np.full(R, -1, dtype=np.int64)
    div_arr = np.full(R, -1, dtype=np.int64)
    cdef double[:, ::1] er = er_arr
    cdef double[:, ::1] cons = cons_arr
    cdef long long[::1] escaped_at = esc_arr
    cdef long long[::1] diverged_at = div_arr

    work = np.empty(K)
    work2 = np.empty(K)
    cdef double[::1] w = work
    cdef double[::1] phi = work2

    cdef Py_ssize_t r, t, k, l, j
    cdef double acc, val, sq, centroid, step, b_mean
    cdef bint dead

    b_mean = 0.0
    for k in range(K):
        b_mean += b[k]
    b_mean /= K

    with nogil:
        for r in range(R):
            for k in range(K):
                w[k] = w0[r, k]
            dead = False
            for t in range(n):
                step = mu[t]
                if alg == _CEN:
                    acc = 0.0
                    for k in range(K):
                        acc += noise[r, t, k]
                    acc = acc / K + 4.0 * w[0] * (w[0] * w[0] - 1.0) + b_mean
                    w[0] -= step * acc
                    if fabs(w[0]) > div_threshold:
                        dead = True
                    if dead:
                        diverged_at[r] = t
                        break
                    sq = w[0] * w[0] - 1.0
                    er[r, t] = sq * sq - j_star
                    cons[r, t] = 0.0
                    centroid = w[0]
                else:
                    if alg == _DIF:
                        for k in range(K):
                            acc = 4.0 * w[k] * (w[k] * w[k] - 1.0) + b[k] + noise[r, t, k]
                            phi[k] = w[k] - step * acc
                        for k in range(K):
                            acc = 0.0
                            for l in range(K):
                                acc += A[l, k] * phi[l]
                            w[k] = acc
                    else:
                        for k in range(K):
                            acc = 0.0
                            for l in range(K):
                                acc += A[l, k] * w[l]
                            phi[k] = acc
                        for k in range(K):
                            acc = 4.0 * w[k] * (w[k] * w[k] - 1.0) + b[k] + noise[r, t, k]
                            phi[k] -= step * acc
                        for k in range(K):
                            w[k] = phi[k]
                    for k in range(K):
                        if fabs(w[k]) > div_threshold:
                            dead = True
                    if dead:
                        diverged_at[r] = t
                        break
                    acc = 0.0
                    centroid = 0.0
                    for k in range(K):
                        sq = w[k] * w[k] - 1.0
                        acc += sq * sq
                        centroid += w[k]
                    er[r, t] = acc / K - j_star
                    centroid /= K
                    acc = 0.0
                    for k in range(K):
                        val = w[k] - centroid
                        acc += val * val
                    cons[r, t] = acc
                if escaped_at[r] < 0 and (centroid <= basin_lo or centroid >= basin_hi):
                    escaped_at[r] = t
            if dead:
                for j in range(diverged_at[r], n):
                    er[r, j] = NAN
                    cons[r, j] = NAN
    return er_arr, cons_arr, esc_arr, div_arr
