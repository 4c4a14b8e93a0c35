# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the Monte Carlo hot kernels."""

import numpy as np
cimport numpy as cnp
from libc.math cimport cos, sin, M_PI

cnp.import_array()


def quadform_mean(Y, A):
    # Uses Hermitian symmetry: sum_l y^H A y = sum_i A_ii S_ii + 2 Re sum_{i<j} A_ij S_ji,
    # with S = Y Y^H accumulated along contiguous snapshot rows.
    cdef const double[:, :, ::1] y = np.ascontiguousarray(Y, dtype=np.complex128).view(np.float64)
    cdef const double[:, :, ::1] a = np.ascontiguousarray(A, dtype=np.complex128).view(np.float64)
    cdef Py_ssize_t B = y.shape[0], N = y.shape[1], L2 = y.shape[2]
    cdef Py_ssize_t b, i, j, l
    cdef double sre, sim, are, aim, yir, yii, yjr, yji, total
    out = np.empty(B, dtype=np.float64)
    cdef double[::1] o = out
    with nogil:
        for b in range(B):
            total = 0.0
            for i in range(N):
                sre = 0.0
                for l in range(0, L2, 2):
                    sre = sre + y[b, i, l] * y[b, i, l] + y[b, i, l + 1] * y[b, i, l + 1]
                total = total + a[b, i, 2 * i] * sre
                for j in range(i + 1, N):
                    # S_ji = sum_l y_jl conj(y_il)
                    sre = 0.0
                    sim = 0.0
                    for l in range(0, L2, 2):
                        yir = y[b, i, l]
                        yii = y[b, i, l + 1]
                        yjr = y[b, j, l]
                        yji = y[b, j, l + 1]
                        sre = sre + yjr * yir + yji * yii
                        sim = sim + yji * yir - yjr * yii
                    are = a[b, i, 2 * j]
                    aim = a[b, i, 2 * j + 1]
                    total = total + 2.0 * (are * sre - aim * sim)
            o[b] = total / (L2 // 2)
    return out


def psk_bit_errors(z, tx_index, int M, double offset, labels):
    # Minimum distance over a PSK ring is the maximum of Re(z conj(s_m)).
    cdef const double[:, ::1] zz = np.ascontiguousarray(z, dtype=np.complex128).view(np.float64)
    cdef const long[:, ::1] tx = np.ascontiguousarray(tx_index, dtype=np.int64)
    cdef const long[::1] lab = np.ascontiguousarray(labels, dtype=np.int64)
    cdef Py_ssize_t K = zz.shape[0], n = tx.shape[1], k, i, m
    cdef long best, x, cnt
    cdef double score, top, zr, zi
    cdef double[::1] cr = np.cos(2 * np.pi * np.arange(M) / M + offset)
    cdef double[::1] ci = np.sin(2 * np.pi * np.arange(M) / M + offset)
    out = np.zeros(K, dtype=np.int64)
    cdef long[::1] o = out
    with nogil:
        for k in range(K):
            for i in range(n):
                zr = zz[k, 2 * i]
                zi = zz[k, 2 * i + 1]
                best = 0
                top = zr * cr[0] + zi * ci[0]
                for m in range(1, M):
                    score = zr * cr[m] + zi * ci[m]
                    if score > top:
                        top = score
                        best = m
                x = lab[best] ^ lab[tx[k, i]]
                cnt = 0
                while x:
                    cnt = cnt + (x & 1)
                    x = x >> 1
                o[k] += cnt
    return out
