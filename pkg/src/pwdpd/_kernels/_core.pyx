# cython: language_level=3
"""Compiled polynomial-bank kernel: fused per-sample evaluation without the
per-term temporaries of the NumPy path."""

import numpy as np

cimport numpy as cnp

cnp.import_array()


def bank_eval(
    cnp.int32_t[::1] terms_p,
    cnp.int32_t[::1] terms_v,
    cnp.complex128_t[:, ::1] coeffs,
    cnp.complex128_t[:, ::1] u,
    cnp.complex128_t[:, ::1] c,
):
    cdef Py_ssize_t n_rows = u.shape[0]
    cdef Py_ssize_t n_samp = u.shape[1]
    cdef Py_ssize_t n_terms = terms_p.shape[0]
    cdef cnp.ndarray[cnp.complex128_t, ndim=2] out = np.empty(
        (n_rows, n_samp), dtype=np.complex128
    )
    cdef cnp.complex128_t[:, ::1] y = out
    cdef Py_ssize_t m, n, i, j
    cdef double complex uu, cc, acc, basis, upow
    cdef double a2, apow
    cdef int p, v

    for m in range(n_rows):
        for n in range(n_samp):
            uu = u[m, n]
            cc = c[m, n]
            a2 = uu.real * uu.real + uu.imag * uu.imag
            acc = 0
            for i in range(n_terms):
                p = terms_p[i]
                v = terms_v[i]
                if v == 0:
                    apow = 1.0
                    for j in range(p):
                        apow *= a2
                    basis = uu * apow
                elif v == 1:
                    apow = 1.0
                    for j in range(p):
                        apow *= a2
                    basis = apow * cc
                else:
                    apow = 1.0
                    for j in range(p - 1):
                        apow *= a2
                    basis = uu * uu * apow * cc.conjugate()
                acc = acc + coeffs[m, i] * basis
            y[m, n] = acc
    return out
