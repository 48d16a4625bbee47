# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled contrastive kernel; mirrors adacon._kernels_py.contrastive_terms."""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, log

cnp.import_array()

BACKEND = "cython"


def contrastive_terms(double[:, ::1] cos, double[:, ::1] margins,
                      double[:, ::1] pos_mask, double s):
    cdef Py_ssize_t b = cos.shape[0]
    cdef cnp.ndarray[double, ndim=1] per_anchor = np.zeros(b)
    cdef cnp.ndarray[double, ndim=2] grad_cos = np.zeros((b, b))
    cdef double[:] per = per_anchor
    cdef double[:, :] grad = grad_cos
    cdef Py_ssize_t i, a
    cdef double shift, denom, val, npos, pos_cos, w
    cdef int skipped = 0

    for i in range(b):
        npos = 0.0
        pos_cos = 0.0
        for a in range(b):
            if pos_mask[i, a] != 0.0:
                npos += 1.0
                pos_cos += cos[i, a]
        if npos == 0.0:
            skipped += 1
            continue

        shift = -1e308
        for a in range(b):
            if a == i:
                continue
            val = s * (cos[i, a] + margins[i, a])
            if val > shift:
                shift = val
        denom = 0.0
        for a in range(b):
            if a == i:
                continue
            denom += exp(s * (cos[i, a] + margins[i, a]) - shift)
        per[i] = shift + log(denom) - s * pos_cos / npos

        for a in range(b):
            if a == i:
                continue
            w = exp(s * (cos[i, a] + margins[i, a]) - shift) / denom
            grad[i, a] = s * w - (s / npos) * pos_mask[i, a]

    return per_anchor, grad_cos, skipped
