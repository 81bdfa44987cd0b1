# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels: counter-based normals and the spectral kick."""

from libc.math cimport cos, sin, log, sqrt, isfinite
from libc.stdint cimport uint32_t, uint64_t

import numpy as np

cdef uint32_t M0 = 0xD2511F53u
cdef uint32_t M1 = 0xCD9E8D57u
cdef uint32_t W0 = 0x9E3779B9u
cdef uint32_t W1 = 0xBB67AE85u
cdef double TWO_PI = 6.283185307179586
cdef double INV_2_53 = 1.0 / 9007199254740992.0

BACKEND = "cython"


cdef inline void _philox(uint32_t* c, uint32_t k0, uint32_t k1) noexcept nogil:
    cdef uint64_t p0, p1
    cdef uint32_t hi0, lo0, hi1, lo1
    cdef int i
    for i in range(10):
        p0 = <uint64_t>M0 * c[0]
        p1 = <uint64_t>M1 * c[2]
        hi0 = <uint32_t>(p0 >> 32)
        lo0 = <uint32_t>p0
        hi1 = <uint32_t>(p1 >> 32)
        lo1 = <uint32_t>p1
        c[0] = hi1 ^ c[1] ^ k0
        c[1] = lo1
        c[2] = hi0 ^ c[3] ^ k1
        c[3] = lo0
        k0 = k0 + W0
        k1 = k1 + W1


def philox4x32(uint32_t[:, ::1] ctr, uint32_t k0, uint32_t k1):
    """Philox4x32-10 over rows of ``ctr`` (shape ``(N, 4)``)."""
    out = np.array(ctr, dtype=np.uint32, copy=True)
    cdef uint32_t[:, ::1] o = out
    cdef Py_ssize_t i
    with nogil:
        for i in range(o.shape[0]):
            _philox(&o[i, 0], k0, k1)
    return out


def normals(uint64_t seed, uint64_t[::1] streams, uint32_t[::1] steps,
            Py_ssize_t nblocks, double[:, :, :, ::1] out):
    cdef uint32_t k0 = <uint32_t>seed
    cdef uint32_t k1 = <uint32_t>(seed >> 32)
    cdef uint32_t c[4]
    cdef Py_ssize_t r, j, b
    cdef double ua, ub, rad
    with nogil:
        for r in range(streams.shape[0]):
            for j in range(steps.shape[0]):
                for b in range(nblocks):
                    c[0] = <uint32_t>b
                    c[1] = steps[j]
                    c[2] = <uint32_t>streams[r]
                    c[3] = <uint32_t>(streams[r] >> 32)
                    _philox(c, k0, k1)
                    ua = ((c[0] >> 5) * 67108864.0 + (c[1] >> 6)) * INV_2_53
                    ub = ((c[2] >> 5) * 67108864.0 + (c[3] >> 6)) * INV_2_53
                    rad = sqrt(-2.0 * log(1.0 - ua))
                    out[r, j, b, 0] = rad * cos(TWO_PI * ub)
                    out[r, j, b, 1] = rad * sin(TWO_PI * ub)


def spectral_step(double complex[:, ::1] base, double complex[:, ::1] src,
                  double complex[:, ::1] coeff, Py_ssize_t[:, ::1] gidx,
                  double[::1] mult, double b, double complex[:, ::1] out):
    """out = mult * (base + b * sum_j coeff[:, j] * src[:, gidx[j]]).

    ``out`` may alias ``base`` but not ``src``. Returns False when a
    non-finite value was produced.
    """
    cdef Py_ssize_t R = base.shape[0]
    cdef Py_ssize_t N = base.shape[1]
    cdef Py_ssize_t J = coeff.shape[1]
    cdef Py_ssize_t r, q, j, s
    cdef double ar, ai, cr, ci, sr, si, m
    cdef bint ok = True
    with nogil:
        for r in range(R):
            for q in range(N):
                ar = 0.0
                ai = 0.0
                for j in range(J):
                    s = gidx[j, q]
                    cr = coeff[r, j].real
                    ci = coeff[r, j].imag
                    sr = src[r, s].real
                    si = src[r, s].imag
                    ar = ar + (cr * sr - ci * si)
                    ai = ai + (cr * si + ci * sr)
                m = mult[q]
                ar = (base[r, q].real + b * ar) * m
                ai = (base[r, q].imag + b * ai) * m
                if not (isfinite(ar) and isfinite(ai)):
                    ok = False
                out[r, q] = ar + 1j * ai
    return ok


def spectral_step_rows(double complex[:, ::1] base, double complex[:, ::1] src,
                       double complex[:, ::1] coeff, Py_ssize_t[:, ::1] gidx,
                       Py_ssize_t[::1] rows, double[::1] mult, double b,
                       double complex[:, ::1] out):
    """spectral_step restricted to the output indices ``rows``; others untouched."""
    cdef Py_ssize_t R = base.shape[0]
    cdef Py_ssize_t Q = rows.shape[0]
    cdef Py_ssize_t J = coeff.shape[1]
    cdef Py_ssize_t r, i, q, j, s
    cdef double ar, ai, cr, ci, sr, si, m
    cdef bint ok = True
    with nogil:
        for r in range(R):
            for i in range(Q):
                q = rows[i]
                ar = 0.0
                ai = 0.0
                for j in range(J):
                    s = gidx[j, q]
                    cr = coeff[r, j].real
                    ci = coeff[r, j].imag
                    sr = src[r, s].real
                    si = src[r, s].imag
                    ar = ar + (cr * sr - ci * si)
                    ai = ai + (cr * si + ci * sr)
                m = mult[q]
                ar = (base[r, q].real + b * ar) * m
                ai = (base[r, q].imag + b * ai) * m
                if not (isfinite(ar) and isfinite(ai)):
                    ok = False
                out[r, q] = ar + 1j * ai
    return ok
