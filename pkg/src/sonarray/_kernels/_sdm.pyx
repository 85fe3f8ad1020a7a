# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled second-order sigma-delta inner loop.

Must stay operation-for-operation identical to ``pure.py`` so the two
backends produce bit-identical streams.
"""


def sigma_delta_bits(const double[::1] x, const double[::1] dither,
                     double clip1, double clip2, unsigned char[::1] out):
    """Second-order sigma-delta modulation of ``x`` into 1-bit ``out``."""
    cdef Py_ssize_t n = x.shape[0]
    if dither.shape[0] != n or out.shape[0] != n:
        raise ValueError("x, dither, and out must have equal lengths")
    cdef Py_ssize_t i
    cdef double i1 = 0.0
    cdef double i2 = 0.0
    cdef double y = -1.0
    with nogil:
        for i in range(n):
            i1 = i1 + x[i] - y
            if i1 > clip1:
                i1 = clip1
            elif i1 < -clip1:
                i1 = -clip1
            i2 = i2 + i1 - y
            if i2 > clip2:
                i2 = clip2
            elif i2 < -clip2:
                i2 = -clip2
            if i2 + dither[i] >= 0.0:
                y = 1.0
                out[i] = 1
            else:
                y = -1.0
                out[i] = 0
