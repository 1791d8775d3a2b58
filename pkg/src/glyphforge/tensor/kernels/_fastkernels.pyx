# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled im2col/col2im kernels.

Same layout contract as the numpy lane (see pykernels.py): windows are
written in gemm-ready row-major order so the convolution matmul needs no
further reshuffling. These loops are where the training hot path spends
its gather/scatter time.
"""
import numpy as np

cimport cython

ctypedef fused real:
    float
    double

NAME = "cython"


def im2col(real[:, :, :, ::1] xp, Py_ssize_t kh, Py_ssize_t kw, Py_ssize_t stride,
           Py_ssize_t oh, Py_ssize_t ow, real[:, ::1] out):
    cdef Py_ssize_t N = xp.shape[0]
    cdef Py_ssize_t C = xp.shape[1]
    cdef Py_ssize_t n, c, y, x, i, j, row, col, ybase, xbase
    for n in range(N):
        for y in range(oh):
            ybase = y * stride
            for x in range(ow):
                xbase = x * stride
                row = (n * oh + y) * ow + x
                col = 0
                for c in range(C):
                    for i in range(kh):
                        for j in range(kw):
                            out[row, col] = xp[n, c, ybase + i, xbase + j]
                            col += 1


def col2im(real[:, ::1] cols, real[:, :, :, ::1] xp, Py_ssize_t kh, Py_ssize_t kw,
           Py_ssize_t stride, Py_ssize_t oh, Py_ssize_t ow):
    cdef Py_ssize_t N = xp.shape[0]
    cdef Py_ssize_t C = xp.shape[1]
    cdef Py_ssize_t n, c, y, x, i, j, row, col, ybase, xbase
    for n in range(N):
        for y in range(oh):
            ybase = y * stride
            for x in range(ow):
                xbase = x * stride
                row = (n * oh + y) * ow + x
                col = 0
                for c in range(C):
                    for i in range(kh):
                        for j in range(kw):
                            xp[n, c, ybase + i, xbase + j] += cols[row, col]
                            col += 1
