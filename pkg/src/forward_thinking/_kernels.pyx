# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels; same arithmetic order as ``_kernels_py``."""
import numpy as np
cimport numpy as cnp
from libc.math cimport floor

cnp.import_array()


def im2col3(double[:, :, :, ::1] x):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    out = np.zeros((n, c * 9, h * w))
    cdef double[:, :, ::1] o = out
    cdef Py_ssize_t i, ch, k, dy, dx, y, xx, sy, sx
    with nogil:
        for i in range(n):
            for ch in range(c):
                for k in range(9):
                    dy = k // 3 - 1
                    dx = k % 3 - 1
                    for y in range(h):
                        sy = y + dy
                        if sy < 0 or sy >= h:
                            continue
                        for xx in range(w):
                            sx = xx + dx
                            if 0 <= sx < w:
                                o[i, ch * 9 + k, y * w + xx] = x[i, ch, sy, sx]
    return out


def col2im3(cols, Py_ssize_t c, Py_ssize_t h, Py_ssize_t w):
    cdef double[:, :, ::1] d = np.ascontiguousarray(cols, dtype=np.float64)
    cdef Py_ssize_t n = d.shape[0]
    out = np.zeros((n, c, h, w))
    cdef double[:, :, :, ::1] o = out
    cdef Py_ssize_t i, ch, k, dy, dx, y, xx, ty, tx
    with nogil:
        for i in range(n):
            for ch in range(c):
                for k in range(9):
                    dy = k // 3 - 1
                    dx = k % 3 - 1
                    for y in range(h):
                        ty = y + dy
                        if ty < 0 or ty >= h:
                            continue
                        for xx in range(w):
                            tx = xx + dx
                            if 0 <= tx < w:
                                o[i, ch, ty, tx] += d[i, ch * 9 + k, y * w + xx]
    return out


def maxpool2_forward(double[:, :, :, ::1] x):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1]
    cdef Py_ssize_t ho = x.shape[2] // 2, wo = x.shape[3] // 2
    out = np.empty((n, c, ho, wo))
    idx = np.empty((n, c, ho, wo), dtype=np.uint8)
    cdef double[:, :, :, ::1] o = out
    cdef cnp.uint8_t[:, :, :, ::1] ix = idx
    cdef Py_ssize_t i, ch, y, xx, k
    cdef double best, v
    cdef cnp.uint8_t arg
    with nogil:
        for i in range(n):
            for ch in range(c):
                for y in range(ho):
                    for xx in range(wo):
                        best = x[i, ch, 2 * y, 2 * xx]
                        arg = 0
                        for k in range(1, 4):
                            v = x[i, ch, 2 * y + k // 2, 2 * xx + k % 2]
                            if v > best:
                                best = v
                                arg = <cnp.uint8_t>k
                        o[i, ch, y, xx] = best
                        ix[i, ch, y, xx] = arg
    return out, idx


def maxpool2_backward(dout, idx, Py_ssize_t h, Py_ssize_t w):
    cdef double[:, :, :, ::1] d = np.ascontiguousarray(dout, dtype=np.float64)
    cdef cnp.uint8_t[:, :, :, ::1] ix = np.ascontiguousarray(idx, dtype=np.uint8)
    cdef Py_ssize_t n = d.shape[0], c = d.shape[1], ho = d.shape[2], wo = d.shape[3]
    out = np.zeros((n, c, h, w))
    cdef double[:, :, :, ::1] o = out
    cdef Py_ssize_t i, ch, y, xx, k
    with nogil:
        for i in range(n):
            for ch in range(c):
                for y in range(ho):
                    for xx in range(wo):
                        k = ix[i, ch, y, xx]
                        o[i, ch, 2 * y + k // 2, 2 * xx + k % 2] = d[i, ch, y, xx]
    return out


cdef inline double _pix(double[:, :, ::1] img, Py_ssize_t i, Py_ssize_t y, Py_ssize_t x,
                        Py_ssize_t h, Py_ssize_t w) nogil:
    if y < 0 or y >= h or x < 0 or x >= w:
        return 0.0
    return img[i, y, x]


def affine_warp(images, mats):
    cdef double[:, :, ::1] img = np.ascontiguousarray(images, dtype=np.float64)
    cdef double[:, :, ::1] m = np.ascontiguousarray(mats, dtype=np.float64)
    cdef Py_ssize_t n = img.shape[0], h = img.shape[1], w = img.shape[2]
    out = np.empty((n, h, w))
    cdef double[:, :, ::1] o = out
    cdef Py_ssize_t i, y, xx, x0, y0
    cdef double fxs, fys, sx, sy, x0f, y0f, fx, fy, top, bot
    with nogil:
        for i in range(n):
            for y in range(h):
                fys = <double>y
                for xx in range(w):
                    fxs = <double>xx
                    sx = m[i, 0, 0] * fxs + m[i, 0, 1] * fys + m[i, 0, 2]
                    sy = m[i, 1, 0] * fxs + m[i, 1, 1] * fys + m[i, 1, 2]
                    x0f = floor(sx)
                    y0f = floor(sy)
                    fx = sx - x0f
                    fy = sy - y0f
                    x0 = <Py_ssize_t>x0f
                    y0 = <Py_ssize_t>y0f
                    top = (1.0 - fx) * _pix(img, i, y0, x0, h, w) + fx * _pix(img, i, y0, x0 + 1, h, w)
                    bot = (1.0 - fx) * _pix(img, i, y0 + 1, x0, h, w) + fx * _pix(img, i, y0 + 1, x0 + 1, h, w)
                    o[i, y, xx] = (1.0 - fy) * top + fy * bot
    return out
