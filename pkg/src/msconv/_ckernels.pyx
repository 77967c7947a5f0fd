# cython: language_level=3
"""Compiled im2col / col2im and modulated deformable sampling kernels.

Parallel loops only ever partition over outputs that a single iteration owns
(a whole (n, c) plane, or a whole (n, group, tap) slice), and every reduction
runs in a fixed serial order inside its owner, so the thread count never
changes a single bit of the result.
"""
import numpy as np
cimport numpy as cnp
from cython.parallel cimport prange
from libc.math cimport floor

cnp.import_array()


def im2col(const double[:, :, :, ::1] xp, int k, int stride, int ho, int wo, int nthreads=1):
    cdef Py_ssize_t n = xp.shape[0], c = xp.shape[1]
    out = np.empty((n, c * k * k, ho * wo))
    cdef double[:, :, ::1] col = out
    cdef Py_ssize_t p, b, ch, i, j, oy, ox
    for p in prange(n * c, nogil=True, num_threads=nthreads, schedule="static"):
        b = p // c
        ch = p % c
        for i in range(k):
            for j in range(k):
                for oy in range(ho):
                    for ox in range(wo):
                        col[b, (ch * k + i) * k + j, oy * wo + ox] = xp[b, ch, oy * stride + i, ox * stride + j]
    return out


def col2im(const double[:, :, ::1] col, int c, int hp, int wp, int k, int stride, int ho, int wo,
           int nthreads=1):
    cdef Py_ssize_t n = col.shape[0]
    out = np.zeros((n, c, hp, wp))
    cdef double[:, :, :, ::1] img = out
    cdef Py_ssize_t p, b, ch, i, j, oy, ox
    for p in prange(n * c, nogil=True, num_threads=nthreads, schedule="static"):
        b = p // c
        ch = p % c
        for i in range(k):
            for j in range(k):
                for oy in range(ho):
                    for ox in range(wo):
                        img[b, ch, oy * stride + i, ox * stride + j] += col[b, (ch * k + i) * k + j, oy * wo + ox]
    return out


cdef inline double _pix(const double[:, :, :, ::1] x, Py_ssize_t b, Py_ssize_t ch,
                        Py_ssize_t y, Py_ssize_t xx, Py_ssize_t h, Py_ssize_t w) noexcept nogil:
    if y < 0 or y >= h or xx < 0 or xx >= w:
        return 0.0
    return x[b, ch, y, xx]


def deform_im2col(const double[:, :, :, ::1] x, const double[:, :, :, ::1] offset,
                  const double[:, :, :, ::1] mask, int k, int pad, int dg, int nthreads=1):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t kk = k * k, cg = c // dg
    out = np.empty((n, c * kk, h * w))
    cdef double[:, :, ::1] col = out
    cdef Py_ssize_t p, b, ch, g, t, oy, ox, y0, x0
    cdef double py, px, ly, lx, hy, hx, v
    for p in prange(n * c, nogil=True, num_threads=nthreads, schedule="static"):
        b = p // c
        ch = p % c
        g = ch // cg
        for t in range(kk):
            for oy in range(h):
                for ox in range(w):
                    py = oy - pad + t // k + offset[b, (g * kk + t) * 2, oy, ox]
                    px = ox - pad + t % k + offset[b, (g * kk + t) * 2 + 1, oy, ox]
                    y0 = <Py_ssize_t>floor(py)
                    x0 = <Py_ssize_t>floor(px)
                    ly = py - y0
                    lx = px - x0
                    hy = 1.0 - ly
                    hx = 1.0 - lx
                    v = hy * hx * _pix(x, b, ch, y0, x0, h, w)
                    v = v + hy * lx * _pix(x, b, ch, y0, x0 + 1, h, w)
                    v = v + ly * hx * _pix(x, b, ch, y0 + 1, x0, h, w)
                    v = v + ly * lx * _pix(x, b, ch, y0 + 1, x0 + 1, h, w)
                    col[b, ch * kk + t, oy * w + ox] = mask[b, g * kk + t, oy, ox] * v
    return out


cdef inline void _splat(double[:, :, :, ::1] gx, Py_ssize_t b, Py_ssize_t ch,
                        Py_ssize_t y, Py_ssize_t xx, Py_ssize_t h, Py_ssize_t w,
                        double v) noexcept nogil:
    if y >= 0 and y < h and xx >= 0 and xx < w:
        gx[b, ch, y, xx] += v


def deform_col2im(const double[:, :, ::1] gcol, const double[:, :, :, ::1] x, const double[:, :, :, ::1] offset,
                  const double[:, :, :, ::1] mask, int k, int pad, int dg, int nthreads=1):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t kk = k * k, cg = c // dg
    gx_arr = np.zeros((n, c, h, w))
    goff_arr = np.zeros((n, 2 * dg * kk, h, w))
    gmask_arr = np.zeros((n, dg * kk, h, w))
    cdef double[:, :, :, ::1] gx = gx_arr
    cdef double[:, :, :, ::1] goff = goff_arr
    cdef double[:, :, :, ::1] gm = gmask_arr
    cdef Py_ssize_t p, b, ch, g, t, oy, ox, y0, x0, cc
    cdef double py, px, ly, lx, hy, hx, gv, m, v00, v01, v10, v11, sm, sy, sx, gc

    # input gradient: one (n, c) plane per iteration
    for p in prange(n * c, nogil=True, num_threads=nthreads, schedule="static"):
        b = p // c
        ch = p % c
        g = ch // cg
        for t in range(kk):
            for oy in range(h):
                for ox in range(w):
                    py = oy - pad + t // k + offset[b, (g * kk + t) * 2, oy, ox]
                    px = ox - pad + t % k + offset[b, (g * kk + t) * 2 + 1, oy, ox]
                    y0 = <Py_ssize_t>floor(py)
                    x0 = <Py_ssize_t>floor(px)
                    ly = py - y0
                    lx = px - x0
                    hy = 1.0 - ly
                    hx = 1.0 - lx
                    gv = gcol[b, ch * kk + t, oy * w + ox] * mask[b, g * kk + t, oy, ox]
                    _splat(gx, b, ch, y0, x0, h, w, gv * (hy * hx))
                    _splat(gx, b, ch, y0, x0 + 1, h, w, gv * (hy * lx))
                    _splat(gx, b, ch, y0 + 1, x0, h, w, gv * (ly * hx))
                    _splat(gx, b, ch, y0 + 1, x0 + 1, h, w, gv * (ly * lx))

    # offset / mask gradients: one (n, group, tap) slice per iteration, channels summed in order
    for p in prange(n * dg * kk, nogil=True, num_threads=nthreads, schedule="static"):
        b = p // (dg * kk)
        g = (p // kk) % dg
        t = p % kk
        for oy in range(h):
            for ox in range(w):
                py = oy - pad + t // k + offset[b, (g * kk + t) * 2, oy, ox]
                px = ox - pad + t % k + offset[b, (g * kk + t) * 2 + 1, oy, ox]
                y0 = <Py_ssize_t>floor(py)
                x0 = <Py_ssize_t>floor(px)
                ly = py - y0
                lx = px - x0
                hy = 1.0 - ly
                hx = 1.0 - lx
                m = mask[b, g * kk + t, oy, ox]
                sm = 0.0
                sy = 0.0
                sx = 0.0
                for cc in range(cg):
                    ch = g * cg + cc
                    gc = gcol[b, ch * kk + t, oy * w + ox]
                    v00 = _pix(x, b, ch, y0, x0, h, w)
                    v01 = _pix(x, b, ch, y0, x0 + 1, h, w)
                    v10 = _pix(x, b, ch, y0 + 1, x0, h, w)
                    v11 = _pix(x, b, ch, y0 + 1, x0 + 1, h, w)
                    sm = sm + gc * (hy * hx * v00 + hy * lx * v01 + ly * hx * v10 + ly * lx * v11)
                    sy = sy + gc * m * (-hx * v00 - lx * v01 + hx * v10 + lx * v11)
                    sx = sx + gc * m * (-hy * v00 + hy * v01 - ly * v10 + ly * v11)
                gm[b, g * kk + t, oy, ox] = sm
                goff[b, (g * kk + t) * 2, oy, ox] = sy
                goff[b, (g * kk + t) * 2 + 1, oy, ox] = sx
    return gx_arr, goff_arr, gmask_arr
