"""Pure-numpy kernels; same signatures as the compiled ``_ckernels`` module.

Column layout everywhere is ``(N, C*k*k, H_out*W_out)`` with row index
``c*k*k + i*k + j`` so a grouped kernel reshaped to ``(C_out, C_in/g*k*k)``
multiplies a contiguous row block per group.
"""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def im2col(xp, k, stride, ho, wo, nthreads=1):
    n, c = xp.shape[:2]
    win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :ho, :wo]
    # (N, C, ho, wo, k, k) -> (N, C, k, k, ho, wo)
    return np.ascontiguousarray(win.transpose(0, 1, 4, 5, 2, 3)).reshape(n, c * k * k, ho * wo)


def col2im(col, c, hp, wp, k, stride, ho, wo, nthreads=1):
    n = col.shape[0]
    col = col.reshape(n, c, k, k, ho, wo)
    out = np.zeros((n, c, hp, wp), dtype=col.dtype)
    for i in range(k):
        for j in range(k):
            out[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += col[:, :, i, j]
    return out


def _corners(x, offset, mask, k, pad, dg):
    """Sampling geometry shared by forward and backward."""
    n, c, h, w = x.shape
    kk = k * k
    off = offset.reshape(n, dg, kk, 2, h, w)
    hh = np.arange(h).reshape(1, 1, 1, h, 1)
    ww = np.arange(w).reshape(1, 1, 1, 1, w)
    ti = np.repeat(np.arange(k), k).reshape(1, 1, kk, 1, 1)
    tj = np.tile(np.arange(k), k).reshape(1, 1, kk, 1, 1)
    py = hh - pad + ti + off[:, :, :, 0]
    px = ww - pad + tj + off[:, :, :, 1]
    y0 = np.floor(py)
    x0 = np.floor(px)
    ly = py - y0
    lx = px - x0
    hy = 1.0 - ly
    hx = 1.0 - lx
    y0 = y0.astype(np.int64)
    x0 = x0.astype(np.int64)
    corners = []
    for dy, dx, wgt, gy, gx in (
        (0, 0, hy * hx, -hx, -hy),
        (0, 1, hy * lx, -lx, hy),
        (1, 0, ly * hx, hx, -ly),
        (1, 1, ly * lx, lx, ly),
    ):
        yi = y0 + dy
        xi = x0 + dx
        valid = (yi >= 0) & (yi < h) & (xi >= 0) & (xi < w)
        idx = np.where(valid, yi * w + xi, 0)
        corners.append((idx, valid, wgt, gy, gx))
    return corners


def _gather(x, corners, dg):
    n, c, h, w = x.shape
    cg = c // dg
    xf = x.reshape(n, dg, cg, h * w)
    vals = []
    for idx, valid, *_ in corners:
        flat = idx.reshape(n, dg, 1, -1)
        v = np.take_along_axis(xf, flat, axis=3).reshape(n, dg, cg, *idx.shape[2:])
        vals.append(v * valid[:, :, None])
    return vals


def deform_im2col(x, offset, mask, k, pad, dg, nthreads=1):
    n, c, h, w = x.shape
    kk = k * k
    corners = _corners(x, offset, mask, k, pad, dg)
    vals = _gather(x, corners, dg)
    val = 0.0
    for (idx, valid, wgt, *_), v in zip(corners, vals):
        val = val + wgt[:, :, None] * v
    m = mask.reshape(n, dg, 1, kk, h, w)
    return (m * val).reshape(n, c * kk, h * w)


def deform_col2im(gcol, x, offset, mask, k, pad, dg, nthreads=1):
    n, c, h, w = x.shape
    kk = k * k
    cg = c // dg
    corners = _corners(x, offset, mask, k, pad, dg)
    vals = _gather(x, corners, dg)
    g = gcol.reshape(n, dg, cg, kk, h, w)
    m = mask.reshape(n, dg, 1, kk, h, w)

    val = 0.0
    dvy = 0.0
    dvx = 0.0
    for (idx, valid, wgt, gy, gx), v in zip(corners, vals):
        val = val + wgt[:, :, None] * v
        dvy = dvy + gy[:, :, None] * v
        dvx = dvx + gx[:, :, None] * v
    gmask = (g * val).sum(axis=2).reshape(n, dg * kk, h, w)
    gv = g * m
    goff = np.empty((n, dg, kk, 2, h, w), dtype=gv.dtype)
    goff[:, :, :, 0] = (gv * dvy).sum(axis=2)
    goff[:, :, :, 1] = (gv * dvx).sum(axis=2)

    plane = np.arange(n * c).reshape(n, dg, cg, 1) * (h * w)
    gx_flat = np.zeros(n * c * h * w, dtype=gv.dtype)
    for idx, valid, wgt, *_ in corners:
        contrib = (gv * (wgt * valid)[:, :, None]).reshape(n, dg, cg, -1)
        lin = np.broadcast_to(plane + idx.reshape(n, dg, 1, -1), contrib.shape)
        if gx_flat.dtype == np.float64:
            gx_flat += np.bincount(lin.ravel(), weights=contrib.ravel(), minlength=gx_flat.size)
        else:
            np.add.at(gx_flat, lin.ravel(), contrib.ravel())
    return gx_flat.reshape(n, c, h, w), goff.reshape(n, 2 * dg * kk, h, w), gmask
