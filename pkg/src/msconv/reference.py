"""Straight-line loop implementation of every forward, used as an oracle.

Works on plain ``numpy`` arrays and a flat ``name -> array`` parameter dict.
Nothing here is shared with the tape-based path: convolutions are explicit
nested loops, sampling and resizing are per-pixel scalar code.  It is slow
and meant for tiny shapes only.
"""
from __future__ import annotations

import math

import numpy as np


def conv2d(x, w, b=None, stride=1, pad=None, groups=1):
    n, cin, h, wd = x.shape
    cout, cig, k, _ = w.shape
    if pad is None:
        pad = (k - 1) // 2
    ho = (h + 2 * pad - k) // stride + 1
    wo = (wd + 2 * pad - k) // stride + 1
    og = cout // groups
    out = np.zeros((n, cout, ho, wo))
    for bi in range(n):
        for co in range(cout):
            g = co // og
            for oy in range(ho):
                for ox in range(wo):
                    acc = 0.0
                    for ci in range(cig):
                        for i in range(k):
                            y = oy * stride - pad + i
                            if y < 0 or y >= h:
                                continue
                            for j in range(k):
                                xx = ox * stride - pad + j
                                if 0 <= xx < wd:
                                    acc += w[co, ci, i, j] * x[bi, g * cig + ci, y, xx]
                    out[bi, co, oy, ox] = acc + (b[co] if b is not None else 0.0)
    return out


def sample(img, y, x):
    """Bilinear read with zeros outside the image."""
    h, w = img.shape
    if y <= -1 or y >= h or x <= -1 or x >= w:
        return 0.0
    y0, x0 = math.floor(y), math.floor(x)
    total = 0.0
    for yy in (y0, y0 + 1):
        for xx in (x0, x0 + 1):
            if 0 <= yy < h and 0 <= xx < w:
                total += (1 - abs(y - yy)) * (1 - abs(x - xx)) * img[yy, xx]
    return total


def deform_conv2d(x, offsets, mask, w, b=None, groups=1, deform_groups=1):
    n, cin, h, wd = x.shape
    cout, cig, k, _ = w.shape
    pad = (k - 1) // 2
    og = cout // groups
    per_dg = cin // deform_groups
    out = np.zeros((n, cout, h, wd))
    for bi in range(n):
        for co in range(cout):
            g = co // og
            for oy in range(h):
                for ox in range(wd):
                    acc = 0.0
                    for ci in range(cig):
                        c = g * cig + ci
                        d = c // per_dg
                        for i in range(k):
                            for j in range(k):
                                t = i * k + j
                                dy = offsets[bi, 2 * (d * k * k + t), oy, ox]
                                dx = offsets[bi, 2 * (d * k * k + t) + 1, oy, ox]
                                m = mask[bi, d * k * k + t, oy, ox]
                                v = sample(x[bi, c], oy - pad + i + dy, ox - pad + j + dx)
                                acc += w[co, ci, i, j] * m * v
                    out[bi, co, oy, ox] = acc + (b[co] if b is not None else 0.0)
    return out


def local_avg_pool(x, k=3):
    n, c, h, w = x.shape
    r = k // 2
    out = np.zeros_like(x)
    for bi in range(n):
        for ch in range(c):
            for y in range(h):
                for xx in range(w):
                    vals = [x[bi, ch, yy, xk]
                            for yy in range(max(0, y - r), min(h, y + r + 1))
                            for xk in range(max(0, xx - r), min(w, xx + r + 1))]
                    out[bi, ch, y, xx] = sum(vals) / len(vals)
    return out


def global_avg_pool(x):
    n, c, h, w = x.shape
    out = np.zeros((n, c, 1, 1))
    for bi in range(n):
        for ch in range(c):
            out[bi, ch, 0, 0] = sum(x[bi, ch].ravel()) / (h * w)
    return out


def sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


def _resize_line(line, n_out, up):
    n_in = len(line)
    if n_out == n_in:
        return list(line)
    res = []
    for i in range(n_out):
        if n_out > n_in:
            if up == "nearest":
                res.append(line[min(int(math.floor((i + 0.5) * n_in / n_out)), n_in - 1)])
                continue
            s = min(max((i + 0.5) * n_in / n_out - 0.5, 0.0), n_in - 1)
            i0 = int(math.floor(s))
            i1 = min(i0 + 1, n_in - 1)
            f = s - i0
            res.append((1 - f) * line[i0] + f * line[i1])
        else:
            lo = (i * n_in) // n_out
            hi = math.ceil((i + 1) * n_in / n_out)
            res.append(max(line[lo:hi]))
    return res


def resize(x, target, up="bilinear"):
    n, c, h, w = x.shape
    th, tw = target
    tmp = np.zeros((n, c, th, w))
    for bi in range(n):
        for ch in range(c):
            for col in range(w):
                tmp[bi, ch, :, col] = _resize_line(x[bi, ch, :, col], th, up)
    out = np.zeros((n, c, th, tw))
    for bi in range(n):
        for ch in range(c):
            for row in range(th):
                out[bi, ch, row, :] = _resize_line(tmp[bi, ch, row, :], tw, up)
    return out


def _get(P, name):
    return P[name + ".kernel"], P.get(name + ".bias")


def msconv(xs, P, cfg, prefix=""):
    """One block; ``cfg`` is a dict with L, C_r, l_gl, k, resize_up, use_sa, use_ca."""
    L = cfg["L"]
    k = cfg.get("k", 1)
    up = cfg.get("resize_up", "bilinear")
    gl = cfg.get("l_gl", 1) - 1
    D = []
    for l in range(L):
        w, b = _get(P, f"{prefix}reduce.{l}")
        D.append(conv2d(xs[l], w, b))
    target = D[gl].shape[2:]
    phi = np.concatenate([resize(d, target, up) for d in D], axis=1)
    ys = []
    for l in range(L):
        q = resize(phi, xs[l].shape[2:], up)
        if cfg.get("use_sa", True):
            w, b = _get(P, f"{prefix}offset_gen")
            raw = conv2d(xs[l], w, b)
            nk = L * k * k
            offs, mask = raw[:, :2 * nk], sigmoid(raw[:, 2 * nk:3 * nk])
            w, b = _get(P, f"{prefix}deform")
            a = deform_conv2d(q, offs, mask, w, b, groups=L, deform_groups=L)
        else:
            a = q
        w, b = _get(P, f"{prefix}merge")
        m = conv2d(a, w, b)
        if cfg.get("use_ca", True):
            wl, bl = _get(P, f"{prefix}ca_local")
            wg, bg = _get(P, f"{prefix}ca_global")
            ws, bs = _get(P, f"{prefix}ca_out")
            loc = conv2d(local_avg_pool(m), wl, bl)
            glo = conv2d(global_avg_pool(m), wg, bg)
            s = sigmoid(conv2d(loc + glo, ws, bs))
            o = m * s
        else:
            o = m
        w, b = _get(P, f"{prefix}out")
        ys.append(conv2d(o + xs[l], w, b))
    return ys


def _branch(x, P, names, pred, relu=True):
    for name in names:
        w, b = _get(P, name)
        x = conv2d(x, w, b)
        if relu:
            x = np.maximum(x, 0.0)
    w, b = _get(P, pred)
    return conv2d(x, w, b)


def baseline_head(xs, P, cfg):
    d = cfg.get("stack_depth", 4)
    cls = [_branch(x, P, [f"cls_convs.{i}" for i in range(d)], "cls_pred") for x in xs]
    reg = [_branch(x, P, [f"reg_convs.{i}" for i in range(d)], "reg_pred") for x in xs]
    return cls, reg


def msconv_head(xs, P, cfg):
    feats = list(xs)
    for j in range(cfg.get("msconv_depth", 4)):
        feats = msconv(feats, P, cfg, prefix=f"blocks.{j}.")
    act = cfg.get("branch_relu", True)
    cls = [_branch(f, P, ["cls_extra"], "cls_pred", act) for f in feats]
    reg = [_branch(f, P, ["reg_extra"], "reg_pred", act) for f in feats]
    return cls, reg


def run(kind, cfg, P, xs) -> dict:
    """Named outputs in the same convention as :mod:`msconv.runner`."""
    if kind == "msconv":
        return {f"y_{l + 1}": y for l, y in enumerate(msconv(xs, P, cfg))}
    cls, reg = (baseline_head if kind == "baseline_head" else msconv_head)(xs, P, cfg)
    out = {}
    for l in range(len(xs)):
        out[f"cls_{l + 1}"] = cls[l]
        out[f"reg_{l + 1}"] = reg[l]
    return out
