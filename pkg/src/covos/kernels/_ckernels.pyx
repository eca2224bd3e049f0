# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops for reverse-mapping warps and feature matching."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, floor

cnp.import_array()


cdef inline Py_ssize_t _floordiv(Py_ssize_t n, Py_ssize_t s) nogil:
    if n >= 0:
        return n // s
    return -((-n + s - 1) // s)


cdef inline Py_ssize_t _clampi(Py_ssize_t v, Py_ssize_t hi) nogil:
    if v < 0:
        return 0
    if v > hi:
        return hi
    return v


cdef inline double _clampd(double v, double hi) nogil:
    if v < 0.0:
        return 0.0
    if v > hi:
        return hi
    return v


cdef inline void _sample_nearest(const double[:, :, :, ::1] refs, Py_ssize_t slot,
                                 Py_ssize_t x, Py_ssize_t y, int du, int dv, int subpel,
                                 double scale, Py_ssize_t H, Py_ssize_t W,
                                 Py_ssize_t C, double[:, :, ::1] dst, bint add) nogil:
    cdef Py_ssize_t half = subpel // 2
    cdef Py_ssize_t ix = _clampi(_floordiv(subpel * x + du + half, subpel), W - 1)
    cdef Py_ssize_t iy = _clampi(_floordiv(subpel * y + dv + half, subpel), H - 1)
    cdef Py_ssize_t c
    if add:
        for c in range(C):
            dst[y, x, c] = dst[y, x, c] + scale * refs[slot, iy, ix, c]
    else:
        for c in range(C):
            dst[y, x, c] = scale * refs[slot, iy, ix, c]


cdef inline void _sample_bilinear(const double[:, :, :, ::1] refs, Py_ssize_t slot,
                                  Py_ssize_t x, Py_ssize_t y, int du, int dv, int subpel,
                                  double scale, Py_ssize_t H, Py_ssize_t W,
                                  Py_ssize_t C, double[:, :, ::1] dst, bint add) nogil:
    cdef double cx = _clampd(<double>x + <double>du / subpel, <double>(W - 1))
    cdef double cy = _clampd(<double>y + <double>dv / subpel, <double>(H - 1))
    cdef Py_ssize_t x0 = <Py_ssize_t>floor(cx)
    cdef Py_ssize_t y0 = <Py_ssize_t>floor(cy)
    cdef Py_ssize_t x1 = x0 + 1 if x0 + 1 < W else W - 1
    cdef Py_ssize_t y1 = y0 + 1 if y0 + 1 < H else H - 1
    cdef double fx = cx - x0
    cdef double fy = cy - y0
    cdef double top, bot, v
    cdef Py_ssize_t c
    for c in range(C):
        top = (1.0 - fx) * refs[slot, y0, x0, c] + fx * refs[slot, y0, x1, c]
        bot = (1.0 - fx) * refs[slot, y1, x0, c] + fx * refs[slot, y1, x1, c]
        v = (1.0 - fy) * top + fy * bot
        if add:
            dst[y, x, c] = dst[y, x, c] + scale * v
        else:
            dst[y, x, c] = scale * v


def warp(const double[:, :, :, ::1] refs,
         const cnp.int32_t[:, ::1] fwd_slot, const cnp.int32_t[:, ::1] fwd_du,
         const cnp.int32_t[:, ::1] fwd_dv,
         const cnp.int32_t[:, ::1] bwd_slot, const cnp.int32_t[:, ::1] bwd_du,
         const cnp.int32_t[:, ::1] bwd_dv,
         int subpel, bint bilinear):
    """Reverse-map ``refs`` through a motion field given as slot/displacement planes.

    A slot of -1 marks an absent direction. BI pixels average both samples 1/2, 1/2.
    """
    cdef Py_ssize_t H = fwd_slot.shape[0]
    cdef Py_ssize_t W = fwd_slot.shape[1]
    cdef Py_ssize_t C = refs.shape[3]
    out_arr = np.zeros((H, W, C), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t x, y
    cdef int fs, bs
    cdef double scale
    with nogil:
        for y in range(H):
            for x in range(W):
                fs = fwd_slot[y, x]
                bs = bwd_slot[y, x]
                if fs >= 0 and bs >= 0:
                    scale = 0.5
                else:
                    scale = 1.0
                if bilinear:
                    if bs >= 0:
                        _sample_bilinear(refs, bs, x, y, bwd_du[y, x], bwd_dv[y, x], subpel,
                                         scale, H, W, C, out, False)
                    if fs >= 0:
                        _sample_bilinear(refs, fs, x, y, fwd_du[y, x], fwd_dv[y, x], subpel,
                                         scale, H, W, C, out, bs >= 0)
                else:
                    if bs >= 0:
                        _sample_nearest(refs, bs, x, y, bwd_du[y, x], bwd_dv[y, x], subpel,
                                        scale, H, W, C, out, False)
                    if fs >= 0:
                        _sample_nearest(refs, fs, x, y, fwd_du[y, x], fwd_dv[y, x], subpel,
                                        scale, H, W, C, out, bs >= 0)
    return out_arr


def feature_match(const cnp.int64_t[::1] site_y, const cnp.int64_t[::1] site_x,
                  const double[:, :, ::1] v_n, const double[:, :, ::1] v_k,
                  const double[:, :, ::1] p_k, Py_ssize_t window):
    """Softmax(-||v_n[a] - v_k[b]||^2) weighted sum of ``p_k`` for each site ``a``.

    ``window < 0`` searches the whole keyframe; otherwise ``b`` is restricted to
    a (2*window+1)^2 square around ``a``.
    """
    cdef Py_ssize_t S = site_y.shape[0]
    cdef Py_ssize_t H = v_k.shape[0]
    cdef Py_ssize_t W = v_k.shape[1]
    cdef Py_ssize_t C = v_k.shape[2]
    cdef Py_ssize_t K = p_k.shape[2]
    out_arr = np.zeros((S, K), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef double[::1] d2 = np.empty(H * W, dtype=np.float64)
    cdef Py_ssize_t s, ay, ax, by, bx, y0, y1, x0, x1, c, k, idx
    cdef double dist, diff, best, wgt, total
    with nogil:
        for s in range(S):
            ay = site_y[s]
            ax = site_x[s]
            if window < 0:
                y0 = 0
                y1 = H
                x0 = 0
                x1 = W
            else:
                y0 = ay - window if ay - window > 0 else 0
                y1 = ay + window + 1 if ay + window + 1 < H else H
                x0 = ax - window if ax - window > 0 else 0
                x1 = ax + window + 1 if ax + window + 1 < W else W
            best = 1e300
            for by in range(y0, y1):
                for bx in range(x0, x1):
                    dist = 0.0
                    for c in range(C):
                        diff = v_n[ay, ax, c] - v_k[by, bx, c]
                        dist = dist + diff * diff
                    d2[by * W + bx] = dist
                    if dist < best:
                        best = dist
            total = 0.0
            for by in range(y0, y1):
                for bx in range(x0, x1):
                    idx = by * W + bx
                    wgt = exp(-(d2[idx] - best))
                    total = total + wgt
                    for k in range(K):
                        out[s, k] = out[s, k] + wgt * p_k[by, bx, k]
            for k in range(K):
                out[s, k] = out[s, k] / total
    return out_arr
