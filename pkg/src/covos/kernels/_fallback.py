"""Vectorized numpy versions of the compiled kernels (same signatures, same results)."""
from __future__ import annotations

import numpy as np

# site chunk bound for the (sites x keyframe pixels x channels) difference tensor
_MATCH_BUDGET = 1 << 22


def _sample_nearest(refs, slot, du, dv, subpel, ys, xs):
    H, W = slot.shape
    half = subpel // 2
    ix = np.clip((subpel * xs + du + half) // subpel, 0, W - 1)
    iy = np.clip((subpel * ys + dv + half) // subpel, 0, H - 1)
    return refs[np.maximum(slot, 0), iy, ix]


def _sample_bilinear(refs, slot, du, dv, subpel, ys, xs):
    H, W = slot.shape
    cx = np.clip(xs + du / subpel, 0.0, W - 1.0)
    cy = np.clip(ys + dv / subpel, 0.0, H - 1.0)
    x0 = np.floor(cx).astype(np.intp)
    y0 = np.floor(cy).astype(np.intp)
    x1 = np.minimum(x0 + 1, W - 1)
    y1 = np.minimum(y0 + 1, H - 1)
    fx = (cx - x0)[..., None]
    fy = (cy - y0)[..., None]
    s = np.maximum(slot, 0)
    top = (1.0 - fx) * refs[s, y0, x0] + fx * refs[s, y0, x1]
    bot = (1.0 - fx) * refs[s, y1, x0] + fx * refs[s, y1, x1]
    return (1.0 - fy) * top + fy * bot


def warp(refs, fwd_slot, fwd_du, fwd_dv, bwd_slot, bwd_du, bwd_dv, subpel, bilinear):
    H, W = fwd_slot.shape
    ys, xs = np.mgrid[0:H, 0:W]
    sample = _sample_bilinear if bilinear else _sample_nearest
    f = sample(refs, fwd_slot, fwd_du, fwd_dv, subpel, ys, xs)
    b = sample(refs, bwd_slot, bwd_du, bwd_dv, subpel, ys, xs)
    has_f = (fwd_slot >= 0)[..., None]
    has_b = (bwd_slot >= 0)[..., None]
    out = np.where(has_f & has_b, 0.5 * b + 0.5 * f, 0.0)
    out = np.where(has_f & ~has_b, f, out)
    out = np.where(has_b & ~has_f, b, out)
    return np.ascontiguousarray(out, dtype=np.float64)


def feature_match(site_y, site_x, v_n, v_k, p_k, window):
    H, W, C = v_k.shape
    K = p_k.shape[2]
    S = len(site_y)
    out = np.zeros((S, K), dtype=np.float64)
    if S == 0:
        return out
    if window >= 0:
        for s in range(S):
            ay, ax = site_y[s], site_x[s]
            y0, y1 = max(ay - window, 0), min(ay + window + 1, H)
            x0, x1 = max(ax - window, 0), min(ax + window + 1, W)
            kv = v_k[y0:y1, x0:x1].reshape(-1, C)
            d2 = ((v_n[ay, ax] - kv) ** 2).sum(axis=1)
            w = np.exp(-(d2 - d2.min()))
            out[s] = w @ p_k[y0:y1, x0:x1].reshape(-1, K) / w.sum()
        return out
    kv = v_k.reshape(-1, C)
    kp = p_k.reshape(-1, K)
    step = max(1, _MATCH_BUDGET // max(1, H * W * C))
    for lo in range(0, S, step):
        q = v_n[site_y[lo : lo + step], site_x[lo : lo + step]]
        d2 = ((q[:, None, :] - kv[None, :, :]) ** 2).sum(axis=2)
        w = np.exp(-(d2 - d2.min(axis=1, keepdims=True)))
        out[lo : lo + step] = (w @ kp) / w.sum(axis=1, keepdims=True)
    return out
