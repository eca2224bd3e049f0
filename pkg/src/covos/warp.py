"""Reverse-mapping warps of maps and frames through a motion field."""
from __future__ import annotations

import enum
from typing import Mapping, Optional

import numpy as np
from scipy.special import expit

from . import kernels
from .motion import MotionField
from .sidecar import ResidualPlanes


class InterpKernel(enum.Enum):
    NEAREST = "nearest"
    BILINEAR = "bilinear"


class MissingReference(KeyError):
    def __init__(self, display_index: int):
        self.display_index = display_index
        super().__init__(f"reference frame {display_index} is not available")

    def __str__(self) -> str:
        return self.args[0]


class DimensionMismatch(ValueError):
    pass


def _as_hwc(arr) -> np.ndarray:
    a = np.asarray(arr, dtype=np.float64)
    if a.ndim == 2:
        a = a[..., None]
    if a.ndim != 3:
        raise DimensionMismatch(f"expected HxW or HxWxC map, got shape {a.shape}")
    return a


def _slots(field: MotionField, refs: Mapping[int, np.ndarray]):
    """Stack the referenced maps and translate reference planes into stack slots."""
    needed = sorted(field.references())
    for r in needed:
        if r not in refs:
            raise MissingReference(r)
    H, W = field.shape
    maps = [_as_hwc(refs[r]) for r in needed]
    if not maps:
        return np.zeros((1, H, W, 1)), np.full((H, W), -1, np.int32), np.full((H, W), -1, np.int32)
    C = maps[0].shape[2]
    for r, m in zip(needed, maps):
        if m.shape != (H, W, C):
            raise DimensionMismatch(f"reference {r} has shape {m.shape}, field needs {(H, W, C)}")
    stack = np.ascontiguousarray(np.stack(maps))
    lut = {r: i for i, r in enumerate(needed)}

    def slot_plane(valid, ref):
        out = np.full((H, W), -1, dtype=np.int32)
        for r, i in lut.items():
            out[valid & (ref == r)] = i
        return out

    return stack, slot_plane(field.fwd_valid, field.fwd_ref), slot_plane(field.bwd_valid, field.bwd_ref)


def warp_map(field: MotionField, refs: Mapping[int, np.ndarray],
             kernel: InterpKernel = InterpKernel.NEAREST, backend=None) -> np.ndarray:
    """Pull each pixel's value from its reference map(s) at pixel + displacement.

    Uni-directional pixels copy their single sample; bi-directional pixels take
    the plain average of the two samples. Coordinates outside the reference are
    clamped to its border. Returns float64 with the channel layout of the refs
    (a 2-D ref gives a 2-D result).
    """
    squeeze = any(np.ndim(refs[r]) == 2 for r in field.references() if r in refs)
    stack, fslot, bslot = _slots(field, refs)
    impl = backend or kernels.active
    out = impl.warp(
        stack,
        fslot, np.ascontiguousarray(field.fwd_du, np.int32), np.ascontiguousarray(field.fwd_dv, np.int32),
        bslot, np.ascontiguousarray(field.bwd_du, np.int32), np.ascontiguousarray(field.bwd_dv, np.int32),
        int(field.subpel), kernel == InterpKernel.BILINEAR,
    )
    return out[..., 0] if squeeze else out


def _nearest_index(pos: np.ndarray, disp: np.ndarray, subpel: int, size: int) -> np.ndarray:
    return np.clip((subpel * pos + disp + subpel // 2) // subpel, 0, size - 1)


def predict_frame(field: MotionField, ref_images: Mapping[int, np.ndarray]) -> np.ndarray:
    """Motion-compensated prediction with codec weights, integer arithmetic.

    Samples are taken at the nearest integer position. Where both directions
    exist the prediction is ``(wf*F + wb*B + (wf+wb)//2) // (wf+wb)`` with the
    8-bit weights; uni-directional pixels copy their sample.
    """
    H, W = field.shape
    ys, xs = np.mgrid[0:H, 0:W]
    pred = np.zeros((H, W, 3), dtype=np.int64)
    samples = {}
    for side in ("fwd", "bwd"):
        valid = getattr(field, f"{side}_valid")
        ref = getattr(field, f"{side}_ref")
        ix = _nearest_index(xs, getattr(field, f"{side}_du"), field.subpel, W)
        iy = _nearest_index(ys, getattr(field, f"{side}_dv"), field.subpel, H)
        s = np.zeros((H, W, 3), dtype=np.int64)
        for r in np.unique(ref[valid]).tolist():
            if r not in ref_images:
                raise MissingReference(r)
            img = np.asarray(ref_images[r])
            if img.shape != (H, W, 3):
                raise DimensionMismatch(f"reference image {r} has shape {img.shape}")
            m = valid & (ref == r)
            s[m] = img[iy[m], ix[m]]
        samples[side] = s
    fv, bv = field.fwd_valid, field.bwd_valid
    both = fv & bv
    wf = field.fwd_weight.astype(np.int64)[..., None]
    wb = field.bwd_weight.astype(np.int64)[..., None]
    den = np.maximum(wf + wb, 1)
    mixed = (wf * samples["fwd"] + wb * samples["bwd"] + den // 2) // den
    pred[both] = mixed[both]
    pred[fv & ~bv] = samples["fwd"][fv & ~bv]
    pred[bv & ~fv] = samples["bwd"][bv & ~fv]
    return pred


def reconstruct_frame(field: MotionField, ref_images: Mapping[int, np.ndarray],
                      residual: Optional[ResidualPlanes]) -> np.ndarray:
    """Prediction plus residual, clamped to 0..255, as uint8 HxWx3."""
    pred = predict_frame(field, ref_images)
    if residual is not None:
        if residual.shape != field.shape:
            raise DimensionMismatch(f"residual {residual.shape} vs field {field.shape}")
        pred = pred + residual.to_hwc().astype(np.int64)
    return np.clip(pred, 0, 255).astype(np.uint8)


def _l2_normalize(v: np.ndarray) -> np.ndarray:
    norm = np.sqrt((v * v).sum(axis=-1, keepdims=True))
    return np.divide(v, norm, out=np.zeros_like(v), where=norm > 0)


def confidence(v: np.ndarray, v_hat: np.ndarray, normalize: bool = True) -> np.ndarray:
    """Per-pixel sigmoid of the channel dot product between two feature maps.

    With ``normalize`` both feature vectors are scaled to unit length first,
    which keeps the sigmoid out of saturation for unscaled features. Zero
    vectors stay zero.
    """
    a = np.asarray(v, dtype=np.float64)
    b = np.asarray(v_hat, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 3:
        raise DimensionMismatch(f"feature maps {a.shape} and {b.shape} differ")
    if normalize:
        a, b = _l2_normalize(a), _l2_normalize(b)
    return expit((a * b).sum(axis=-1))


def apply_confidence(s: np.ndarray, p_hat: np.ndarray) -> np.ndarray:
    s = np.asarray(s, dtype=np.float64)
    p = np.asarray(p_hat, dtype=np.float64)
    if s.shape != p.shape[:2]:
        raise DimensionMismatch(f"confidence {s.shape} vs map {p.shape}")
    return p * s[..., None]


def mv_to_flow(field: MotionField, fps: float) -> np.ndarray:
    """Forward motion as a per-unit-time flow, as used by flow-based baselines.

    Each forward vector is divided by its temporal distance ``(ref - i) * fps``;
    backward vectors are ignored and pixels without forward motion get zero.
    """
    H, W = field.shape
    flow = np.zeros((H, W, 2), dtype=np.float64)
    v = field.fwd_valid
    dt = (field.fwd_ref[v] - field.display_index).astype(np.float64) * fps
    flow[v, 0] = field.fwd_du[v] / field.subpel / dt
    flow[v, 1] = field.fwd_dv[v] / field.subpel / dt
    return flow
