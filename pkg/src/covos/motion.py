"""Dense per-pixel motion fields aggregated from prediction units."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .sidecar import Direction, FrameRecord, FrameType, SidecarStream


class NotAPredictedFrame(ValueError):
    pass


@dataclass(frozen=True)
class MotionField:
    """Bi-directional motion of one frame, stored as separate planes.

    Displacements are integers in units of ``1/subpel`` pixel: ``subpel`` is 4
    (quarter-pel) at full resolution. A ``*_valid`` plane marks where the
    direction is defined; the other planes are zero there otherwise.
    """

    display_index: int
    subpel: int
    fwd_valid: np.ndarray
    fwd_du: np.ndarray
    fwd_dv: np.ndarray
    fwd_ref: np.ndarray
    fwd_weight: np.ndarray
    bwd_valid: np.ndarray
    bwd_du: np.ndarray
    bwd_dv: np.ndarray
    bwd_ref: np.ndarray
    bwd_weight: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return self.fwd_valid.shape

    def references(self) -> set[int]:
        refs = set(np.unique(self.fwd_ref[self.fwd_valid]).tolist())
        refs |= set(np.unique(self.bwd_ref[self.bwd_valid]).tolist())
        return refs

    def fwd_at(self, x: int, y: int):
        if not self.fwd_valid[y, x]:
            return None
        return int(self.fwd_du[y, x]), int(self.fwd_dv[y, x]), int(self.fwd_ref[y, x])

    def bwd_at(self, x: int, y: int):
        if not self.bwd_valid[y, x]:
            return None
        return int(self.bwd_du[y, x]), int(self.bwd_dv[y, x]), int(self.bwd_ref[y, x])

    def downsample(self, factor: int) -> "MotionField":
        """Subsample to ``1/factor`` resolution, keeping displacements exact.

        Each low-resolution pixel takes the motion of the top-left pixel of
        its ``factor x factor`` cell; ``subpel`` grows by ``factor`` so the
        stored integers are unchanged.
        """
        if factor == 1:
            return self
        H, W = self.shape
        if H % factor or W % factor:
            raise ValueError(f"{W}x{H} field is not divisible by {factor}")
        sl = (slice(0, None, factor), slice(0, None, factor))
        return MotionField(
            self.display_index, self.subpel * factor,
            *(np.ascontiguousarray(getattr(self, name)[sl]) for name in _PLANES),
        )


_PLANES = ("fwd_valid", "fwd_du", "fwd_dv", "fwd_ref", "fwd_weight",
           "bwd_valid", "bwd_du", "bwd_dv", "bwd_ref", "bwd_weight")


def _empty_planes(height: int, width: int) -> dict:
    shape = (height, width)
    planes = {}
    for side in ("fwd", "bwd"):
        planes[f"{side}_valid"] = np.zeros(shape, dtype=bool)
        for name in ("du", "dv", "ref"):
            planes[f"{side}_{name}"] = np.zeros(shape, dtype=np.int32)
        planes[f"{side}_weight"] = np.zeros(shape, dtype=np.uint8)
    return planes


def build_motion_field(frame: FrameRecord, stream: SidecarStream) -> MotionField:
    if frame.frame_type == FrameType.INTRA:
        raise NotAPredictedFrame(f"frame {frame.display_index} is INTRA")
    p = _empty_planes(stream.height, stream.width)
    for pu in frame.pus:
        sl = (slice(pu.y, pu.y + pu.h), slice(pu.x, pu.x + pu.w))
        for side, mv in (("fwd", pu.fwd), ("bwd", pu.bwd)):
            if mv is None:
                continue
            p[f"{side}_valid"][sl] = True
            p[f"{side}_du"][sl] = mv.du
            p[f"{side}_dv"][sl] = mv.dv
            p[f"{side}_ref"][sl] = mv.ref_display
            # uni-directional PUs predict entirely from their one reference
            p[f"{side}_weight"][sl] = mv.weight_q if pu.direction == Direction.BI else 255
    for arr in p.values():
        arr.setflags(write=False)
    return MotionField(frame.display_index, 4, **p)
