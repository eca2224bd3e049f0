"""Handcrafted low-level appearance features used in place of a CNN encoder."""
from __future__ import annotations

import numpy as np

FEATURE_CHANNELS = ("R", "G", "B", "dxR", "dxG", "dxB", "dyLuma", "luma")


def box_downsample(arr: np.ndarray, factor: int) -> np.ndarray:
    """Mean over non-overlapping ``factor x factor`` cells (HxW or HxWxC)."""
    a = np.asarray(arr, dtype=np.float64)
    if factor == 1:
        return a
    H, W = a.shape[:2]
    if H % factor or W % factor:
        raise ValueError(f"{W}x{H} is not divisible by {factor}")
    return a.reshape(H // factor, factor, W // factor, factor, *a.shape[2:]).mean(axis=(1, 3))


def upsample_nearest(arr: np.ndarray, factor: int) -> np.ndarray:
    if factor == 1:
        return arr
    return np.repeat(np.repeat(arr, factor, axis=0), factor, axis=1)


class DefaultFeatureExtractor:
    """Eight channels per cell: RGB, |d/dx| of RGB, |d/dy| of luma, luma.

    Input is HxWx3 uint8; output is ``(H/factor, W/factor, 8)``. Intensities
    are divided by ``unit`` (16 grey levels per feature unit by default) so
    that squared feature distances separate distinct colours sharply.
    """

    channels = len(FEATURE_CHANNELS)

    def __init__(self, factor: int = 4, unit: float = 16.0):
        if factor < 1:
            raise ValueError("factor must be >= 1")
        self.factor = factor
        self.unit = unit

    def extract(self, image: np.ndarray) -> np.ndarray:
        rgb = box_downsample(np.asarray(image, dtype=np.float64), self.factor) / self.unit
        luma = rgb @ np.array([0.299, 0.587, 0.114])
        dx = np.abs(np.diff(rgb, axis=1, append=rgb[:, -1:, :]))
        dy = np.abs(np.diff(luma, axis=0, append=luma[-1:, :]))
        return np.concatenate([rgb, dx, dy[..., None], luma[..., None]], axis=2)
