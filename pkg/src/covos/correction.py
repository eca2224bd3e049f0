"""Residual-guided detection and repair of mispropagated labels."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np
from scipy import ndimage

from . import kernels
from .sidecar import ResidualPlanes
from .warp import DimensionMismatch

LUMA_WEIGHTS = (0.299, 0.587, 0.114)


class NoResidual(ValueError):
    pass


class NoKeyframeAvailable(LookupError):
    pass


@dataclass(frozen=True)
class CorrectionConfig:
    tau: float = 0.15 * 255
    dilation_radius: int = 2
    search_window: Optional[int] = None

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if self.dilation_radius < 0:
            raise ValueError("dilation_radius must be >= 0")
        if self.search_window is not None and self.search_window < 0:
            raise ValueError("search_window must be >= 0")


def greyscale(residual: ResidualPlanes) -> np.ndarray:
    r, g, b = (p.astype(np.float64) for p in residual.planes)
    return LUMA_WEIGHTS[0] * r + LUMA_WEIGHTS[1] * g + LUMA_WEIGHTS[2] * b


def residual_gate(residual: Optional[ResidualPlanes], config: CorrectionConfig = CorrectionConfig()) -> np.ndarray:
    if residual is None:
        raise NoResidual("frame carries no residual")
    return np.abs(greyscale(residual)) > config.tau


def block_any(mask: np.ndarray, factor: int) -> np.ndarray:
    """Downsample a binary mask: a cell is set if any of its pixels is."""
    if factor == 1:
        return np.asarray(mask, dtype=bool)
    H, W = mask.shape
    return np.asarray(mask, dtype=bool).reshape(H // factor, factor, W // factor, factor).any(axis=(1, 3))


def foreground_mask(p: np.ndarray) -> np.ndarray:
    return np.argmax(p, axis=-1) > 0


def dilate(mask: np.ndarray, radius: int) -> np.ndarray:
    m = np.asarray(mask, dtype=bool)
    if radius < 0:
        raise ValueError("radius must be >= 0")
    if radius == 0:
        return m.copy()
    return ndimage.maximum_filter(m, size=2 * radius + 1, mode="constant", cval=False)


def correction_sites(e_b: np.ndarray, s_plus: np.ndarray) -> np.ndarray:
    if np.shape(e_b) != np.shape(s_plus):
        raise DimensionMismatch(f"masks {np.shape(e_b)} and {np.shape(s_plus)} differ")
    return np.logical_and(e_b, s_plus)


def nearest_keyframe(n: int, processed_keyframes: Iterable[int]) -> int:
    keys = list(processed_keyframes)
    if not keys:
        raise NoKeyframeAvailable(f"no processed keyframe for frame {n}")
    # ties go to the earlier (past) keyframe
    return min(keys, key=lambda k: (abs(k - n), k))


def feature_match_correct(sites: np.ndarray, p_key: np.ndarray, v_n: np.ndarray, v_key: np.ndarray,
                          config: CorrectionConfig = CorrectionConfig(), backend=None) -> np.ndarray:
    """Relabel site pixels by soft feature matching against a keyframe.

    For every site pixel ``a`` the keyframe pixels ``b`` are weighted by
    ``exp(-|v_n[a] - v_key[b]|^2)``, normalized to sum to one, and the result is
    the weighted sum of ``p_key``. Non-site pixels are zero. The exponent is
    shifted by its minimum distance so far-away features cannot underflow the
    whole row.
    """
    sites = np.asarray(sites, dtype=bool)
    p_key = np.ascontiguousarray(p_key, dtype=np.float64)
    v_n = np.ascontiguousarray(v_n, dtype=np.float64)
    v_key = np.ascontiguousarray(v_key, dtype=np.float64)
    H, W = sites.shape
    if p_key.shape[:2] != (H, W) or v_n.shape[:2] != (H, W) or v_key.shape != v_n.shape:
        raise DimensionMismatch(
            f"sites {sites.shape}, p_key {p_key.shape}, v_n {v_n.shape}, v_key {v_key.shape}")
    out = np.zeros_like(p_key)
    ys, xs = np.nonzero(sites)
    if len(ys) == 0:
        return out
    window = -1 if config.search_window is None else int(config.search_window)
    impl = backend or kernels.active
    vals = impl.feature_match(ys.astype(np.int64), xs.astype(np.int64), v_n, v_key, p_key, window)
    out[ys, xs] = vals
    return out
