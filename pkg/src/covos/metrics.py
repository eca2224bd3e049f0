"""Region (Jaccard) and boundary (F) accuracy, with object-size strata."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np
from scipy import ndimage

from .warp import DimensionMismatch

SMALL_LIMIT = 10_000
LARGE_LIMIT = 30_000
BOUNDARY_TOLERANCE_FRACTION = 0.008

REPORT_KEYS = ("J_mean", "F_mean", "JF_mean", "J_small", "J_medium", "J_large",
               "F_small", "F_medium", "F_large", "frames", "objects")


class FrameSetMismatch(ValueError):
    pass


class SizeCategory(enum.Enum):
    SMALL = "small"
    MEDIUM = "medium"
    LARGE = "large"


def _pair(pred, gt):
    a = np.asarray(pred, dtype=bool)
    b = np.asarray(gt, dtype=bool)
    if a.shape != b.shape:
        raise DimensionMismatch(f"masks {a.shape} and {b.shape} differ")
    return a, b


def jaccard(pred: np.ndarray, gt: np.ndarray) -> float:
    a, b = _pair(pred, gt)
    union = np.count_nonzero(a | b)
    if union == 0:
        return 1.0
    return np.count_nonzero(a & b) / union


def boundary(mask: np.ndarray) -> np.ndarray:
    """Foreground pixels with a background 4-neighbour; outside the frame counts as background."""
    m = np.asarray(mask, dtype=bool)
    cross = ndimage.generate_binary_structure(2, 1)
    return m & ~ndimage.binary_erosion(m, structure=cross, border_value=0)


def disk(radius: int) -> np.ndarray:
    r = int(radius)
    yy, xx = np.mgrid[-r : r + 1, -r : r + 1]
    return xx * xx + yy * yy <= r * r


def default_tolerance(shape: tuple[int, int]) -> int:
    return int(math.ceil(BOUNDARY_TOLERANCE_FRACTION * math.hypot(*shape)))


def boundary_f(pred: np.ndarray, gt: np.ndarray, tolerance_px: Optional[int] = None) -> float:
    """Contour F-measure: boundary pixels match if within ``tolerance_px`` (Euclidean)."""
    a, b = _pair(pred, gt)
    tol = default_tolerance(a.shape) if tolerance_px is None else int(tolerance_px)
    pb, gb = boundary(a), boundary(b)
    n_p, n_g = np.count_nonzero(pb), np.count_nonzero(gb)
    if n_p == 0 and n_g == 0:
        return 1.0
    if n_p == 0 or n_g == 0:
        return 0.0
    fp = disk(tol)
    g_near = ndimage.binary_dilation(gb, structure=fp) if tol > 0 else gb
    p_near = ndimage.binary_dilation(pb, structure=fp) if tol > 0 else pb
    precision = np.count_nonzero(pb & g_near) / n_p
    recall = np.count_nonzero(gb & p_near) / n_g
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def size_category(gt: np.ndarray) -> SizeCategory:
    n = int(np.count_nonzero(gt))
    if n < SMALL_LIMIT:
        return SizeCategory.SMALL
    if n <= LARGE_LIMIT:
        return SizeCategory.MEDIUM
    return SizeCategory.LARGE


@dataclass
class EvalReport:
    """Per-object, per-frame scores and their summaries.

    Sequence means average each object's frame scores first, then average
    over objects. Size strata pool every (object, frame) score whose ground
    truth is non-empty by that frame's object area.
    """

    J: dict = field(default_factory=dict)  # object -> {frame: score}
    F: dict = field(default_factory=dict)
    sizes: dict = field(default_factory=dict)  # object -> {frame: SizeCategory}
    frames: int = 0

    @property
    def objects(self) -> list[int]:
        return sorted(self.J)

    @staticmethod
    def _mean_of_objects(table: dict) -> float:
        per_obj = [np.mean(list(v.values())) for v in table.values() if v]
        return float(np.mean(per_obj)) if per_obj else float("nan")

    @property
    def J_mean(self) -> float:
        return self._mean_of_objects(self.J)

    @property
    def F_mean(self) -> float:
        return self._mean_of_objects(self.F)

    @property
    def JF_mean(self) -> float:
        return (self.J_mean + self.F_mean) / 2

    def stratum_mean(self, table: dict, category: SizeCategory) -> float:
        vals = [table[o][f] for o in self.sizes for f, c in self.sizes[o].items() if c == category]
        return float(np.mean(vals)) if vals else float("nan")

    def summary(self) -> dict:
        out = {"J_mean": self.J_mean, "F_mean": self.F_mean, "JF_mean": self.JF_mean}
        for cat in SizeCategory:
            out[f"J_{cat.value}"] = self.stratum_mean(self.J, cat)
            out[f"F_{cat.value}"] = self.stratum_mean(self.F, cat)
        out["frames"] = self.frames
        out["objects"] = len(self.objects)
        return out

    def to_kv(self) -> str:
        s = self.summary()
        lines = []
        for k in REPORT_KEYS:
            v = s[k]
            lines.append(f"{k}={v}" if isinstance(v, int) else f"{k}={v:.6f}")
        return "\n".join(lines) + "\n"

    def to_table(self, by_size: bool = False) -> str:
        s = self.summary()
        rows = [f"{'object':>8} {'J':>8} {'F':>8} {'J&F':>8}"]
        for o in self.objects:
            j = float(np.mean(list(self.J[o].values())))
            f = float(np.mean(list(self.F[o].values())))
            rows.append(f"{o:>8} {j:8.4f} {f:8.4f} {(j + f) / 2:8.4f}")
        rows.append(f"{'mean':>8} {s['J_mean']:8.4f} {s['F_mean']:8.4f} {s['JF_mean']:8.4f}")
        if by_size:
            rows.append("")
            rows.append(f"{'size':>8} {'J':>8} {'F':>8}")
            for cat in SizeCategory:
                rows.append(f"{cat.value:>8} {s['J_' + cat.value]:8.4f} {s['F_' + cat.value]:8.4f}")
        return "\n".join(rows) + "\n"


def evaluate_sequence(preds: Mapping[int, np.ndarray], gts: Mapping[int, np.ndarray],
                      objects: Optional[Sequence[int]] = None,
                      tolerance_px: Optional[int] = None) -> EvalReport:
    """Score label masks frame by frame; ``objects`` defaults to every label seen in ``gts``."""
    if set(preds) != set(gts):
        missing = sorted(set(gts) - set(preds))
        extra = sorted(set(preds) - set(gts))
        raise FrameSetMismatch(f"frame sets differ: missing {missing}, unexpected {extra}")
    if objects is None:
        labels = set()
        for g in gts.values():
            labels.update(np.unique(g).tolist())
        objects = sorted(labels - {0})
    rep = EvalReport(frames=len(gts))
    for o in objects:
        rep.J[o], rep.F[o], rep.sizes[o] = {}, {}, {}
        for i in sorted(gts):
            p = np.asarray(preds[i]) == o
            g = np.asarray(gts[i]) == o
            rep.J[o][i] = jaccard(p, g)
            rep.F[o][i] = boundary_f(p, g, tolerance_px)
            if g.any():
                rep.sizes[o][i] = size_category(g)
    return rep
