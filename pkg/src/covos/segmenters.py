"""Base segmenters that need no neural network."""
from __future__ import annotations

import time
from pathlib import Path
from typing import Mapping, Optional

import numpy as np

from .pipeline import ORACLE_EPS, near_one_hot
from .pnm import read_masks

PROB_NAME = "prob_{:05d}.raw"


class MissingGroundTruth(KeyError):
    def __str__(self) -> str:
        return self.args[0]


class _Features:
    extractor = None

    def _features(self, image):
        # None lets the pipeline apply its own extractor
        return None if self.extractor is None else self.extractor.extract(image)


class OracleSegmenter(_Features):
    """Answers every keyframe query with its ground-truth mask.

    Probabilities are ``1 - eps`` on the true label with ``eps`` split over the
    other channels, so odds stay finite without clamping.
    """

    def __init__(self, masks: Mapping[int, np.ndarray], num_objects: Optional[int] = None,
                 extractor=None, eps: float = ORACLE_EPS):
        self.masks = dict(masks)
        if num_objects is None:
            num_objects = max((int(m.max(initial=0)) for m in self.masks.values()), default=0)
        self.num_objects = num_objects
        self.extractor = extractor
        self.eps = eps
        self.observed: list[int] = []

    @classmethod
    def from_directory(cls, directory, **kwargs) -> "OracleSegmenter":
        return cls(read_masks(directory), **kwargs)

    def segment(self, image: np.ndarray, display_index: int):
        try:
            mask = self.masks[display_index]
        except KeyError:
            raise MissingGroundTruth(f"no ground-truth mask for frame {display_index}") from None
        return near_one_hot(mask, self.num_objects + 1, self.eps), self._features(image)

    def observe(self, display_index: int, prob, features) -> None:
        self.observed.append(display_index)


class StubSegmenter(_Features):
    """Fixed-latency segmenter for timing runs.

    Sleeps ``latency_ms`` per call and returns either ``mask`` (a constant
    label image) or, if ``masks`` is given, the mask for that frame.
    """

    def __init__(self, latency_ms: float, num_objects: int = 1, mask: Optional[np.ndarray] = None,
                 masks: Optional[Mapping[int, np.ndarray]] = None, extractor=None):
        self.latency_ms = latency_ms
        self.num_objects = num_objects
        self.mask = mask
        self.masks = masks
        self.extractor = extractor
        self.calls = 0

    def segment(self, image: np.ndarray, display_index: int):
        self.calls += 1
        if self.latency_ms > 0:
            time.sleep(self.latency_ms / 1000.0)
        if self.masks is not None and display_index in self.masks:
            mask = self.masks[display_index]
        elif self.mask is not None:
            mask = self.mask
        else:
            mask = np.zeros(image.shape[:2], dtype=np.uint8)
        return near_one_hot(mask, self.num_objects + 1), self._features(image)


def write_prob_map(path, prob: np.ndarray) -> None:
    """Text header ``width height channels`` then float32 little-endian planes (C, H, W)."""
    p = np.asarray(prob, dtype=np.float64)
    H, W, C = p.shape
    with open(path, "wb") as fh:
        fh.write(f"{W} {H} {C}\n".encode("ascii"))
        fh.write(np.moveaxis(p, -1, 0).astype("<f4").tobytes())


def read_prob_map(path) -> np.ndarray:
    with open(path, "rb") as fh:
        header = fh.readline().decode("ascii").split()
        if len(header) != 3:
            raise ValueError(f"{path}: header must be 'width height channels'")
        W, H, C = (int(v) for v in header)
        data = fh.read()
    if len(data) != 4 * W * H * C:
        raise ValueError(f"{path}: expected {4 * W * H * C} bytes of float32 data, got {len(data)}")
    planes = np.frombuffer(data, dtype="<f4").reshape(C, H, W)
    return np.moveaxis(planes, 0, -1).astype(np.float64)


class PrecomputedSegmenter(_Features):
    """Serves keyframe probabilities produced offline by an external model."""

    def __init__(self, directory, extractor=None):
        self.directory = Path(directory)
        self.extractor = extractor

    def segment(self, image: np.ndarray, display_index: int):
        path = self.directory / PROB_NAME.format(display_index)
        if not path.exists():
            raise MissingGroundTruth(f"no precomputed probabilities {path.name}")
        return read_prob_map(path), self._features(image)
