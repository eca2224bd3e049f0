"""Frame and mask files: binary PPM (P6) frames, binary PGM (P5) label masks."""
from __future__ import annotations

import os
import re
from pathlib import Path

import numpy as np
from PIL import Image

FRAME_NAME = "frame_{:05d}.ppm"
MASK_NAME = "mask_{:05d}.pgm"

_FRAME_RE = re.compile(r"^frame_(\d{5})\.ppm$")
_MASK_RE = re.compile(r"^mask_(\d{5})\.pgm$")


def write_ppm(path, rgb: np.ndarray) -> None:
    arr = np.asarray(rgb)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"expected HxWx3 image, got {arr.shape}")
    Image.fromarray(arr.astype(np.uint8), "RGB").save(path, format="PPM")


def read_ppm(path) -> np.ndarray:
    with Image.open(path) as im:
        if im.format != "PPM" or im.mode != "RGB":
            raise ValueError(f"{path}: not a binary RGB PPM")
        return np.asarray(im, dtype=np.uint8).copy()


def write_pgm(path, mask: np.ndarray) -> None:
    arr = np.asarray(mask)
    if arr.ndim != 2:
        raise ValueError(f"expected HxW mask, got {arr.shape}")
    if arr.size and (arr.min() < 0 or arr.max() > 255):
        raise ValueError("mask labels must fit in 0..255")
    Image.fromarray(arr.astype(np.uint8), "L").save(path, format="PPM")


def read_pgm(path) -> np.ndarray:
    with Image.open(path) as im:
        if im.format != "PPM" or im.mode != "L":
            raise ValueError(f"{path}: not a binary greyscale PGM")
        return np.asarray(im, dtype=np.uint8).copy()


def _scan(directory, pattern) -> dict[int, Path]:
    out = {}
    for name in os.listdir(directory):
        m = pattern.match(name)
        if m:
            out[int(m.group(1))] = Path(directory) / name
    return out


def list_frames(directory) -> dict[int, Path]:
    return _scan(directory, _FRAME_RE)


def list_masks(directory) -> dict[int, Path]:
    return _scan(directory, _MASK_RE)


def read_masks(directory) -> dict[int, np.ndarray]:
    return {i: read_pgm(p) for i, p in sorted(list_masks(directory).items())}


class FrameDirectory:
    """Lazy display-index -> RGB provider over a directory of PPM frames."""

    def __init__(self, directory):
        self.directory = Path(directory)
        self._paths = list_frames(self.directory)

    def __contains__(self, index: int) -> bool:
        return index in self._paths

    def __getitem__(self, index: int) -> np.ndarray:
        try:
            return read_ppm(self._paths[index])
        except KeyError:
            raise KeyError(f"no frame {FRAME_NAME.format(index)} in {self.directory}") from None

    def indices(self) -> list[int]:
        return sorted(self._paths)
