"""CVSC v1 container: compressed-motion metadata for a decoded video.

Layout (little-endian)::

    header   magic "CVSC" | version u16 | reserved u16 | width u32 | height u32 | frame_count u32
    frame    display_index u32 | frame_type u8 | residual_present u8 | pu_count u32
             pu_count x PU (27 bytes)
             [3 x H*W i16 residual planes, order R, G, B]
    PU       x u16 | y u16 | w u16 | h u16 | direction u8
             | fwd{du i16, dv i16, ref u32, weight u8} | bwd{...}

Frame records are stored in decode order; a frame's decode rank is its
1-based position in the file.
"""
from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

MAGIC = b"CVSC"
VERSION = 1

_HEADER = struct.Struct("<4sHHIII")
_FRAME = struct.Struct("<IBBI")
_PU = struct.Struct("<HHHHB hhIB hhIB")
assert _PU.size == 27

PU_SIZES = (4, 8, 16, 32, 64)
MIN_PU_AREA = 32


class FrameType(enum.IntEnum):
    INTRA = 0
    PRED = 1
    BIPRED = 2

    @property
    def letter(self) -> str:
        return "IPB"[self.value]


class Direction(enum.IntEnum):
    FWD = 1
    BWD = 2
    BI = 3


class SidecarError(Exception):
    """Base class for container parse failures."""

    def __init__(self, message: str, offset: Optional[int] = None):
        self.offset = offset
        super().__init__(message)


class BadMagic(SidecarError):
    pass


class UnsupportedVersion(SidecarError):
    pass


class Truncated(SidecarError):
    pass


class TrailingData(SidecarError):
    pass


class InvariantViolation(SidecarError):
    def __init__(self, violation: "Violation", offset: Optional[int] = None):
        self.violation = violation
        msg = str(violation)
        if offset is not None:
            msg = f"{msg} (record at offset {offset})"
        super().__init__(msg, offset)


@dataclass(frozen=True)
class MotionVector:
    """One motion vector. ``du``/``dv`` are quarter-pel, ``weight_q`` is weight*255."""

    du: int
    dv: int
    ref_display: int
    weight_q: int = 255

    @property
    def weight(self) -> float:
        return self.weight_q / 255.0


@dataclass(frozen=True)
class PredictionUnit:
    x: int
    y: int
    w: int
    h: int
    direction: Direction
    fwd: Optional[MotionVector] = None
    bwd: Optional[MotionVector] = None

    def vectors(self) -> Iterable[MotionVector]:
        if self.fwd is not None:
            yield self.fwd
        if self.bwd is not None:
            yield self.bwd


class ResidualPlanes:
    """Signed 16-bit residual, shape (3, H, W) in R, G, B order."""

    __slots__ = ("planes",)

    def __init__(self, planes):
        arr = np.asarray(planes)
        if arr.ndim != 3 or arr.shape[0] != 3:
            raise ValueError(f"residual must have shape (3, H, W), got {arr.shape}")
        self.planes = np.ascontiguousarray(arr, dtype=np.int16)
        self.planes.setflags(write=False)

    @classmethod
    def from_hwc(cls, arr) -> "ResidualPlanes":
        return cls(np.moveaxis(np.asarray(arr), -1, 0))

    @property
    def shape(self) -> tuple[int, int]:
        return self.planes.shape[1], self.planes.shape[2]

    def to_hwc(self) -> np.ndarray:
        return np.moveaxis(self.planes, 0, -1)

    def __eq__(self, other) -> bool:
        if not isinstance(other, ResidualPlanes):
            return NotImplemented
        return np.array_equal(self.planes, other.planes)

    def __repr__(self) -> str:
        h, w = self.shape
        return f"ResidualPlanes({h}x{w})"


@dataclass(frozen=True)
class FrameRecord:
    display_index: int
    decode_rank: int
    frame_type: FrameType
    pus: tuple[PredictionUnit, ...] = ()
    residual: Optional[ResidualPlanes] = None

    @property
    def is_intra(self) -> bool:
        return self.frame_type == FrameType.INTRA

    def references(self) -> set[int]:
        return {mv.ref_display for pu in self.pus for mv in pu.vectors()}


@dataclass(frozen=True)
class SidecarStream:
    """Parsed stream. ``frames`` is held in decode order."""

    width: int
    height: int
    frames: tuple[FrameRecord, ...]
    _by_display: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "frames", tuple(self.frames))
        object.__setattr__(self, "_by_display", {f.display_index: f for f in self.frames})

    def __len__(self) -> int:
        return len(self.frames)

    def frame(self, display_index: int) -> FrameRecord:
        return self._by_display[display_index]

    def has_frame(self, display_index: int) -> bool:
        return display_index in self._by_display

    def display_order(self) -> list[FrameRecord]:
        return sorted(self.frames, key=lambda f: f.display_index)


@dataclass(frozen=True)
class Violation:
    rule: str
    frame: Optional[int] = None
    pu: Optional[int] = None
    detail: str = ""

    def __str__(self) -> str:
        where = []
        if self.frame is not None:
            where.append(f"frame {self.frame}")
        if self.pu is not None:
            where.append(f"PU {self.pu}")
        loc = f" [{', '.join(where)}]" if where else ""
        return f"{self.rule}{loc}: {self.detail}" if self.detail else f"{self.rule}{loc}"


# ---------------------------------------------------------------------------
# validation


def _validate_pu(pu: PredictionUnit, frame: FrameRecord, j: int, width: int, height: int) -> list[Violation]:
    out = []
    d = frame.display_index

    def v(rule, detail):
        out.append(Violation(rule, d, j, detail))

    if pu.w not in PU_SIZES or pu.h not in PU_SIZES or pu.w * pu.h < MIN_PU_AREA:
        v("BadPUSize", f"{pu.w}x{pu.h}")
    if pu.x < 0 or pu.y < 0 or pu.x + pu.w > width or pu.y + pu.h > height:
        v("PUOutOfBounds", f"({pu.x},{pu.y}) {pu.w}x{pu.h} outside {width}x{height}")
    want_fwd = pu.direction in (Direction.FWD, Direction.BI)
    want_bwd = pu.direction in (Direction.BWD, Direction.BI)
    if want_fwd != (pu.fwd is not None) or want_bwd != (pu.bwd is not None):
        v("DirectionFields", f"direction {pu.direction.name} does not match present vectors")
    for mv in pu.vectors():
        if not 0 <= mv.weight_q <= 255:
            v("WeightRange", f"weight {mv.weight_q}/255")
    if pu.fwd is not None and pu.fwd.ref_display >= d:
        v("RefDirection", f"forward reference {pu.fwd.ref_display} is not before {d}")
    if pu.bwd is not None and pu.bwd.ref_display <= d:
        v("RefDirection", f"backward reference {pu.bwd.ref_display} is not after {d}")
    if pu.direction == Direction.BI and pu.fwd is not None and pu.bwd is not None:
        if abs(pu.fwd.weight_q + pu.bwd.weight_q - 255) > 1:
            v("BIWeightSum", f"weights {pu.fwd.weight_q}+{pu.bwd.weight_q} != 255")
    if frame.frame_type == FrameType.PRED and pu.direction != Direction.FWD:
        v("PFrameDirection", f"P-frame PU has direction {pu.direction.name}")
    return out


def _tiling_violations(frame: FrameRecord, width: int, height: int) -> list[Violation]:
    cover = np.zeros((height, width), dtype=np.int32)
    for pu in frame.pus:
        x0, y0 = max(pu.x, 0), max(pu.y, 0)
        cover[y0 : pu.y + pu.h, x0 : pu.x + pu.w] += 1
    out = []
    gaps = np.argwhere(cover == 0)
    if len(gaps):
        y, x = gaps[0]
        out.append(Violation("TilingGap", frame.display_index, None,
                             f"{len(gaps)} uncovered pixels, first at ({x},{y})"))
    overlaps = np.argwhere(cover > 1)
    if len(overlaps):
        y, x = overlaps[0]
        out.append(Violation("TilingOverlap", frame.display_index, None,
                             f"{len(overlaps)} multiply covered pixels, first at ({x},{y})"))
    return out


def validate_frame(frame: FrameRecord, stream: SidecarStream) -> list[Violation]:
    out: list[Violation] = []
    d = frame.display_index
    W, H = stream.width, stream.height
    if frame.frame_type == FrameType.INTRA:
        if frame.pus:
            out.append(Violation("IntraHasPUs", d, None, f"{len(frame.pus)} PUs"))
        if frame.residual is not None:
            out.append(Violation("IntraHasResidual", d))
        return out
    if frame.residual is not None and frame.residual.shape != (H, W):
        out.append(Violation("ResidualShape", d, None, f"{frame.residual.shape} != {(H, W)}"))
    for j, pu in enumerate(frame.pus):
        out.extend(_validate_pu(pu, frame, j, W, H))
        for mv in pu.vectors():
            if not stream.has_frame(mv.ref_display):
                out.append(Violation("MissingRefFrame", d, j, f"reference {mv.ref_display} not in stream"))
            elif stream.frame(mv.ref_display).decode_rank >= frame.decode_rank:
                ref = stream.frame(mv.ref_display)
                out.append(Violation("DecodeOrderViolation", d, j,
                                     f"reference {mv.ref_display} has decode rank {ref.decode_rank} "
                                     f">= {frame.decode_rank}"))
    out.extend(_tiling_violations(frame, W, H))
    return out


def validate_stream(stream: SidecarStream) -> list[Violation]:
    """Return every invariant violation in ``stream``; an empty list means valid."""
    out: list[Violation] = []
    T = len(stream.frames)
    if stream.width <= 0 or stream.height <= 0:
        out.append(Violation("Dimensions", None, None, f"{stream.width}x{stream.height}"))
    displays = sorted(f.display_index for f in stream.frames)
    if displays != list(range(1, T + 1)):
        out.append(Violation("DisplayCoverage", None, None, "display indices must cover 1..T exactly once"))
    ranks = sorted(f.decode_rank for f in stream.frames)
    if ranks != list(range(1, T + 1)):
        out.append(Violation("DecodeRankPermutation", None, None, "decode ranks must be a permutation of 1..T"))
    if T == 0:
        out.append(Violation("NoIntra", None, None, "empty stream"))
        return out
    if not any(f.frame_type == FrameType.INTRA for f in stream.frames):
        out.append(Violation("NoIntra", None, None, "no INTRA frame"))
    first = min(stream.frames, key=lambda f: f.decode_rank)
    if first.frame_type != FrameType.INTRA:
        out.append(Violation("FirstNotIntra", first.display_index, None, "first decoded frame is not INTRA"))
    for f in stream.frames:
        out.extend(validate_frame(f, stream))
    return out


def decode_order(stream: SidecarStream) -> list[int]:
    return [f.display_index for f in sorted(stream.frames, key=lambda f: f.decode_rank)]


# ---------------------------------------------------------------------------
# serialization


def _pack_mv(mv: Optional[MotionVector]) -> tuple:
    if mv is None:
        return (0, 0, 0, 0)
    return (mv.du, mv.dv, mv.ref_display, mv.weight_q)


def write_sidecar(stream: SidecarStream) -> bytes:
    problems = validate_stream(stream)
    if problems:
        raise InvariantViolation(problems[0])
    ordered = sorted(stream.frames, key=lambda f: f.decode_rank)
    parts = [_HEADER.pack(MAGIC, VERSION, 0, stream.width, stream.height, len(ordered))]
    for f in ordered:
        parts.append(_FRAME.pack(f.display_index, int(f.frame_type),
                                 1 if f.residual is not None else 0, len(f.pus)))
        for pu in f.pus:
            parts.append(_PU.pack(pu.x, pu.y, pu.w, pu.h, int(pu.direction),
                                  *_pack_mv(pu.fwd), *_pack_mv(pu.bwd)))
        if f.residual is not None:
            parts.append(f.residual.planes.astype("<i2", copy=False).tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, data: bytes):
        self.data = memoryview(data)
        self.pos = 0

    def take(self, n: int, what: str) -> memoryview:
        if self.pos + n > len(self.data):
            raise Truncated(f"Truncated at offset {self.pos}: need {n} bytes for {what}, "
                            f"{len(self.data) - self.pos} left", self.pos)
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, st: struct.Struct, what: str) -> tuple:
        return st.unpack(self.take(st.size, what))


def parse_sidecar(data: bytes, strict: bool = True) -> SidecarStream:
    """Parse CVSC bytes.

    Structural problems (bad enum codes, nonzero absent-vector fields, short
    or trailing data) always raise. With ``strict`` the semantic invariants
    are checked as well; ``strict=False`` returns the stream for
    :func:`validate_stream` to report on.
    """
    r = _Reader(bytes(data))
    magic, version, reserved, width, height, count = r.unpack(_HEADER, "header")
    if magic != MAGIC:
        raise BadMagic(f"bad magic {bytes(magic)!r} at offset 0", 0)
    if version != VERSION:
        raise UnsupportedVersion(f"unsupported version {version} at offset 4", 4)
    if reserved != 0:
        raise InvariantViolation(Violation("ReservedNonZero", None, None, f"reserved field is {reserved}"), 6)

    frames = []
    offsets = {}
    for rank in range(1, count + 1):
        start = r.pos
        display, ftype, has_res, npu = r.unpack(_FRAME, f"frame record {rank}")
        if ftype > 2:
            raise InvariantViolation(Violation("FrameTypeCode", display, None, f"code {ftype}"), start)
        if has_res > 1:
            raise InvariantViolation(Violation("ResidualFlag", display, None, f"value {has_res}"), start)
        pus = []
        for j in range(npu):
            pu_off = r.pos
            x, y, w, h, direction, *rest = r.unpack(_PU, f"PU {j} of frame {display}")
            if direction not in (1, 2, 3):
                raise InvariantViolation(Violation("DirectionCode", display, j, f"code {direction}"), pu_off)
            fwd_raw, bwd_raw = tuple(rest[:4]), tuple(rest[4:])
            d = Direction(direction)
            has_fwd = d in (Direction.FWD, Direction.BI)
            has_bwd = d in (Direction.BWD, Direction.BI)
            if (not has_fwd and any(fwd_raw)) or (not has_bwd and any(bwd_raw)):
                raise InvariantViolation(
                    Violation("AbsentVectorNonZero", display, j, "absent side must be zero-filled"), pu_off)
            pus.append(PredictionUnit(
                x, y, w, h, d,
                MotionVector(*fwd_raw) if has_fwd else None,
                MotionVector(*bwd_raw) if has_bwd else None,
            ))
        residual = None
        if has_res:
            n = 3 * width * height * 2
            buf = r.take(n, f"residual of frame {display}")
            planes = np.frombuffer(buf, dtype="<i2").reshape(3, height, width)
            residual = ResidualPlanes(planes)
        offsets[display] = start
        frames.append(FrameRecord(display, rank, FrameType(ftype), tuple(pus), residual))
    if r.pos != len(r.data):
        raise TrailingData(f"{len(r.data) - r.pos} trailing bytes at offset {r.pos}", r.pos)

    stream = SidecarStream(width, height, tuple(frames))
    if strict:
        problems = validate_stream(stream)
        if problems:
            first = problems[0]
            raise InvariantViolation(first, offsets.get(first.frame))
    return stream


def read_sidecar(path, strict: bool = True) -> SidecarStream:
    with open(path, "rb") as fh:
        return parse_sidecar(fh.read(), strict=strict)


def write_sidecar_file(stream: SidecarStream, path) -> None:
    data = write_sidecar(stream)
    with open(path, "wb") as fh:
        fh.write(data)


def keyframe_ratio(stream: SidecarStream) -> float:
    if not stream.frames:
        return 0.0
    keys = sum(1 for f in stream.frames if f.frame_type in (FrameType.INTRA, FrameType.PRED))
    return keys / len(stream.frames)


def reference_dag(stream: SidecarStream) -> dict[int, set[int]]:
    """Map each display index to the display indices its PUs reference."""
    return {f.display_index: f.references() for f in stream.frames}


def frames_by_type(stream: SidecarStream, types: Sequence[FrameType]) -> list[int]:
    return sorted(f.display_index for f in stream.frames if f.frame_type in types)
