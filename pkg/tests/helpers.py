"""Hand-packed CVSC bytes that bypass write-time validation."""
import struct

import numpy as np

HEADER = struct.Struct("<4sHHIII")
FRAME = struct.Struct("<IBBI")
PU = struct.Struct("<HHHHBhhIBhhIB")


def pack_stream(width, height, frames):
    """``frames``: list in file order of (display, type, pus, residual) where each PU is
    (x, y, w, h, direction, fwd_tuple, bwd_tuple) with vectors as (du, dv, ref, weight)."""
    out = [HEADER.pack(b"CVSC", 1, 0, width, height, len(frames))]
    for display, ftype, pus, residual in frames:
        out.append(FRAME.pack(display, ftype, 0 if residual is None else 1, len(pus)))
        for x, y, w, h, d, f, b in pus:
            out.append(PU.pack(x, y, w, h, d, *(f or (0, 0, 0, 0)), *(b or (0, 0, 0, 0))))
        if residual is not None:
            out.append(np.asarray(residual, dtype="<i2").tobytes())
    return b"".join(out)


def bad_decode_order_bytes(size=16):
    """I(1), then B(2) referencing 1 and 3, then P(3): the B-frame is decoded before its future reference."""
    res = np.zeros((3, size, size))
    full = lambda d, f, b: [(0, 0, size, size, d, f, b)]
    return pack_stream(size, size, [
        (1, 0, [], None),
        (2, 2, full(3, (0, 0, 1, 128), (0, 0, 3, 127)), res),
        (3, 1, full(1, (0, 0, 1, 255), None), res),
    ])
