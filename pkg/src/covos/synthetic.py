"""Procedural scenes encoded as exact compressed streams, plus brute-force oracles.

A scene is a static background with sprites moving along quarter-pel tracks.
The generator renders frames and label masks, assigns frame types from a GOP
template, chooses one motion vector per prediction unit from the sprites'
true displacements (splitting blocks until labels carry over exactly where
possible) and stores the residual ``I - prediction`` so that reconstruction
reproduces every frame bit for bit.

Scene files are line-oriented ``key = value`` text; ``#`` starts a comment.
Top-level keys::

    width, height          canvas size, multiples of 8
    length                 number of frames T
    background             "gradient" or "r,g,b"
    gop_template           e.g. "IBBP", "IBBPBBP" or "uniform-B:8"
    reference_policy       "nearest-keyframe" (default) or "hierarchical-B"
    textured               true/false, seeded noise texture on sprites

Each ``[sprite]`` block::

    id        object label 1..255
    shape     rectangle | ellipse
    size      w,h in pixels
    position  x,y top-left at frame 1, pixels
    velocity  du,dv quarter-pel per frame        (or)
    track     du,dv; du,dv; ...  quarter-pel offset from position, one per frame
    color     r,g,b

Noise files hold ``[corrupt]`` blocks with ``frame``, ``region = x,y,w,h`` and
``delta = du,dv`` (quarter-pel added to every vector of the PUs that overlap
the region).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from .motion import MotionField, build_motion_field
from .pnm import FRAME_NAME, MASK_NAME, write_pgm, write_ppm
from .sidecar import (Direction, FrameRecord, FrameType, MotionVector, PredictionUnit, ResidualPlanes,
                      SidecarStream, keyframe_ratio, write_sidecar)
from .warp import InterpKernel, MissingReference, predict_frame

POLICIES = ("nearest-keyframe", "hierarchical-B")
BI_WEIGHTS = (128, 127)


class SpecInvalid(ValueError):
    def __init__(self, key: str, message: str):
        self.key = key
        super().__init__(message)


class CycleDetected(RuntimeError):
    pass


@dataclass
class Sprite:
    object_id: int
    size: tuple[int, int]
    position: tuple[int, int]
    color: tuple[int, int, int] = (220, 60, 60)
    shape: str = "rectangle"
    velocity: tuple[int, int] = (0, 0)
    track: Optional[list[tuple[int, int]]] = None

    def offset_qpel(self, t: int) -> tuple[int, int]:
        """Quarter-pel offset from the start position at display index ``t``."""
        if self.track is not None:
            return self.track[t - 1]
        return self.velocity[0] * (t - 1), self.velocity[1] * (t - 1)

    def position_qpel(self, t: int) -> tuple[int, int]:
        du, dv = self.offset_qpel(t)
        return 4 * self.position[0] + du, 4 * self.position[1] + dv

    def pixel_position(self, t: int) -> tuple[int, int]:
        qx, qy = self.position_qpel(t)
        return (qx + 2) // 4, (qy + 2) // 4


@dataclass
class SceneSpec:
    width: int = 64
    height: int = 64
    length: int = 20
    background: object = "gradient"
    gop_template: str = "IBBP"
    reference_policy: str = "nearest-keyframe"
    textured: bool = True
    sprites: list[Sprite] = field(default_factory=list)

    def validate(self) -> None:
        if self.width <= 0 or self.height <= 0 or self.width % 8 or self.height % 8:
            raise SpecInvalid("width", "width and height must be positive multiples of 8")
        if self.length < 1:
            raise SpecInvalid("length", "length must be >= 1")
        frame_types(self.gop_template, 1)
        if self.reference_policy not in POLICIES:
            raise SpecInvalid("reference_policy", f"reference_policy must be one of {', '.join(POLICIES)}")
        if not (isinstance(self.background, str) and self.background == "gradient"):
            if len(tuple(self.background)) != 3:
                raise SpecInvalid("background", "background must be 'gradient' or r,g,b")
        ids = [s.object_id for s in self.sprites]
        if len(set(ids)) != len(ids):
            raise SpecInvalid("id", "sprite ids must be unique")
        for s in self.sprites:
            if not 1 <= s.object_id <= 255:
                raise SpecInvalid("id", "sprite id must be in 1..255")
            if s.shape not in ("rectangle", "ellipse"):
                raise SpecInvalid("shape", "shape must be rectangle or ellipse")
            if s.size[0] <= 0 or s.size[1] <= 0:
                raise SpecInvalid("size", "sprite size must be positive")
            if s.track is not None and len(s.track) != self.length:
                raise SpecInvalid("track", f"track needs {self.length} entries")


@dataclass(frozen=True)
class Corruption:
    frame: int
    region: tuple[int, int, int, int]
    delta: tuple[int, int]


@dataclass
class NoiseSpec:
    corruptions: list[Corruption] = field(default_factory=list)


# ---------------------------------------------------------------------------
# text config


def _blocks(text: str, source: str):
    """Split config text into (section, {key: (value, line)}) blocks."""
    blocks = [(None, {})]
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            blocks.append((line[1:-1].strip(), {}))
            continue
        if "=" not in line:
            raise SpecInvalid(line, f"{source}:{n}: expected 'key = value'")
        key, value = (p.strip() for p in line.split("=", 1))
        blocks[-1][1][key] = (value, n)
    return blocks


def _ints(key: str, value: str, count: Optional[int] = None) -> tuple[int, ...]:
    try:
        vals = tuple(int(v) for v in value.split(","))
    except ValueError:
        raise SpecInvalid(key, f"{key} must be comma-separated integers, got {value!r}") from None
    if count is not None and len(vals) != count:
        raise SpecInvalid(key, f"{key} needs {count} values, got {len(vals)}")
    return vals


def _bool(key: str, value: str) -> bool:
    v = value.lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise SpecInvalid(key, f"{key} must be true or false")


_SCENE_KEYS = {"width", "height", "length", "background", "gop_template", "reference_policy", "textured"}
_SPRITE_KEYS = {"id", "shape", "size", "position", "velocity", "track", "color"}


def parse_scene(text: str, source: str = "<scene>") -> SceneSpec:
    blocks = _blocks(text, source)
    spec = SceneSpec()
    for key, (value, _) in blocks[0][1].items():
        if key not in _SCENE_KEYS:
            raise SpecInvalid(key, f"unknown key {key!r}")
        if key in ("width", "height", "length"):
            setattr(spec, key, _ints(key, value, 1)[0])
        elif key == "background":
            spec.background = "gradient" if value == "gradient" else _ints(key, value, 3)
        elif key == "textured":
            spec.textured = _bool(key, value)
        else:
            setattr(spec, key, value)
    for section, kv in blocks[1:]:
        if section != "sprite":
            raise SpecInvalid(section, f"unknown section [{section}]")
        for key in kv:
            if key not in _SPRITE_KEYS:
                raise SpecInvalid(key, f"unknown sprite key {key!r}")
        for key in ("id", "size", "position"):
            if key not in kv:
                raise SpecInvalid(key, f"sprite is missing {key!r}")
        track = None
        if "track" in kv:
            track = [_ints("track", part, 2) for part in kv["track"][0].split(";") if part.strip()]
        spec.sprites.append(Sprite(
            object_id=_ints("id", kv["id"][0], 1)[0],
            size=_ints("size", kv["size"][0], 2),
            position=_ints("position", kv["position"][0], 2),
            color=_ints("color", kv["color"][0], 3) if "color" in kv else (220, 60, 60),
            shape=kv["shape"][0] if "shape" in kv else "rectangle",
            velocity=_ints("velocity", kv["velocity"][0], 2) if "velocity" in kv else (0, 0),
            track=track,
        ))
    spec.validate()
    return spec


def parse_noise(text: str, source: str = "<noise>") -> NoiseSpec:
    blocks = _blocks(text, source)
    if blocks[0][1]:
        raise SpecInvalid(next(iter(blocks[0][1])), "noise keys must sit inside [corrupt] blocks")
    out = NoiseSpec()
    for section, kv in blocks[1:]:
        if section != "corrupt":
            raise SpecInvalid(section, f"unknown section [{section}]")
        for key in ("frame", "region", "delta"):
            if key not in kv:
                raise SpecInvalid(key, f"corrupt block is missing {key!r}")
        out.corruptions.append(Corruption(
            frame=_ints("frame", kv["frame"][0], 1)[0],
            region=_ints("region", kv["region"][0], 4),
            delta=_ints("delta", kv["delta"][0], 2),
        ))
    return out


def load_scene(path) -> SceneSpec:
    return parse_scene(Path(path).read_text(), str(path))


def load_noise(path) -> NoiseSpec:
    return parse_noise(Path(path).read_text(), str(path))


def demo_scene_path() -> Path:
    return Path(__file__).parent / "data" / "demo.scene"


def demo_noise_path() -> Path:
    return Path(__file__).parent / "data" / "demo.noise"


# ---------------------------------------------------------------------------
# GOP structure


def frame_types(template: str, length: int) -> list[FrameType]:
    """Frame types for display indices 1..length.

    The template's leading I opens the sequence and the rest repeats. A
    trailing run of B-frames with no later anchor ends on a P-frame.
    """
    t = template.strip()
    if t.startswith("uniform-B:"):
        try:
            n = int(t.split(":", 1)[1])
        except ValueError:
            raise SpecInvalid("gop_template", "uniform-B needs an integer count") from None
        if n < 0:
            raise SpecInvalid("gop_template", "uniform-B count must be >= 0")
        t = "I" + "B" * n + "P"
    if not t or set(t) - set("IPB"):
        raise SpecInvalid("gop_template", "gop_template must use only I, P and B")
    if t[0] != "I":
        raise SpecInvalid("gop_template", "gop_template must start with I")
    letters = {"I": FrameType.INTRA, "P": FrameType.PRED, "B": FrameType.BIPRED}
    body = t[1:] or "I"
    out = [FrameType.INTRA] + [letters[body[(k - 2) % len(body)]] for k in range(2, length + 1)]
    if out[-1] == FrameType.BIPRED:
        out[-1] = FrameType.PRED
    return out


def _hierarchy(lo: int, hi: int, out: list):
    """Mid-first order of the B-frames strictly between lo and hi, with their references."""
    if hi - lo < 2:
        return
    mid = (lo + hi) // 2
    out.append((mid, lo, hi))
    _hierarchy(lo, mid, out)
    _hierarchy(mid, hi, out)


def gop_plan(types: Sequence[FrameType], policy: str = "nearest-keyframe"):
    """Decode order and references.

    Returns ``(order, refs)`` where ``order`` lists display indices in decode
    order and ``refs[i]`` is ``(past, future)`` (either may be None).
    """
    T = len(types)
    anchors = [i for i in range(1, T + 1) if types[i - 1] != FrameType.BIPRED]
    order = [anchors[0]]
    refs = {anchors[0]: (None, None)}
    for a, b in zip(anchors, anchors[1:]):
        order.append(b)
        refs[b] = (a, None) if types[b - 1] == FrameType.PRED else (None, None)
        if policy == "hierarchical-B":
            plan = []
            _hierarchy(a, b, plan)
            for mid, lo, hi in plan:
                order.append(mid)
                refs[mid] = (lo, hi)
        else:
            for i in range(a + 1, b):
                order.append(i)
                refs[i] = (a, b)
    return order, refs


# ---------------------------------------------------------------------------
# rendering


def _background(spec: SceneSpec) -> np.ndarray:
    H, W = spec.height, spec.width
    if isinstance(spec.background, str):
        ys, xs = np.mgrid[0:H, 0:W]
        img = np.empty((H, W, 3), dtype=np.int32)
        img[..., 0] = 40 + (120 * xs) // max(W - 1, 1)
        img[..., 1] = 40 + (120 * ys) // max(H - 1, 1)
        img[..., 2] = 90
        return img
    return np.broadcast_to(np.asarray(spec.background, dtype=np.int32), (H, W, 3)).copy()


def _sprite_patch(s: Sprite, textured: bool, seed: int):
    w, h = s.size
    if s.shape == "ellipse":
        ys, xs = np.mgrid[0:h, 0:w]
        cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
        inside = ((xs - cx) / (w / 2.0)) ** 2 + ((ys - cy) / (h / 2.0)) ** 2 <= 1.0
    else:
        inside = np.ones((h, w), dtype=bool)
    rgb = np.broadcast_to(np.asarray(s.color, dtype=np.int32), (h, w, 3)).copy()
    if textured:
        rng = np.random.default_rng([seed, s.object_id])
        rgb += rng.integers(-24, 25, size=(h, w, 3))
    return np.clip(rgb, 0, 255), inside


def render(spec: SceneSpec, seed: int = 0):
    """Frames (uint8 HxWx3) and label masks (uint8 HxW) for display indices 1..T."""
    bg = _background(spec)
    patches = [_sprite_patch(s, spec.textured, seed) for s in spec.sprites]
    frames, masks = {}, {}
    H, W = spec.height, spec.width
    for t in range(1, spec.length + 1):
        img = bg.copy()
        lab = np.zeros((H, W), dtype=np.uint8)
        for s, (rgb, inside) in zip(spec.sprites, patches):
            px, py = s.pixel_position(t)
            w, h = s.size
            x0, y0 = max(px, 0), max(py, 0)
            x1, y1 = min(px + w, W), min(py + h, H)
            if x0 >= x1 or y0 >= y1:
                continue
            sub = inside[y0 - py : y1 - py, x0 - px : x1 - px]
            img[y0:y1, x0:x1][sub] = rgb[y0 - py : y1 - py, x0 - px : x1 - px][sub]
            lab[y0:y1, x0:x1][sub] = s.object_id
        frames[t] = img.astype(np.uint8)
        masks[t] = lab
    return frames, masks


# ---------------------------------------------------------------------------
# motion selection


class _Matcher:
    """Scores candidate vectors for blocks of frame ``n`` against reference ``r``."""

    def __init__(self, spec, frames, masks, n, r):
        self.img_n = frames[n].astype(np.int32)
        self.lab_n = masks[n]
        self.img_r = frames[r].astype(np.int32)
        self.lab_r = masks[r]
        self.H, self.W = self.lab_n.shape
        cands = [(0, 0)]
        for s in spec.sprites:
            (nx, ny), (rx, ry) = s.position_qpel(n), s.position_qpel(r)
            (pnx, pny), (prx, pry) = s.pixel_position(n), s.pixel_position(r)
            for c in ((rx - nx, ry - ny), (4 * (prx - pnx), 4 * (pry - pny))):
                if c not in cands:
                    cands.append(c)
        self.candidates = cands

    def cost(self, x, y, w, h, du, dv):
        ys, xs = np.mgrid[y : y + h, x : x + w]
        ix = np.clip((4 * xs + du + 2) // 4, 0, self.W - 1)
        iy = np.clip((4 * ys + dv + 2) // 4, 0, self.H - 1)
        mism = int(np.count_nonzero(self.lab_r[iy, ix] != self.lab_n[y : y + h, x : x + w]))
        sad = int(np.abs(self.img_r[iy, ix] - self.img_n[y : y + h, x : x + w]).sum())
        return mism, sad

    def best(self, x, y, w, h):
        scored = [(self.cost(x, y, w, h, du, dv), k) for k, (du, dv) in enumerate(self.candidates)]
        (cost, k) = min(scored)
        return cost, self.candidates[k]


def _choose_block(matchers, x, y, w, h):
    total = [0, 0]
    vecs = []
    for m in matchers:
        (mism, sad), vec = m.best(x, y, w, h)
        total[0] += mism
        total[1] += sad
        vecs.append(vec)
    return tuple(total), vecs


def _partition(matchers, x, y, w, h, out):
    """Quadtree split until each block's labels carry over exactly (down to 8x4/4x8)."""
    cost, vecs = _choose_block(matchers, x, y, w, h)
    if cost == (0, 0) or (w == 8 and h == 8 and cost[0] == 0):
        out.append((x, y, w, h, vecs))
        return
    if w > 8:
        half = w // 2
        for dy in (0, half):
            for dx in (0, half):
                _partition(matchers, x + dx, y + dy, half, half, out)
        return
    # 8x8 with a label mismatch: try the two rectangular splits
    options = [(cost, [(x, y, w, h, vecs)])]
    for parts in (((x, y, 8, 4), (x, y + 4, 8, 4)), ((x, y, 4, 8), (x + 4, y, 4, 8))):
        tot = [0, 0]
        leaves = []
        for px, py, pw, ph in parts:
            c, v = _choose_block(matchers, px, py, pw, ph)
            tot[0] += c[0]
            tot[1] += c[1]
            leaves.append((px, py, pw, ph, v))
        options.append((tuple(tot), leaves))
    best = min(options, key=lambda o: o[0])
    out.extend(best[1])


def _ctu_size(width: int, height: int) -> int:
    for s in (64, 32, 16, 8):
        if width % s == 0 and height % s == 0:
            return s
    raise SpecInvalid("width", "width and height must be multiples of 8")


def _build_pus(spec, frames, masks, n, past, future) -> list[PredictionUnit]:
    refs = [r for r in (past, future) if r is not None]
    matchers = [_Matcher(spec, frames, masks, n, r) for r in refs]
    ctu = _ctu_size(spec.width, spec.height)
    leaves = []
    for y in range(0, spec.height, ctu):
        for x in range(0, spec.width, ctu):
            _partition(matchers, x, y, ctu, ctu, leaves)
    pus = []
    for x, y, w, h, vecs in leaves:
        if past is not None and future is not None:
            (fu, fv), (bu, bv) = vecs
            pus.append(PredictionUnit(x, y, w, h, Direction.BI,
                                      MotionVector(fu, fv, past, BI_WEIGHTS[0]),
                                      MotionVector(bu, bv, future, BI_WEIGHTS[1])))
        elif past is not None:
            (fu, fv), = vecs
            pus.append(PredictionUnit(x, y, w, h, Direction.FWD, MotionVector(fu, fv, past, 255)))
        else:
            (bu, bv), = vecs
            pus.append(PredictionUnit(x, y, w, h, Direction.BWD, None, MotionVector(bu, bv, future, 255)))
    return pus


def _overlaps(pu: PredictionUnit, region) -> bool:
    x, y, w, h = region
    return pu.x < x + w and x < pu.x + pu.w and pu.y < y + h and y < pu.y + pu.h


def _corrupt(pus: list[PredictionUnit], corruptions: Sequence[Corruption]) -> list[PredictionUnit]:
    out = []
    for pu in pus:
        du = dv = 0
        for c in corruptions:
            if _overlaps(pu, c.region):
                du += c.delta[0]
                dv += c.delta[1]
        if du or dv:
            def bump(mv):
                if mv is None:
                    return None
                return MotionVector(mv.du + du, mv.dv + dv, mv.ref_display, mv.weight_q)
            pu = PredictionUnit(pu.x, pu.y, pu.w, pu.h, pu.direction, bump(pu.fwd), bump(pu.bwd))
        out.append(pu)
    return out


@dataclass
class SyntheticSequence:
    spec: SceneSpec
    seed: int
    frames: dict
    masks: dict
    stream: SidecarStream

    @property
    def sidecar(self) -> bytes:
        return write_sidecar(self.stream)

    @property
    def keyframe_ratio(self) -> float:
        return keyframe_ratio(self.stream)

    def write(self, out_dir) -> None:
        out = Path(out_dir)
        (out / "frames").mkdir(parents=True, exist_ok=True)
        (out / "masks").mkdir(parents=True, exist_ok=True)
        for i, img in self.frames.items():
            write_ppm(out / "frames" / FRAME_NAME.format(i), img)
        for i, m in self.masks.items():
            write_pgm(out / "masks" / MASK_NAME.format(i), m)
        (out / "stream.cvsc").write_bytes(self.sidecar)
        types = "".join(self.stream.frame(i).frame_type.letter for i in range(1, len(self.stream) + 1))
        manifest = {
            "width": self.spec.width, "height": self.spec.height, "frames": len(self.stream),
            "seed": self.seed, "gop_template": self.spec.gop_template,
            "reference_policy": self.spec.reference_policy, "frame_types": types,
            "keyframe_ratio": f"{self.keyframe_ratio:.6f}",
            "objects": ",".join(str(s.object_id) for s in self.spec.sprites),
        }
        (out / "manifest.txt").write_text("".join(f"{k} = {v}\n" for k, v in manifest.items()))


def generate(spec: SceneSpec, noise: Optional[NoiseSpec] = None, seed: int = 0) -> SyntheticSequence:
    spec.validate()
    frames, masks = render(spec, seed)
    types = frame_types(spec.gop_template, spec.length)
    order, refs = gop_plan(types, spec.reference_policy)
    rank = {d: k for k, d in enumerate(order, 1)}
    corruptions = noise.corruptions if noise else []
    for c in corruptions:
        if not 1 <= c.frame <= spec.length:
            raise SpecInvalid("frame", f"corrupted frame {c.frame} outside 1..{spec.length}")

    records = []
    for d in order:
        ftype = types[d - 1]
        if ftype == FrameType.INTRA:
            records.append(FrameRecord(d, rank[d], ftype))
            continue
        past, future = refs[d]
        pus = _build_pus(spec, frames, masks, d, past, future)
        pus = _corrupt(pus, [c for c in corruptions if c.frame == d])
        partial = SidecarStream(spec.width, spec.height,
                                (FrameRecord(d, rank[d], ftype, tuple(pus)),))
        field_ = build_motion_field(partial.frames[0], partial)
        pred = predict_frame(field_, frames)
        residual = frames[d].astype(np.int64) - pred
        records.append(FrameRecord(d, rank[d], ftype, tuple(pus), ResidualPlanes.from_hwc(residual)))
    stream = SidecarStream(spec.width, spec.height, tuple(records))
    return SyntheticSequence(spec, seed, frames, masks, stream)


# ---------------------------------------------------------------------------
# oracles


def oracle_warp(field: MotionField, refs: Mapping[int, np.ndarray],
                kernel: InterpKernel = InterpKernel.NEAREST) -> np.ndarray:
    """Per-pixel loop over the warp definition; slow, for tests only."""
    H, W = field.shape
    s = field.subpel
    maps = {}
    for r in field.references():
        if r not in refs:
            raise MissingReference(r)
        a = np.asarray(refs[r], dtype=np.float64)
        maps[r] = a[..., None] if a.ndim == 2 else a
    C = next(iter(maps.values())).shape[2] if maps else 1
    out = np.zeros((H, W, C))

    def sample(ref, x, y, du, dv):
        m = maps[ref]
        if kernel == InterpKernel.NEAREST:
            ix = min(max((s * x + du + s // 2) // s, 0), W - 1)
            iy = min(max((s * y + dv + s // 2) // s, 0), H - 1)
            return m[iy, ix, :].copy()
        cx = min(max(x + du / s, 0.0), W - 1.0)
        cy = min(max(y + dv / s, 0.0), H - 1.0)
        x0, y0 = int(np.floor(cx)), int(np.floor(cy))
        x1, y1 = min(x0 + 1, W - 1), min(y0 + 1, H - 1)
        fx, fy = cx - x0, cy - y0
        val = np.empty(C)
        for c in range(C):
            top = (1.0 - fx) * m[y0, x0, c] + fx * m[y0, x1, c]
            bot = (1.0 - fx) * m[y1, x0, c] + fx * m[y1, x1, c]
            val[c] = (1.0 - fy) * top + fy * bot
        return val

    for y in range(H):
        for x in range(W):
            f = field.fwd_at(x, y)
            b = field.bwd_at(x, y)
            if f is None and b is not None:
                out[y, x] = sample(b[2], x, y, b[0], b[1])
            elif b is None and f is not None:
                out[y, x] = sample(f[2], x, y, f[0], f[1])
            elif f is not None and b is not None:
                out[y, x] = 0.5 * sample(b[2], x, y, b[0], b[1]) + 0.5 * sample(f[2], x, y, f[0], f[1])
    squeeze = any(np.ndim(refs[r]) == 2 for r in maps)
    return out[..., 0] if squeeze else out


def compose_displacements(stream: SidecarStream, target: int, prefer: str = "fwd"):
    """Follow each pixel's reference chain to a keyframe, summing whole-pixel hops.

    At every hop the ``prefer`` direction is taken when present, otherwise the
    other one; the landing pixel is the nearest integer position, clamped.
    Returns ``(dx, dy, keyframe, interior)`` planes; ``interior`` is False
    where any hop was clamped at the border.
    """
    H, W = stream.height, stream.width
    ys, xs = np.mgrid[0:H, 0:W]
    cx, cy = xs.copy(), ys.copy()
    cur = np.full((H, W), target, dtype=np.int64)
    interior = np.ones((H, W), dtype=bool)
    fields = {}
    for _ in range(len(stream.frames) + 1):
        active = np.zeros((H, W), dtype=bool)
        for d in np.unique(cur).tolist():
            f = stream.frame(d)
            if f.frame_type in (FrameType.INTRA, FrameType.PRED):
                continue
            if d not in fields:
                fields[d] = build_motion_field(f, stream)
            mf = fields[d]
            sel = cur == d
            py, px = cy[sel], cx[sel]
            first, second = ("fwd", "bwd") if prefer == "fwd" else ("bwd", "fwd")
            use_first = getattr(mf, f"{first}_valid")[py, px]
            pick = {}
            for name in ("du", "dv", "ref"):
                a = getattr(mf, f"{first}_{name}")[py, px]
                b = getattr(mf, f"{second}_{name}")[py, px]
                pick[name] = np.where(use_first, a, b)
            nx = (4 * px + pick["du"] + 2) // 4
            ny = (4 * py + pick["dv"] + 2) // 4
            clamped = (nx < 0) | (nx >= W) | (ny < 0) | (ny >= H)
            interior[sel] &= ~clamped
            cx[sel] = np.clip(nx, 0, W - 1)
            cy[sel] = np.clip(ny, 0, H - 1)
            cur[sel] = pick["ref"]
            active |= sel
        if not active.any():
            return cx - xs, cy - ys, cur, interior
    raise CycleDetected(f"reference chain from frame {target} does not reach a keyframe")


def random_stream(rng: np.random.Generator, width: int = 32, height: int = 32, length: int = 6,
                  residual: bool = True) -> SidecarStream:
    """Arbitrary structurally valid stream (not rendered from a scene) for format tests."""
    template = "I" + "".join(rng.choice(list("PBB"), size=max(length - 1, 1)))
    types = frame_types(template, length)
    policy = POLICIES[int(rng.integers(0, 2))]
    order, refs = gop_plan(types, policy)
    rank = {d: k for k, d in enumerate(order, 1)}
    records = []
    for d in order:
        ftype = types[d - 1]
        if ftype == FrameType.INTRA:
            records.append(FrameRecord(d, rank[d], ftype))
            continue
        past, future = refs[d]
        pus = []
        for x, y, w, h in _random_tiling(rng, width, height):
            mv = lambda ref, wq: MotionVector(int(rng.integers(-64, 65)), int(rng.integers(-64, 65)), ref, wq)
            if ftype == FrameType.PRED:
                pus.append(PredictionUnit(x, y, w, h, Direction.FWD, mv(past, int(rng.integers(0, 256)))))
                continue
            kind = int(rng.integers(0, 3))
            if kind == 0:
                wf = int(rng.integers(0, 256))
                pus.append(PredictionUnit(x, y, w, h, Direction.BI, mv(past, wf), mv(future, 255 - wf)))
            elif kind == 1:
                pus.append(PredictionUnit(x, y, w, h, Direction.FWD, mv(past, 255)))
            else:
                pus.append(PredictionUnit(x, y, w, h, Direction.BWD, None, mv(future, 255)))
        res = None
        if residual:
            res = ResidualPlanes(rng.integers(-300, 301, size=(3, height, width)))
        records.append(FrameRecord(d, rank[d], ftype, tuple(pus), res))
    return SidecarStream(width, height, tuple(records))


def _random_tiling(rng: np.random.Generator, width: int, height: int):
    out = []

    def split(x, y, w, h):
        if w == 8 and h == 8:
            r = int(rng.integers(0, 3))
            if r == 0:
                out.append((x, y, 8, 8))
            elif r == 1:
                out.extend([(x, y, 8, 4), (x, y + 4, 8, 4)])
            else:
                out.extend([(x, y, 4, 8), (x + 4, y, 4, 8)])
            return
        if rng.random() < 0.3:
            out.append((x, y, w, h))
            return
        half = w // 2
        for dy in (0, half):
            for dx in (0, half):
                split(x + dx, y + dy, half, half)

    ctu = _ctu_size(width, height)
    for y in range(0, height, ctu):
        for x in range(0, width, ctu):
            split(x, y, ctu, ctu)
    return out
