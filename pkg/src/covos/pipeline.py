"""Keyframe segmentation plus motion-vector propagation over a decoded stream.

Frames are visited in decode order. I- and P-frames go to the base segmenter;
B-frames receive warped predictions from their (possibly non-key) references,
a feature-similarity confidence, an optional residual-guided correction, and a
decoder that fuses them.
"""
from __future__ import annotations

import logging
import time
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Optional, Protocol, runtime_checkable

import numpy as np

from .correction import (CorrectionConfig, block_any, correction_sites, dilate, feature_match_correct,
                         foreground_mask, nearest_keyframe, residual_gate)
from .features import DefaultFeatureExtractor, box_downsample, upsample_nearest
from .motion import build_motion_field
from .sidecar import FrameRecord, FrameType, SidecarStream, keyframe_ratio, validate_stream
from .warp import DimensionMismatch, InterpKernel, apply_confidence, confidence, warp_map

log = logging.getLogger(__name__)

AGGREGATE_EPS = 1e-5
ORACLE_EPS = 1e-3


class PipelineError(RuntimeError):
    def __init__(self, display_index: Optional[int], message: str):
        self.display_index = display_index
        prefix = f"frame {display_index}: " if display_index is not None else ""
        super().__init__(prefix + message)


class UnbufferedReference(PipelineError):
    pass


@runtime_checkable
class BaseSegmenter(Protocol):
    def segment(self, image: np.ndarray, display_index: int) -> tuple[np.ndarray, np.ndarray]:
        """Return full-resolution probabilities HxWx(O+1) and features.

        Features must be at the propagation resolution; ``None`` means the
        pipeline's own extractor is used.
        """


class FeatureExtractor(Protocol):
    def extract(self, image: np.ndarray) -> np.ndarray: ...


class MaskDecoder(Protocol):
    def decode(self, p_hat: np.ndarray, v: np.ndarray, weighted: np.ndarray,
               corrected: np.ndarray) -> np.ndarray: ...


def renormalize(p: np.ndarray) -> np.ndarray:
    p = np.clip(p, 0.0, None)
    total = p.sum(axis=-1, keepdims=True)
    out = np.divide(p, total, out=np.zeros_like(p), where=total > 0)
    # pixels with no mass at all fall back to background
    out[..., 0] = np.where(total[..., 0] > 0, out[..., 0], 1.0)
    return out


class ResidualFusionDecoder:
    """Deterministic stand-in for the learned decoder.

    The output is ``weighted + (corrected - p_hat)`` renormalized per pixel:
    the confidence-weighted propagation plus whatever the correction stage
    added on top of the plain warp. Away from correction sites this reduces to
    the warped prediction; at sites a confident match outweighs the wrongly
    warped label, since the confidence is strictly below one.
    """

    def decode(self, p_hat, v, weighted, corrected):
        return renormalize(weighted + (corrected - p_hat))


def softmax_aggregate(p: np.ndarray, eps: float = AGGREGATE_EPS) -> np.ndarray:
    """Merge per-channel scores through their odds so that channels sum to one."""
    q = np.clip(np.asarray(p, dtype=np.float64), eps, 1.0 - eps)
    odds = q / (1.0 - q)
    return odds / odds.sum(axis=-1, keepdims=True)


def labels_from_probs(p: np.ndarray) -> np.ndarray:
    return np.argmax(softmax_aggregate(p), axis=-1).astype(np.uint8)


def near_one_hot(mask: np.ndarray, channels: int, eps: float = ORACLE_EPS) -> np.ndarray:
    """``1 - eps`` on the labelled channel, the remaining ``eps`` spread evenly."""
    mask = np.asarray(mask)
    if mask.max(initial=0) >= channels:
        raise ValueError(f"mask label {mask.max()} needs more than {channels} channels")
    others = channels - 1
    fill = eps / others if others else 0.0
    p = np.full(mask.shape + (channels,), fill, dtype=np.float64)
    np.put_along_axis(p, mask[..., None].astype(np.intp), 1.0 - eps if others else 1.0, axis=-1)
    return p


def is_keyframe(frame: FrameRecord) -> bool:
    return frame.frame_type in (FrameType.INTRA, FrameType.PRED)


def amortized_time(t_base_ms: float, t_prop_ms: float, t_corr_ms: float, keyframe_ratio: float) -> float:
    """Per-frame time when only a ``keyframe_ratio`` share of frames hits the base model."""
    if min(t_base_ms, t_prop_ms, t_corr_ms) < 0:
        raise ValueError("times must be non-negative")
    if not 0.0 <= keyframe_ratio <= 1.0:
        raise ValueError("keyframe ratio must lie in [0, 1]")
    return t_base_ms * keyframe_ratio + (t_prop_ms + t_corr_ms) * (1.0 - keyframe_ratio)


@dataclass
class PipelineConfig:
    kernel: InterpKernel = InterpKernel.NEAREST
    correction: Optional[CorrectionConfig] = field(default_factory=CorrectionConfig)
    memory_frequency: int = 2
    propagation_resolution: float = 0.25
    normalize_confidence: bool = True
    threads: int = 1

    def __post_init__(self):
        if self.memory_frequency < 1:
            raise ValueError("memory_frequency must be >= 1")
        if self.propagation_resolution not in (1, 1.0, 0.25):
            raise ValueError("propagation_resolution must be 1 or 1/4")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")

    @property
    def factor(self) -> int:
        return int(round(1.0 / self.propagation_resolution))


@dataclass
class PipelineState:
    """Write-once-per-frame buffers of propagated maps, keyed by display index."""

    predictions: dict = field(default_factory=dict)
    features: dict = field(default_factory=dict)
    keyframes: dict = field(default_factory=dict)
    peak_buffered: int = 0

    def buffered(self) -> int:
        return len(self.predictions)

    def record_peak(self) -> None:
        self.peak_buffered = max(self.peak_buffered, self.buffered())


@dataclass
class RunResult:
    masks: dict
    probabilities: dict
    keyframe_ratio: float
    timings_ms: dict
    frame_ms: dict
    peak_buffered: int
    sites: dict

    def stage_means(self) -> dict:
        return {k: float(np.mean(v)) if v else 0.0 for k, v in self.timings_ms.items()}


def dependency_dag(stream: SidecarStream) -> dict[int, set[int]]:
    """Frames each frame must wait for.

    A non-keyframe waits for its PU references and the previous keyframe in
    decode order. A keyframe waits for everything decoded before it, so base
    calls stay serialized (memory updates are order dependent), every earlier
    keyframe is available to the correction stage, and the scheduler never
    runs ahead into the next mini-GOP, which keeps the streaming buffer bound.
    """
    deps = {}
    last_key = None
    since_key = []
    for f in sorted(stream.frames, key=lambda f: f.decode_rank):
        d = set(f.references())
        if last_key is not None:
            d.add(last_key)
        if is_keyframe(f):
            d.update(since_key)
            last_key = f.display_index
            since_key = []
        else:
            since_key.append(f.display_index)
        deps[f.display_index] = d
    return deps


def _waves(deps: Mapping[int, set[int]], order: list[int]) -> list[list[int]]:
    level = {}
    for i in order:
        level[i] = 1 + max((level[d] for d in deps[i]), default=-1)
    out = defaultdict(list)
    for i in order:
        out[level[i]].append(i)
    return [out[k] for k in sorted(out)]


def max_reference_distance(stream: SidecarStream) -> int:
    return max((abs(f.display_index - r) for f in stream.frames for r in f.references()), default=0)


class _Run:
    def __init__(self, stream, frames, initial_mask, base, feat, dec, config, num_objects):
        self.stream = stream
        self.frames = frames
        self.base = base
        self.feat = feat
        self.dec = dec
        self.config = config
        self.factor = config.factor
        self.state = PipelineState()
        self.timings = defaultdict(list)
        self.frame_ms = {}
        mask = np.asarray(initial_mask)
        if mask.shape != (stream.height, stream.width):
            raise DimensionMismatch(f"initial mask {mask.shape} vs stream {(stream.height, stream.width)}")
        self.initial_mask = mask
        self.channels = (num_objects if num_objects is not None else int(mask.max(initial=0))) + 1
        if stream.height % self.factor or stream.width % self.factor:
            raise PipelineError(None, f"{stream.width}x{stream.height} is not divisible by {self.factor}")

        ordered = sorted(stream.frames, key=lambda f: f.decode_rank)
        self.order = [f.display_index for f in ordered]
        first = ordered[0]
        if first.display_index != 1 or first.frame_type != FrameType.INTRA:
            raise PipelineError(first.display_index, "frame 1 must be the first decoded frame and INTRA")
        # nearest keyframe among those decoded earlier: static, so scheduling cannot change it
        self.nearest_key = {}
        seen_keys = []
        for f in ordered:
            if is_keyframe(f):
                seen_keys.append(f.display_index)
            elif seen_keys:
                self.nearest_key[f.display_index] = nearest_keyframe(f.display_index, seen_keys)
        self.users = defaultdict(int)
        for f in ordered:
            for r in self._uses(f):
                self.users[r] += 1
        self.keyframe_count = 0
        self.results = {}
        self.sites = {}

    def _uses(self, frame: FrameRecord) -> set[int]:
        """Buffered frames that ``frame`` reads: its references and, with correction, its matching keyframe."""
        uses = set(frame.references())
        if self.config.correction is not None and frame.display_index in self.nearest_key:
            uses.add(self.nearest_key[frame.display_index])
        return uses

    def _tick(self, stage, t0):
        self.timings[stage].append((time.perf_counter() - t0) * 1000.0)

    def _keyframe(self, frame: FrameRecord):
        i = frame.display_index
        image = self.frames[i]
        t0 = time.perf_counter()
        if i == 1:
            p_full = near_one_hot(self.initial_mask, self.channels)
            v = self.feat.extract(image)
        else:
            p_full, v = self.base.segment(image, i)
            if v is None:
                v = self.feat.extract(image)
        p_full = np.asarray(p_full, dtype=np.float64)
        if p_full.shape != (self.stream.height, self.stream.width, self.channels):
            raise DimensionMismatch(f"base output {p_full.shape} does not match "
                                    f"{(self.stream.height, self.stream.width, self.channels)}")
        self.keyframe_count += 1
        observe = getattr(self.base, "observe", None)
        if observe is not None and (self.keyframe_count - 1) % self.config.memory_frequency == 0:
            observe(i, p_full, v)
        self._tick("base", t0)
        p = box_downsample(p_full, self.factor)
        return {"p_star": p, "v_star": np.asarray(v, dtype=np.float64), "key": (p, v),
                "final": p_full, "mask": labels_from_probs(p_full)}

    def _propagate(self, frame: FrameRecord):
        i = frame.display_index
        st = self.state
        cfg = self.config
        t0 = time.perf_counter()
        mf = build_motion_field(frame, self.stream).downsample(self.factor)
        for r in mf.references():
            if r not in st.predictions:
                raise UnbufferedReference(i, f"reference {r} has not been buffered")
        p_hat = warp_map(mf, st.predictions, cfg.kernel)
        v_hat = warp_map(mf, st.features, cfg.kernel)
        self._tick("propagation", t0)

        t0 = time.perf_counter()
        v = np.asarray(self.feat.extract(self.frames[i]), dtype=np.float64)
        if v.shape != v_hat.shape:
            raise DimensionMismatch(f"features {v.shape} vs propagated features {v_hat.shape}")
        weighted = apply_confidence(confidence(v, v_hat, cfg.normalize_confidence), p_hat)
        self._tick("confidence", t0)

        t0 = time.perf_counter()
        corrected = p_hat
        sites = None
        if cfg.correction is not None and frame.residual is not None and i in self.nearest_key:
            e_b = block_any(residual_gate(frame.residual, cfg.correction), self.factor)
            s_plus = dilate(foreground_mask(softmax_aggregate(p_hat)), cfg.correction.dilation_radius)
            sites = correction_sites(e_b, s_plus)
            k = self.nearest_key[i]
            p_key, v_key = st.keyframes[k]
            corrected = feature_match_correct(sites, p_key, v, v_key, cfg.correction) + p_hat
        self._tick("correction", t0)

        t0 = time.perf_counter()
        p = upsample_nearest(self.dec.decode(p_hat, v, weighted, corrected), self.factor)
        mask = labels_from_probs(p)
        self._tick("decoder", t0)
        return {"p_star": p_hat, "v_star": v, "final": p, "mask": mask, "sites": sites}

    def process(self, i: int) -> dict:
        frame = self.stream.frame(i)
        t0 = time.perf_counter()
        try:
            out = self._keyframe(frame) if is_keyframe(frame) else self._propagate(frame)
        except PipelineError:
            raise
        except Exception as exc:
            raise PipelineError(i, f"{type(exc).__name__}: {exc}") from exc
        out["ms"] = (time.perf_counter() - t0) * 1000.0
        log.debug("frame %d done in %.2f ms", i, out["ms"])
        return out

    def commit(self, i: int, out: dict) -> None:
        st = self.state
        st.predictions[i] = out["p_star"]
        st.features[i] = out["v_star"]
        if "key" in out:
            st.keyframes[i] = out["key"]
        self.results[i] = out
        if out.get("sites") is not None:
            self.sites[i] = out["sites"]
        self.frame_ms[i] = out["ms"]
        st.record_peak()

    def release(self, i: int) -> None:
        """Drop buffers nobody still needs once frame ``i`` has been consumed."""
        users = self._uses(self.stream.frame(i))
        for r in users:
            self.users[r] -= 1
        for r in list(users) + [i]:
            if self.users[r] <= 0:
                self.state.predictions.pop(r, None)
                self.state.features.pop(r, None)
                self.state.keyframes.pop(r, None)

    def run(self) -> RunResult:
        if self.config.threads == 1:
            for i in self.order:
                self.commit(i, self.process(i))
                self.release(i)
        else:
            deps = dependency_dag(self.stream)
            with ThreadPoolExecutor(max_workers=self.config.threads) as pool:
                for wave in _waves(deps, self.order):
                    outs = list(pool.map(self.process, wave))
                    for i, out in zip(wave, outs):
                        self.commit(i, out)
                        self.release(i)
        return RunResult(
            masks={i: self.results[i]["mask"] for i in sorted(self.results)},
            probabilities={i: self.results[i]["final"] for i in sorted(self.results)},
            keyframe_ratio=keyframe_ratio(self.stream),
            timings_ms=dict(self.timings),
            frame_ms=dict(self.frame_ms),
            peak_buffered=self.state.peak_buffered,
            sites=self.sites,
        )


def run_sequence(stream: SidecarStream, frames, initial_mask: np.ndarray, base: BaseSegmenter,
                 feat: Optional[FeatureExtractor] = None, dec: Optional[MaskDecoder] = None,
                 config: Optional[PipelineConfig] = None, num_objects: Optional[int] = None,
                 check: bool = True) -> RunResult:
    """Segment every frame of ``stream``; ``frames`` maps display index to HxWx3 RGB.

    ``initial_mask`` labels frame 1 and fixes the object set unless
    ``num_objects`` is given. The default feature extractor works at the
    propagation resolution.
    """
    config = config or PipelineConfig()
    if check:
        problems = validate_stream(stream)
        if problems:
            raise PipelineError(problems[0].frame, f"invalid stream: {problems[0]}")
    feat = feat or DefaultFeatureExtractor(factor=config.factor)
    dec = dec or ResidualFusionDecoder()
    return _Run(stream, frames, initial_mask, base, feat, dec, config, num_objects).run()
