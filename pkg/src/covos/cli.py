"""Command-line front end: ``covos gen|validate|propagate|eval|bench``.

Exit codes: 0 success, 1 domain failure (violations, pipeline errors, frame
mismatches), 2 usage or parse failure.
"""
from __future__ import annotations

import argparse
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import kernels
from .correction import CorrectionConfig
from .metrics import FrameSetMismatch, evaluate_sequence
from .pipeline import PipelineConfig, PipelineError, amortized_time, labels_from_probs, run_sequence
from .pnm import MASK_NAME, FrameDirectory, read_masks, write_pgm
from .segmenters import PROB_NAME, OracleSegmenter, PrecomputedSegmenter, StubSegmenter, read_prob_map
from .sidecar import SidecarError, keyframe_ratio, parse_sidecar, read_sidecar, validate_stream
from .synthetic import SpecInvalid, generate, load_noise, load_scene
from .warp import InterpKernel

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
DEFAULT_T_PROP_MS = 12.0


def _err(msg: str) -> None:
    print(f"covos: {msg}", file=sys.stderr)


def _default_threads() -> int:
    env = os.environ.get("COVOS_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            _err(f"ignoring COVOS_THREADS={env!r}")
    return os.cpu_count() or 1


def _load_stream(path):
    """Parse without validation so structural and semantic failures map to different exit codes."""
    return parse_sidecar(Path(path).read_bytes(), strict=False)


# ---------------------------------------------------------------------------


def cmd_gen(args) -> int:
    try:
        spec = load_scene(args.spec)
        noise = load_noise(args.noise) if args.noise else None
        seq = generate(spec, noise, seed=args.seed)
    except SpecInvalid as exc:
        _err(f"{args.spec}: {exc} (key: {exc.key})")
        return EXIT_USAGE
    seq.write(args.out)
    print(f"wrote {len(seq.frames)} frames, {len(seq.masks)} masks and stream.cvsc to {args.out}")
    print(f"keyframe ratio R = {seq.keyframe_ratio:.2f}")
    return EXIT_OK


def cmd_validate(args) -> int:
    try:
        stream = _load_stream(args.sidecar)
    except SidecarError as exc:
        _err(str(exc))
        return EXIT_USAGE
    problems = validate_stream(stream)
    for v in problems:
        print(v)
    if problems:
        print(f"{len(problems)} violation(s)")
        return EXIT_FAIL
    print(f"ok: {stream.width}x{stream.height}, {len(stream)} frames, R = {keyframe_ratio(stream):.2f}")
    return EXIT_OK


def _pipeline_config(args) -> PipelineConfig:
    correction = None
    if not args.no_correction:
        correction = CorrectionConfig(tau=args.tau, dilation_radius=args.dilation, search_window=args.search_window)
    return PipelineConfig(
        kernel=InterpKernel(args.kernel),
        correction=correction,
        memory_frequency=args.memory_frequency,
        propagation_resolution=1.0 if args.full_res else 0.25,
        threads=args.threads or _default_threads(),
    )


def cmd_propagate(args) -> int:
    try:
        stream = _load_stream(args.sidecar)
    except SidecarError as exc:
        _err(str(exc))
        return EXIT_USAGE
    try:
        config = _pipeline_config(args)
    except ValueError as exc:
        _err(str(exc))
        return EXIT_USAGE
    frames = FrameDirectory(args.frames)
    if args.prob_dir:
        base = PrecomputedSegmenter(args.prob_dir)
        first = Path(args.prob_dir) / PROB_NAME.format(1)
        if not first.exists():
            _err(f"missing {first}")
            return EXIT_FAIL
        prob = read_prob_map(first)
        initial = labels_from_probs(prob)
        num_objects = prob.shape[2] - 1
    else:
        if not args.keyframe_masks:
            _err("one of --keyframe-masks or --prob-dir is required")
            return EXIT_USAGE
        masks = read_masks(args.keyframe_masks)
        if 1 not in masks:
            _err(f"frame 1 needs a mask in {args.keyframe_masks}")
            return EXIT_FAIL
        base = OracleSegmenter(masks)
        initial = masks[1]
        num_objects = base.num_objects
    try:
        result = run_sequence(stream, frames, initial, base, config=config, num_objects=num_objects)
    except PipelineError as exc:
        _err(str(exc))
        return EXIT_FAIL
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i in sorted(result.masks):
        write_pgm(out / MASK_NAME.format(i), result.masks[i])
    print(f"keyframe ratio R = {result.keyframe_ratio:.2f}")
    print(f"backend: {kernels.BACKEND}, threads: {config.threads}")
    for stage, ms in result.stage_means().items():
        print(f"  {stage:<12} {ms:8.3f} ms")
    print(f"wrote {len(result.masks)} masks to {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    try:
        preds = read_masks(args.pred)
        gts = read_masks(args.gt)
        report = evaluate_sequence(preds, gts, tolerance_px=args.tolerance)
    except FrameSetMismatch as exc:
        _err(str(exc))
        return EXIT_FAIL
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.txt").write_text(report.to_kv())
        (out / "report_table.txt").write_text(report.to_table(by_size=args.by_size))
    s = report.summary()
    print(report.to_table(by_size=args.by_size), end="")
    print(f"J_mean={s['J_mean']:.6f} F_mean={s['F_mean']:.6f} JF_mean={s['JF_mean']:.6f}")
    return EXIT_OK


def measure(stream, frames, masks, t_base_ms: float, threads: int = 1):
    """Run the pipeline with a fixed-latency stub; returns (measured ms/frame, propagation ms, modelled ms/frame)."""
    num_objects = max(int(m.max(initial=0)) for m in masks.values()) if masks else 1
    initial = masks.get(1, np.zeros((stream.height, stream.width), dtype=np.uint8))
    stub = StubSegmenter(t_base_ms, num_objects=max(num_objects, 1), masks=masks)
    t0 = time.perf_counter()
    result = run_sequence(stream, frames, initial, stub, config=PipelineConfig(threads=threads),
                          num_objects=max(num_objects, 1))
    wall = (time.perf_counter() - t0) * 1000.0 / len(stream)
    non_key = [ms for i, ms in result.frame_ms.items() if stream.frame(i).frame_type.letter == "B"]
    t_prop = float(np.mean(non_key)) if non_key else 0.0
    return wall, t_prop, amortized_time(t_base_ms, t_prop, 0.0, result.keyframe_ratio)


def cmd_bench(args) -> int:
    try:
        stream = _load_stream(args.sidecar)
    except SidecarError as exc:
        _err(str(exc))
        return EXIT_USAGE
    R = keyframe_ratio(stream)
    try:
        ms = amortized_time(args.t_base, args.t_prop, args.t_corr, R)
    except ValueError as exc:
        _err(str(exc))
        return EXIT_USAGE
    print(f"keyframe ratio R = {R:.3f}")
    if args.t_base == 0:
        print(f"base model off: (t_prop + t_corr) * (1 - R) = {ms:.2f} ms/frame")
    else:
        print(f"model: {args.t_base:g} * {R:.3f} + {args.t_prop + args.t_corr:g} * {1 - R:.3f} = {ms:.2f} ms/frame")
    print(f"amortized: {ms:.2f} ms/frame, {1000.0 / ms if ms > 0 else float('inf'):.1f} FPS")
    if args.measure:
        root = Path(args.sidecar).parent
        frames_dir = Path(args.frames) if args.frames else root / "frames"
        masks_dir = Path(args.masks) if args.masks else root / "masks"
        frames = FrameDirectory(frames_dir)
        masks = read_masks(masks_dir) if masks_dir.is_dir() else {}
        try:
            wall, t_prop, model = measure(stream, frames, masks, args.t_base)
        except PipelineError as exc:
            _err(str(exc))
            return EXIT_FAIL
        dev = abs(wall - model) / model if model > 0 else 0.0
        print(f"measured: {wall:.2f} ms/frame ({1000.0 / wall:.1f} FPS), "
              f"propagation {t_prop:.2f} ms/frame")
        print(f"model with measured propagation: {model:.2f} ms/frame, deviation {100 * dev:.1f}%")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="covos", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="render a synthetic scene into frames, masks and a stream")
    p.add_argument("spec", help="scene config file")
    p.add_argument("out", help="output directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--noise", help="noise config with [corrupt] blocks")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("validate", help="check a .cvsc stream")
    p.add_argument("sidecar")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("propagate", help="segment keyframes and propagate masks")
    p.add_argument("--sidecar", required=True)
    p.add_argument("--frames", required=True, help="directory of frame_NNNNN.ppm")
    p.add_argument("--keyframe-masks", help="directory of mask_NNNNN.pgm for keyframes")
    p.add_argument("--prob-dir", help="directory of precomputed prob_NNNNN.raw keyframe maps")
    p.add_argument("--out", required=True)
    p.add_argument("--kernel", choices=[k.value for k in InterpKernel], default="nearest")
    p.add_argument("--no-correction", action="store_true")
    p.add_argument("--tau", type=float, default=38.25)
    p.add_argument("--dilation", type=int, default=2)
    p.add_argument("--search-window", type=int, default=None)
    p.add_argument("--memory-frequency", type=int, default=2)
    p.add_argument("--full-res", action="store_true", help="propagate at full instead of 1/4 resolution")
    p.add_argument("--threads", type=int, default=None, help="worker threads (default: COVOS_THREADS or cores)")
    p.set_defaults(func=cmd_propagate)

    p = sub.add_parser("eval", help="score predicted masks against ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--out", help="write report.txt and report_table.txt here")
    p.add_argument("--by-size", action="store_true")
    p.add_argument("--tolerance", type=int, default=None, help="boundary tolerance in pixels")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="amortized timing model, optionally measured")
    p.add_argument("--sidecar", required=True)
    p.add_argument("--t-base", type=float, required=True, help="base model ms per keyframe")
    p.add_argument("--t-prop", type=float, default=DEFAULT_T_PROP_MS, help="propagation ms per non-keyframe")
    p.add_argument("--t-corr", type=float, default=0.0, help="correction ms per non-keyframe")
    p.add_argument("--measure", action="store_true", help="also time a run with a fixed-latency stub")
    p.add_argument("--frames", help="frame directory for --measure (default: <sidecar dir>/frames)")
    p.add_argument("--masks", help="mask directory for --measure (default: <sidecar dir>/masks)")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        _err(str(exc))
        return EXIT_USAGE
