"""Video object segmentation on compressed streams.

Keyframes (I/P) are segmented by a base model; B-frames receive masks warped
along the codec's motion vectors, weighted by feature confidence and repaired
where the residual flags motion errors.
"""
from .correction import CorrectionConfig
from .kernels import BACKEND
from .metrics import EvalReport, boundary_f, evaluate_sequence, jaccard
from .motion import MotionField, build_motion_field
from .pipeline import PipelineConfig, RunResult, amortized_time, run_sequence, softmax_aggregate
from .segmenters import OracleSegmenter, PrecomputedSegmenter, StubSegmenter
from .sidecar import (Direction, FrameRecord, FrameType, MotionVector, PredictionUnit, ResidualPlanes,
                      SidecarStream, parse_sidecar, read_sidecar, validate_stream, write_sidecar)
from .synthetic import NoiseSpec, SceneSpec, generate, load_noise, load_scene
from .warp import InterpKernel, confidence, predict_frame, reconstruct_frame, warp_map

__version__ = "0.1.0"
