"""Observation model for detected linear features.

A camera's likelihood is the product of the summed shift densities and the summed angular
densities of its detected lines; cameras are fused by multiplying their likelihoods, which is
accumulated as a sum of logarithms.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from errors import LinelocError
from geometry import Measurement, Polyline, Pose, resample_equidistant, transform_points_many, transform_to_map
from probmap import Channel, ProbMap, lookup_many

logger = logging.getLogger(__name__)

LineLike = Union[Polyline, np.ndarray]


class Variant(str, Enum):
    SHIFT = "shift"
    ANGULAR = "angular"
    COMBINED = "shift+angular"


@dataclass(frozen=True)
class ObsParams:
    sigma_angle: float
    spacing: float

    def __post_init__(self) -> None:
        if not self.sigma_angle > 0.0:
            raise LinelocError("invalid_sigma_angle", value=self.sigma_angle)
        if not self.spacing > 0.0:
            raise LinelocError("invalid_spacing", spacing=self.spacing)

    @property
    def angle_peak(self) -> float:
        return 1.0 / (self.sigma_angle * math.sqrt(2.0 * math.pi))


@dataclass(frozen=True)
class LikelihoodBreakdown:
    shift_sum: float
    angle_sum: float
    combined: float
    per_camera: Tuple[float, ...] = ()


def _points(line: LineLike) -> np.ndarray:
    if isinstance(line, Polyline):
        return line.points
    return np.asarray(line, dtype=np.float64).reshape(-1, 2)


def angle_density(gamma: np.ndarray, params: ObsParams) -> np.ndarray:
    return params.angle_peak * np.exp(-np.square(gamma) / (2.0 * params.sigma_angle ** 2))


def shift_likelihood(line: LineLike, pmap: ProbMap) -> float:
    points = _points(line)
    if len(points) == 0:
        raise LinelocError("empty_line")
    return float(lookup_many(pmap, Channel.SHIFT, points).mean())


def segment_gamma(d1: float, d2: float, seg_len: float) -> Optional[float]:
    """Absolute misalignment of a segment from its endpoint distances; None means skip the segment."""
    if not (math.isfinite(d1) and math.isfinite(d2)):
        return None
    if not seg_len > 0.0:
        raise LinelocError("invalid_segment_length", length=seg_len)
    return math.asin(min(1.0, abs(d1 - d2) / seg_len))


def angular_likelihood(line: LineLike, pmap: ProbMap, params: ObsParams) -> float:
    points = _points(line)
    if len(points) < 2:
        raise LinelocError("angular_needs_two_points", count=len(points))
    dist = lookup_many(pmap, Channel.DIST, points)
    seg_len = np.hypot(*np.diff(points, axis=0).T)
    total = 0.0
    used = 0
    for i in range(len(points) - 1):
        gamma = segment_gamma(float(dist[i]), float(dist[i + 1]), float(seg_len[i]))
        if gamma is None:
            continue
        total += float(angle_density(np.float64(gamma), params))
        used += 1
    if used == 0:
        return 0.0
    return total / used


def camera_likelihood(lines: Sequence[LineLike], pmap: ProbMap, params: ObsParams) -> LikelihoodBreakdown:
    if not lines:
        return LikelihoodBreakdown(shift_sum=0.0, angle_sum=0.0, combined=1.0, per_camera=(1.0,))
    shift_sum = sum(shift_likelihood(line, pmap) for line in lines)
    angle_sum = sum(angular_likelihood(line, pmap, params) for line in lines)
    combined = shift_sum * angle_sum
    return LikelihoodBreakdown(shift_sum, angle_sum, combined, (combined,))


def variant_factor(breakdown: LikelihoodBreakdown, line_count: int, variant: Variant) -> float:
    if line_count == 0:
        return 1.0
    if variant is Variant.SHIFT:
        return breakdown.shift_sum
    if variant is Variant.ANGULAR:
        return breakdown.angle_sum
    return breakdown.combined


def prepare_lines(lines: Sequence[Polyline], spacing: float) -> List[Polyline]:
    prepared = []
    for line in lines:
        try:
            prepared.append(resample_equidistant(line, spacing))
        except LinelocError as exc:
            if exc.key != "detection_too_short":
                raise
            logger.debug("skipping detection shorter than %.3f m", spacing)
    return prepared


def _log(value: float) -> float:
    return math.log(value) if value > 0.0 else -math.inf


def measurement_likelihood(
    z: Measurement,
    pose: Pose,
    pmap: ProbMap,
    params: ObsParams,
    variant: Variant = Variant.COMBINED,
) -> Tuple[float, LikelihoodBreakdown]:
    log_total = 0.0
    shift_total = 0.0
    angle_total = 0.0
    factors = []
    for camera in z.cameras:
        lines = [transform_to_map(line, pose) for line in prepare_lines(camera.lines, params.spacing)]
        breakdown = camera_likelihood(lines, pmap, params)
        factor = variant_factor(breakdown, len(lines), variant)
        factors.append(factor)
        shift_total += breakdown.shift_sum
        angle_total += breakdown.angle_sum
        log_total += _log(factor)
    value = math.exp(log_total)
    return value, LikelihoodBreakdown(shift_total, angle_total, value, tuple(factors))


def model_variant(z: Measurement, pose: Pose, pmap: ProbMap, params: ObsParams, variant: Variant) -> float:
    return measurement_likelihood(z, pose, pmap, params, Variant(variant))[0]


@dataclass(frozen=True, eq=False)
class PreparedMeasurement:
    """Resampled vehicle-frame detections flattened for evaluation over many poses."""

    points: np.ndarray
    line_starts: np.ndarray
    line_sizes: np.ndarray
    seg_a: np.ndarray
    seg_b: np.ndarray
    seg_len: np.ndarray
    seg_starts: np.ndarray
    camera_starts: np.ndarray
    camera_count: int

    @property
    def line_count(self) -> int:
        return len(self.line_starts)

    @property
    def segment_count(self) -> int:
        return len(self.seg_a)


def prepare_measurement(z: Measurement, spacing: float) -> PreparedMeasurement:
    chunks: List[np.ndarray] = []
    line_starts: List[int] = []
    line_sizes: List[int] = []
    seg_a: List[np.ndarray] = []
    seg_starts: List[int] = []
    camera_starts: List[int] = []
    n_points = 0
    n_segments = 0
    for camera in z.cameras:
        lines = prepare_lines(camera.lines, spacing)
        if not lines:
            continue
        camera_starts.append(len(line_starts))
        for line in lines:
            size = len(line.points)
            chunks.append(line.points)
            line_starts.append(n_points)
            line_sizes.append(size)
            seg_starts.append(n_segments)
            seg_a.append(np.arange(n_points, n_points + size - 1))
            n_points += size
            n_segments += size - 1
    points = np.vstack(chunks) if chunks else np.zeros((0, 2))
    a = np.concatenate(seg_a) if seg_a else np.zeros(0, dtype=np.int64)
    b = a + 1
    seg_len = np.hypot(*(points[b] - points[a]).T) if len(a) else np.zeros(0)
    return PreparedMeasurement(
        points=points,
        line_starts=np.array(line_starts, dtype=np.int64),
        line_sizes=np.array(line_sizes, dtype=np.float64),
        seg_a=a,
        seg_b=b,
        seg_len=seg_len,
        seg_starts=np.array(seg_starts, dtype=np.int64),
        camera_starts=np.array(camera_starts, dtype=np.int64),
        camera_count=len(z.cameras),
    )


def batch_log_likelihood(
    prepared: PreparedMeasurement,
    poses: np.ndarray,
    pmap: ProbMap,
    params: ObsParams,
    variant: Variant = Variant.COMBINED,
    timings: Optional[Dict[str, float]] = None,
) -> np.ndarray:
    """Log measurement likelihood for every row of `poses` (N x 3)."""
    poses = np.asarray(poses, dtype=np.float64).reshape(-1, 3)
    n = len(poses)
    if len(prepared.camera_starts) == 0:
        return np.zeros(n)

    started = time.perf_counter()
    meta = pmap.meta
    moved = transform_points_many(prepared.points, poses)
    mx, my = moved[..., 0], moved[..., 1]
    col = np.floor((mx - meta.origin.x) / meta.resolution + 0.5).astype(np.int64)
    row = np.floor((my - meta.origin.y) / meta.resolution + 0.5).astype(np.int64)
    inside = (col >= 0) & (col < meta.width) & (row >= 0) & (row < meta.height)
    flat = np.where(inside, row * meta.width + col, 0)
    after_transform = time.perf_counter()

    cam_shift = cam_angle = None
    if variant is not Variant.ANGULAR:
        shift = np.where(inside, pmap.shift.ravel()[flat].astype(np.float64), 1.0 / pmap.alpha)
        line_shift = np.add.reduceat(shift, prepared.line_starts, axis=1) / prepared.line_sizes
        cam_shift = np.add.reduceat(line_shift, prepared.camera_starts, axis=1)
    after_shift = time.perf_counter()

    if variant is not Variant.SHIFT:
        dist = pmap.dist.ravel()[flat].astype(np.float64)
        valid = inside[:, prepared.seg_a] & inside[:, prepared.seg_b]
        diff = np.abs(dist[:, prepared.seg_a] - dist[:, prepared.seg_b])
        ratio = np.minimum(1.0, np.where(valid, diff, 0.0) / prepared.seg_len)
        density = np.where(valid, angle_density(np.arcsin(ratio), params), 0.0)
        sums = np.add.reduceat(density, prepared.seg_starts, axis=1)
        counts = np.add.reduceat(valid.astype(np.float64), prepared.seg_starts, axis=1)
        line_angle = np.where(counts > 0, sums / np.maximum(counts, 1.0), 0.0)
        cam_angle = np.add.reduceat(line_angle, prepared.camera_starts, axis=1)
    after_angular = time.perf_counter()

    if variant is Variant.SHIFT:
        factor = cam_shift
    elif variant is Variant.ANGULAR:
        factor = cam_angle
    else:
        factor = cam_shift * cam_angle
    with np.errstate(divide="ignore"):
        log_values = np.log(factor).sum(axis=1)

    if timings is not None:
        timings["transform"] = timings.get("transform", 0.0) + (after_transform - started)
        timings["shift"] = timings.get("shift", 0.0) + (after_shift - after_transform)
        timings["angular"] = timings.get("angular", 0.0) + (after_angular - after_shift)
    return log_values
