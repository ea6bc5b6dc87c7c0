"""Deterministic synthetic world: routes, noisy odometry and per-camera line detections."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from shapely.geometry import LineString, Polygon

from errors import LinelocError
from geometry import (
    CameraDetections,
    Frame,
    Measurement,
    Polyline,
    Pose,
    compose,
    decompose_error,
    relative,
    resample_equidistant,
    rotation,
    transform_points,
)
from observation import ObsParams
from particle_filter import (
    FilterConfig,
    MotionNoise,
    OdomDelta,
    init_gaussian,
    init_uniform,
    step,
)
from probmap import ProbMap, VectorMap
from runlog import ReplayFrame, RunLog, RunLogRow

logger = logging.getLogger(__name__)

MAX_SPEED = 40.0
STREAM_ODOMETRY = 10
STREAM_DETECTION = 11
FP_ATTEMPTS = 100


@dataclass(frozen=True, eq=False)
class CameraFootprint:
    camera_id: int
    polygon: np.ndarray

    def __post_init__(self) -> None:
        ring = np.asarray(self.polygon, dtype=np.float64).reshape(-1, 2)
        if self.camera_id < 0:
            raise LinelocError("invalid_camera_id", camera_id=self.camera_id)
        if len(ring) < 3 or not Polygon(ring).exterior.is_simple:
            raise LinelocError("polygon_not_simple")
        object.__setattr__(self, "polygon", ring)

    @property
    def shape(self) -> Polygon:
        return Polygon(self.polygon)


def default_cameras() -> List[CameraFootprint]:
    """Front, rear, left and right ground footprints of a four-camera rig."""
    return [
        CameraFootprint(0, np.array([(1.5, -1.5), (12.0, -6.0), (12.0, 6.0), (1.5, 1.5)])),
        CameraFootprint(1, np.array([(-1.5, 1.5), (-10.0, 5.0), (-10.0, -5.0), (-1.5, -1.5)])),
        CameraFootprint(2, np.array([(-2.0, 1.2), (2.0, 1.2), (3.0, 6.0), (-3.0, 6.0)])),
        CameraFootprint(3, np.array([(-2.0, -1.2), (-3.0, -6.0), (3.0, -6.0), (2.0, -1.2)])),
    ]


@dataclass(frozen=True)
class DetectionNoise:
    sigma_shift_sim: float = 0.1
    sigma_angle_sim: float = math.radians(1.0)
    fp_rate: float = 0.2
    drop_rate: float = 0.1
    isotropic: bool = False
    fp_max_length: float = 3.0

    def __post_init__(self) -> None:
        if min(self.sigma_shift_sim, self.sigma_angle_sim, self.fp_rate, self.drop_rate) < 0.0:
            raise LinelocError("invalid_detection_noise")
        if self.drop_rate > 1.0:
            raise LinelocError("invalid_detection_noise")


@dataclass(frozen=True)
class TrajectorySegment:
    kind: str
    length: float
    speed: float
    radius: Optional[float] = None


@dataclass(frozen=True)
class Trajectory:
    samples: Tuple[Tuple[float, Pose], ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        times = [t for t, _ in self.samples]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise LinelocError("trajectory_time_not_increasing")

    @property
    def poses(self) -> List[Pose]:
        return [pose for _, pose in self.samples]

    @property
    def times(self) -> List[float]:
        return [t for t, _ in self.samples]


def _advance(pose: Pose, kind: str, distance: float, curvature: float) -> Pose:
    if kind == "reverse":
        distance = -distance
    if curvature == 0.0:
        return compose(pose, distance, 0.0, 0.0)
    turn = distance * curvature
    dx = math.sin(turn) / curvature
    dy = (1.0 - math.cos(turn)) / curvature
    return compose(pose, dx, dy, turn)


def make_trajectory(
    segments: Sequence[TrajectorySegment],
    dt: float,
    start: Pose = Pose(0.0, 0.0, 0.0),
    max_speed: float = MAX_SPEED,
) -> Trajectory:
    """Piecewise constant-curvature route; positive arc radius turns left."""
    if not dt > 0.0:
        raise LinelocError("invalid_dt", dt=dt)
    t = 0.0
    pose = start
    samples: List[Tuple[float, Pose]] = [(t, pose)]
    for seg in segments:
        if seg.kind not in ("straight", "arc", "reverse"):
            raise LinelocError("unknown_segment_kind", kind=seg.kind)
        if not seg.length > 0.0:
            raise LinelocError("zero_length_segment")
        if not 0.0 < seg.speed <= max_speed:
            raise LinelocError("invalid_speed", speed=seg.speed)
        curvature = 0.0
        if seg.kind == "arc":
            if not seg.radius:
                raise LinelocError("arc_needs_radius")
            curvature = 1.0 / seg.radius
        duration = seg.length / seg.speed
        steps = max(1, int(math.ceil(duration / dt - 1e-9)))
        seg_start, t_start = pose, t
        for k in range(1, steps + 1):
            pose = _advance(seg_start, seg.kind, seg.length * k / steps, curvature)
            samples.append((t_start + duration * k / steps, pose))
        t = t_start + duration
    return Trajectory(tuple(samples))


def odometry_stream(traj: Trajectory, noise: MotionNoise, seed: int) -> List[OdomDelta]:
    rng = np.random.default_rng([seed, STREAM_ODOMETRY])
    poses = traj.poses
    deltas = []
    for previous, current in zip(poses, poses[1:]):
        dx, dy, dtheta = relative(previous, current)
        eta = rng.normal(0.0, noise.sigma_linear) if noise.sigma_linear > 0 else 0.0
        delta = rng.normal(0.0, noise.sigma_angular) if noise.sigma_angular > 0 else 0.0
        deltas.append(OdomDelta(dx * (1.0 + eta), dy * (1.0 + eta), dtheta * (1.0 + delta)))
    return deltas


def integrate_odometry(start: Pose, deltas: Sequence[OdomDelta]) -> List[Pose]:
    poses = [start]
    for delta in deltas:
        poses.append(compose(poses[-1], delta.dx, delta.dy, delta.dtheta))
    return poses


def _line_parts(geom: object) -> List[LineString]:
    if geom is None or getattr(geom, "is_empty", True):
        return []
    if isinstance(geom, LineString):
        return [geom]
    return [part for sub in getattr(geom, "geoms", []) for part in _line_parts(sub)]


def _clip(points: np.ndarray, footprint: Polygon, spacing: float) -> List[np.ndarray]:
    line = LineString(points)
    if footprint.covers(line):
        return [points]
    return [np.asarray(part.coords) for part in _line_parts(line.intersection(footprint)) if part.length >= spacing]


def _to_polyline(points: np.ndarray) -> Optional[Polyline]:
    keep = np.ones(len(points), dtype=bool)
    keep[1:] = (np.diff(points, axis=0) != 0.0).any(axis=1)
    points = points[keep]
    if len(points) < 2:
        return None
    return Polyline(points, Frame.VEHICLE)


def _perturb(points: np.ndarray, noise: DetectionNoise, rng: np.random.Generator) -> np.ndarray:
    center = points.mean(axis=0)
    angle = rng.normal(0.0, noise.sigma_angle_sim) if noise.sigma_angle_sim > 0 else 0.0
    points = (points - center) @ rotation(angle).T + center
    if noise.sigma_shift_sim <= 0:
        return points
    if noise.isotropic:
        return points + rng.normal(0.0, noise.sigma_shift_sim, size=points.shape)
    tangent = np.gradient(points, axis=0)
    tangent /= np.linalg.norm(tangent, axis=1, keepdims=True)
    normal = np.column_stack((-tangent[:, 1], tangent[:, 0]))
    return points + normal * rng.normal(0.0, noise.sigma_shift_sim, size=len(points))[:, None]


def _false_positive(footprint: Polygon, noise: DetectionNoise, spacing: float, rng: np.random.Generator) -> Optional[np.ndarray]:
    xmin, ymin, xmax, ymax = footprint.bounds
    longest = max(spacing, noise.fp_max_length)
    for _ in range(FP_ATTEMPTS):
        center = rng.uniform((xmin, ymin), (xmax, ymax))
        heading = rng.uniform(-math.pi, math.pi)
        length = rng.uniform(spacing, longest)
        half = 0.5 * length * np.array([math.cos(heading), math.sin(heading)])
        points = np.array([center - half, center + half])
        if footprint.covers(LineString(points)):
            return points
    return None


def synthesize_measurement(
    pose: Pose,
    vmap: VectorMap,
    cams: Sequence[CameraFootprint],
    noise: DetectionNoise,
    spacing: float,
    seed: int,
    t: float,
) -> Measurement:
    cameras = []
    for cam in cams:
        rng = np.random.default_rng([seed, int(round(t * 1e6)), cam.camera_id, STREAM_DETECTION])
        local = cam.shape
        in_map = Polygon(transform_points(cam.polygon, pose))
        pieces: List[np.ndarray] = []
        for line in vmap.lines:
            for part in _line_parts(LineString(line.points).intersection(in_map)):
                if part.length >= spacing:
                    world = np.asarray(part.coords)
                    pieces.append((world - np.array([pose.x, pose.y])) @ rotation(pose.theta))

        detections: List[Polyline] = []
        for piece in pieces:
            base = _to_polyline(piece)
            if base is None:
                continue
            sampled = resample_equidistant(base, spacing).points
            if rng.random() < noise.drop_rate:
                continue
            for clipped in _clip(_perturb(sampled, noise, rng), local, spacing):
                polyline = _to_polyline(clipped)
                if polyline is not None:
                    detections.append(polyline)

        for _ in range(int(rng.poisson(noise.fp_rate))):
            points = _false_positive(local, noise, spacing, rng)
            if points is None:
                logger.debug("camera %d footprint too small for a false positive", cam.camera_id)
                continue
            detections.append(resample_equidistant(Polyline(points, Frame.VEHICLE), spacing))
        cameras.append(CameraDetections(cam.camera_id, tuple(detections)))
    return Measurement(tuple(cameras))


def run_frames(
    frames: Sequence[ReplayFrame],
    pmap: ProbMap,
    params: ObsParams,
    motion_noise: MotionNoise,
    filter_cfg: FilterConfig,
    seed: int,
    init_mode: str = "gaussian",
    init_pose: Optional[Pose] = None,
    init_sigmas: Tuple[float, float, float] = (0.5, 0.5, 0.05),
) -> RunLog:
    """Run the filter over recorded frames; error columns are filled where ground truth exists."""
    start = init_pose or (frames[0].truth if frames else None)
    if init_mode == "uniform" or start is None:
        particles = init_uniform(pmap, filter_cfg.particles, seed)
    else:
        particles = init_gaussian(start, init_sigmas, filter_cfg.particles, seed)

    rows = []
    for frame in frames:
        result = step(particles, frame.odom, frame.measurement, pmap, params, motion_noise, filter_cfg)
        particles = result.particles
        errors = decompose_error(result.pose, frame.truth) if frame.truth is not None else None
        rows.append(RunLogRow(frame.t, frame.truth, result.pose, errors, result.timings, result.degenerate))
    logger.info("filter run finished: %d steps, seed %d", len(rows), seed)
    return RunLog(tuple(rows), tuple(frames))


def simulate_frames(
    vmap: VectorMap,
    traj: Trajectory,
    cams: Sequence[CameraFootprint],
    det_noise: DetectionNoise,
    odom_noise: MotionNoise,
    spacing: float,
    seed: int,
) -> List[ReplayFrame]:
    deltas = [OdomDelta(0.0, 0.0, 0.0)] + odometry_stream(traj, odom_noise, seed)
    frames = []
    for (t, pose), delta in zip(traj.samples, deltas):
        z = synthesize_measurement(pose, vmap, cams, det_noise, spacing, seed, t)
        frames.append(ReplayFrame(t, delta, z, pose))
    return frames


def run_closed_loop(
    vmap: VectorMap,
    pmap: ProbMap,
    traj: Trajectory,
    cams: Sequence[CameraFootprint],
    det_noise: DetectionNoise,
    motion_noise: MotionNoise,
    filter_cfg: FilterConfig,
    seed: int,
    params: ObsParams = ObsParams(sigma_angle=0.1, spacing=0.5),
    odom_noise: Optional[MotionNoise] = None,
    init_sigmas: Tuple[float, float, float] = (0.5, 0.5, 0.05),
    init_mode: str = "gaussian",
) -> RunLog:
    odom_noise = odom_noise if odom_noise is not None else MotionNoise(0.02, 0.02)
    frames = simulate_frames(vmap, traj, cams, det_noise, odom_noise, params.spacing, seed)
    return run_frames(frames, pmap, params, motion_noise, filter_cfg, seed, init_mode, None, init_sigmas)
