"""SE(2) poses, polylines and frame transforms shared by every other module."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Sequence, Tuple

import numpy as np

from errors import LinelocError

TWO_PI = 2.0 * math.pi


class Frame(str, Enum):
    VEHICLE = "vehicle"
    MAP = "map"


def normalize_angle(theta: float) -> float:
    """Map an angle to (-pi, pi]."""
    if not math.isfinite(theta):
        raise LinelocError("non_finite_angle", value=theta)
    result = math.remainder(theta, TWO_PI)
    if result <= -math.pi:
        result += TWO_PI
    return result


def normalize_angles(theta: np.ndarray) -> np.ndarray:
    # values already inside (-pi, pi] are returned untouched, bit for bit
    theta = np.asarray(theta, dtype=np.float64)
    outside = (theta > math.pi) | (theta <= -math.pi)
    if not outside.any():
        return theta
    wrapped = np.remainder(theta + math.pi, TWO_PI) - math.pi
    wrapped = np.where(wrapped <= -math.pi, wrapped + TWO_PI, wrapped)
    return np.where(outside, wrapped, theta)


@dataclass(frozen=True)
class Point2:
    x: float
    y: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise LinelocError("non_finite_point", x=self.x, y=self.y)


@dataclass(frozen=True)
class Pose:
    x: float
    y: float
    theta: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise LinelocError("non_finite_pose", x=self.x, y=self.y)
        object.__setattr__(self, "theta", normalize_angle(self.theta))

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.theta], dtype=np.float64)

    @classmethod
    def from_array(cls, values: Sequence[float]) -> "Pose":
        return cls(float(values[0]), float(values[1]), float(values[2]))


@dataclass(frozen=True, eq=False)
class Polyline:
    points: np.ndarray
    frame: Frame = Frame.VEHICLE

    def __post_init__(self) -> None:
        pts = np.array(self.points, dtype=np.float64).reshape(-1, 2)
        if len(pts) < 2:
            raise LinelocError("polyline_too_few_points", count=len(pts))
        if not np.isfinite(pts).all():
            raise LinelocError("non_finite_point")
        if (np.diff(pts, axis=0) == 0.0).all(axis=1).any():
            raise LinelocError("polyline_repeated_point")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @classmethod
    def from_points(cls, points: Iterable[Sequence[float]], frame: Frame = Frame.VEHICLE) -> "Polyline":
        return cls(np.array([[float(p[0]), float(p[1])] for p in points], dtype=np.float64), frame)

    def as_points(self) -> Tuple[Point2, ...]:
        return tuple(Point2(float(x), float(y)) for x, y in self.points)

    def __len__(self) -> int:
        return len(self.points)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Polyline):
            return NotImplemented
        return self.frame == other.frame and np.array_equal(self.points, other.points)

    def __hash__(self) -> int:
        return hash((self.frame, self.points.tobytes()))


@dataclass(frozen=True)
class CameraDetections:
    camera_id: int
    lines: Tuple[Polyline, ...] = ()


@dataclass(frozen=True)
class Measurement:
    cameras: Tuple[CameraDetections, ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        ids = [cam.camera_id for cam in self.cameras]
        if len(ids) != len(set(ids)):
            raise LinelocError("duplicate_camera_id")

    @property
    def line_count(self) -> int:
        return sum(len(cam.lines) for cam in self.cameras)


def rotation(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]], dtype=np.float64)


def transform_points_many(points: np.ndarray, poses: np.ndarray) -> np.ndarray:
    """Vehicle-frame points (M x 2) moved into the map frame by each pose (N x 3); shape N x M x 2."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    poses = np.asarray(poses, dtype=np.float64).reshape(-1, 3)
    c = np.cos(poses[:, 2])[:, None]
    s = np.sin(poses[:, 2])[:, None]
    px = points[:, 0][None, :]
    py = points[:, 1][None, :]
    mx = poses[:, 0][:, None] + c * px - s * py
    my = poses[:, 1][:, None] + s * px + c * py
    return np.stack((mx, my), axis=-1)


def transform_points(points: np.ndarray, pose: Pose) -> np.ndarray:
    return transform_points_many(points, pose.as_array())[0]


def transform_to_map(line: Polyline, pose: Pose) -> Polyline:
    if line.frame is not Frame.VEHICLE:
        raise LinelocError("wrong_frame", expected=Frame.VEHICLE.value, got=line.frame.value)
    return Polyline(transform_points(line.points, pose), Frame.MAP)


def inverse_transform_to_vehicle(line: Polyline, pose: Pose) -> Polyline:
    if line.frame is not Frame.MAP:
        raise LinelocError("wrong_frame", expected=Frame.MAP.value, got=line.frame.value)
    local = (line.points - np.array([pose.x, pose.y])) @ rotation(pose.theta)
    return Polyline(local, Frame.VEHICLE)


def polyline_length(points: np.ndarray) -> float:
    return float(np.hypot(*np.diff(np.asarray(points), axis=0).T).sum())


def resample_equidistant(line: Polyline, spacing: float) -> Polyline:
    """Walk the polyline by arc length, emitting a point every `spacing` meters.

    The first input point is kept and the final, possibly shorter, segment ends on the last input point.
    """
    if spacing <= 0.0:
        raise LinelocError("invalid_spacing", spacing=spacing)
    seg = np.hypot(*np.diff(line.points, axis=0).T)
    arc = np.concatenate(([0.0], np.cumsum(seg)))
    total = float(arc[-1])
    if total < spacing - 1e-12:
        raise LinelocError("detection_too_short", length=total, spacing=spacing)
    steps = int(math.floor(total / spacing + 1e-9))
    targets = spacing * np.arange(steps + 1, dtype=np.float64)
    targets[-1] = min(targets[-1], total)
    if total - targets[-1] > 1e-9:
        targets = np.append(targets, total)
    xs = np.interp(targets, arc, line.points[:, 0])
    ys = np.interp(targets, arc, line.points[:, 1])
    return Polyline(np.column_stack((xs, ys)), line.frame)


def decompose_error(estimate: Pose, truth: Pose) -> Tuple[float, float, float]:
    """Longitudinal, lateral and angular error in the ground-truth heading frame."""
    dx = estimate.x - truth.x
    dy = estimate.y - truth.y
    c, s = math.cos(truth.theta), math.sin(truth.theta)
    e_lon = c * dx + s * dy
    e_lat = -s * dx + c * dy
    e_ang = normalize_angle(estimate.theta - truth.theta)
    return e_lon, e_lat, e_ang


def compose(pose: Pose, dx: float, dy: float, dtheta: float) -> Pose:
    """Apply a motion expressed in the frame of `pose`."""
    c, s = math.cos(pose.theta), math.sin(pose.theta)
    return Pose(pose.x + c * dx - s * dy, pose.y + s * dx + c * dy, pose.theta + dtheta)


def relative(previous: Pose, current: Pose) -> Tuple[float, float, float]:
    """Inverse of `compose`: motion from `previous` to `current` in the previous frame."""
    wx, wy = current.x - previous.x, current.y - previous.y
    c, s = math.cos(previous.theta), math.sin(previous.theta)
    return c * wx + s * wy, -s * wx + c * wy, normalize_angle(current.theta - previous.theta)
