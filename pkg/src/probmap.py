"""Multichannel probability raster compiled from a vector line map.

Channels: line raster, shift likelihood, distance transform (meters) and drivable occupancy.
"""
from __future__ import annotations

import json
import logging
import math
import struct
from dataclasses import dataclass
from enum import IntEnum
from pathlib import Path
from typing import Any, Dict, Sequence, Tuple

import numpy as np
from scipy.ndimage import distance_transform_edt
import shapely
from shapely.geometry import LinearRing, Polygon

from errors import LinelocError, MapFormatError
from geometry import Frame, Point2, Polyline

logger = logging.getLogger(__name__)

MAGIC = b"LFM1"
FORMAT_VERSION = 1
HEADER = struct.Struct("<4sHIIdddddB")
BOUNDS_MARGIN = 1.0


class Channel(IntEnum):
    LINE_RASTER = 1
    SHIFT = 2
    DIST = 3
    OCCUPANCY = 4


Bounds = Tuple[float, float, float, float]


@dataclass(frozen=True, eq=False)
class VectorMap:
    lines: Tuple[Polyline, ...]
    drivable: Tuple[np.ndarray, ...]
    bounds: Bounds

    def __post_init__(self) -> None:
        xmin, ymin, xmax, ymax = self.bounds
        if not (xmin < xmax and ymin < ymax):
            raise LinelocError("invalid_bounds", bounds=list(self.bounds))
        for line in self.lines:
            if line.frame is not Frame.MAP:
                raise LinelocError("wrong_frame", expected=Frame.MAP.value, got=line.frame.value)
            if not _inside(line.points, self.bounds):
                raise LinelocError("feature_outside_bounds")
        rings = []
        for ring in self.drivable:
            ring = np.asarray(ring, dtype=np.float64).reshape(-1, 2)
            if len(ring) < 3 or not LinearRing(ring).is_simple:
                raise LinelocError("polygon_not_simple")
            if not _inside(ring, self.bounds):
                raise LinelocError("feature_outside_bounds")
            rings.append(ring)
        object.__setattr__(self, "drivable", tuple(rings))


def _inside(points: np.ndarray, bounds: Bounds) -> bool:
    xmin, ymin, xmax, ymax = bounds
    return bool(
        (points[:, 0] >= xmin).all()
        and (points[:, 0] <= xmax).all()
        and (points[:, 1] >= ymin).all()
        and (points[:, 1] <= ymax).all()
    )


def feature_bounds(lines: Sequence[Polyline], drivable: Sequence[np.ndarray], margin: float = BOUNDS_MARGIN) -> Bounds:
    chunks = [line.points for line in lines] + [np.asarray(r, dtype=np.float64).reshape(-1, 2) for r in drivable]
    if not chunks:
        raise LinelocError("empty_vector_map")
    pts = np.vstack(chunks)
    return (
        float(pts[:, 0].min()) - margin,
        float(pts[:, 1].min()) - margin,
        float(pts[:, 0].max()) + margin,
        float(pts[:, 1].max()) + margin,
    )


def load_vector_map(path: Path) -> VectorMap:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise LinelocError("malformed_vector_map", detail=str(exc)) from exc
    return parse_vector_map(data)


def parse_vector_map(data: Dict[str, Any]) -> VectorMap:
    if not isinstance(data, dict):
        raise LinelocError("malformed_vector_map", detail="top level must be an object")
    try:
        lines = tuple(Polyline.from_points(item["points"], Frame.MAP) for item in data.get("lines", []))
        drivable = tuple(np.array(item["ring"], dtype=np.float64) for item in data.get("drivable", []))
        bounds = data.get("bounds")
        if bounds is None:
            bounds = feature_bounds(lines, drivable)
        xmin, ymin, xmax, ymax = (float(b) for b in bounds)
    except LinelocError:
        raise
    except (KeyError, TypeError, IndexError, ValueError) as exc:
        raise LinelocError("malformed_vector_map", detail=str(exc)) from exc
    return VectorMap(lines, drivable, (xmin, ymin, xmax, ymax))


def dump_vector_map(vmap: VectorMap) -> Dict[str, Any]:
    return {
        "lines": [{"points": line.points.tolist()} for line in vmap.lines],
        "drivable": [{"ring": ring.tolist()} for ring in vmap.drivable],
        "bounds": list(vmap.bounds),
    }


@dataclass(frozen=True)
class MapMeta:
    width: int
    height: int
    resolution: float
    origin: Point2

    def __post_init__(self) -> None:
        if self.resolution <= 0.0 or not math.isfinite(self.resolution):
            raise LinelocError("invalid_resolution", resolution=self.resolution)
        if self.width < 1 or self.height < 1:
            raise LinelocError("invalid_raster_size", width=self.width, height=self.height)

    @classmethod
    def covering(cls, bounds: Bounds, resolution: float) -> "MapMeta":
        xmin, ymin, xmax, ymax = bounds
        width = int(math.ceil((xmax - xmin) / resolution - 1e-9)) + 1
        height = int(math.ceil((ymax - ymin) / resolution - 1e-9)) + 1
        return cls(width, height, resolution, Point2(xmin, ymin))

    def covers(self, bounds: Bounds) -> bool:
        xmin, ymin, xmax, ymax = bounds
        half = self.resolution / 2.0
        return (
            xmin >= self.origin.x - half
            and ymin >= self.origin.y - half
            and xmax <= self.origin.x + (self.width - 0.5) * self.resolution
            and ymax <= self.origin.y + (self.height - 0.5) * self.resolution
        )

    def to_pixel(self, xy: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        xy = np.asarray(xy, dtype=np.float64)
        col = np.floor((xy[..., 0] - self.origin.x) / self.resolution + 0.5).astype(np.int64)
        row = np.floor((xy[..., 1] - self.origin.y) / self.resolution + 0.5).astype(np.int64)
        return col, row

    def to_world(self, col: np.ndarray, row: np.ndarray) -> np.ndarray:
        x = self.origin.x + np.asarray(col, dtype=np.float64) * self.resolution
        y = self.origin.y + np.asarray(row, dtype=np.float64) * self.resolution
        return np.stack((x, y), axis=-1)

    def pixel_centers(self) -> Tuple[np.ndarray, np.ndarray]:
        xs = self.origin.x + np.arange(self.width, dtype=np.float64) * self.resolution
        ys = self.origin.y + np.arange(self.height, dtype=np.float64) * self.resolution
        return np.meshgrid(xs, ys)


@dataclass(frozen=True, eq=False)
class ProbMap:
    meta: MapMeta
    line_raster: np.ndarray
    shift: np.ndarray
    dist: np.ndarray
    occupancy: np.ndarray
    sigma_shift: float
    alpha: float

    def __post_init__(self) -> None:
        shape = (self.meta.height, self.meta.width)
        for channel in Channel:
            data = self.channel(channel)
            if data.shape != shape:
                raise MapFormatError("channel_shape_mismatch", channel=channel.name, shape=list(data.shape))
            data.setflags(write=False)

    def channel(self, channel: Channel) -> np.ndarray:
        return {
            Channel.LINE_RASTER: self.line_raster,
            Channel.SHIFT: self.shift,
            Channel.DIST: self.dist,
            Channel.OCCUPANCY: self.occupancy,
        }[channel]

    def neutral(self, channel: Channel) -> float:
        if channel is Channel.SHIFT:
            return 1.0 / self.alpha
        if channel is Channel.DIST:
            return math.inf
        return 0.0

    @property
    def shift_peak(self) -> float:
        return 1.0 / (2.0 * math.pi * self.sigma_shift ** 2)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ProbMap):
            return NotImplemented
        return (
            self.meta == other.meta
            and self.sigma_shift == other.sigma_shift
            and self.alpha == other.alpha
            and all(np.array_equal(self.channel(c), other.channel(c)) for c in Channel)
        )

    __hash__ = None  # type: ignore[assignment]


def _segment_cells(u0: float, v0: float, u1: float, v1: float) -> Tuple[np.ndarray, np.ndarray]:
    # u, v are continuous pixel coordinates; cell k spans [k - 0.5, k + 0.5).
    # The cell only changes at half-integer crossings.
    du, dv = u1 - u0, v1 - v0
    ts = [np.array([0.0, 1.0])]
    for start, delta in ((u0, du), (v0, dv)):
        if delta == 0.0:
            continue
        lo, hi = sorted((start, start + delta))
        edges = np.arange(math.ceil(lo - 0.5), math.floor(hi - 0.5) + 1, dtype=np.float64) + 0.5
        ts.append((edges - start) / delta)
    t = np.unique(np.clip(np.concatenate(ts), 0.0, 1.0))
    t = np.concatenate((t, (t[:-1] + t[1:]) / 2.0))
    cols = np.floor(u0 + t * du + 0.5).astype(np.int64)
    rows = np.floor(v0 + t * dv + 0.5).astype(np.int64)
    return cols, rows


def rasterize_lines(vmap: VectorMap, meta: MapMeta) -> np.ndarray:
    raster = np.zeros((meta.height, meta.width), dtype=np.float64)
    for line in vmap.lines:
        u = (line.points[:, 0] - meta.origin.x) / meta.resolution
        v = (line.points[:, 1] - meta.origin.y) / meta.resolution
        cells = [_segment_cells(u[i], v[i], u[i + 1], v[i + 1]) for i in range(len(u) - 1)]
        cols = np.concatenate([c for c, _ in cells])
        rows = np.concatenate([r for _, r in cells])
        if cols.min() < 0 or rows.min() < 0 or cols.max() >= meta.width or rows.max() >= meta.height:
            raise LinelocError("line_outside_raster")
        raster[rows, cols] = 1.0
    return raster


def build_distance_channel(line_raster: np.ndarray, meta: MapMeta) -> np.ndarray:
    """Exact Euclidean distance (meters) from each pixel center to the nearest line pixel center."""
    features = np.asarray(line_raster) > 0.5
    if not features.any():
        raise LinelocError("no_reference_features")
    return distance_transform_edt(~features) * meta.resolution


def build_shift_channel(dist: np.ndarray, meta: MapMeta, sigma_shift: float, alpha: float) -> np.ndarray:
    if not sigma_shift > 0.0:
        raise LinelocError("invalid_sigma_shift", value=sigma_shift)
    if not alpha > 0.0:
        raise LinelocError("invalid_alpha", value=alpha)
    peak = 1.0 / (2.0 * math.pi * sigma_shift ** 2)
    dist = np.asarray(dist, dtype=np.float64)
    return peak * np.exp(-(dist ** 2) / (2.0 * sigma_shift ** 2)) + 1.0 / alpha


def build_occupancy_channel(vmap: VectorMap, meta: MapMeta) -> np.ndarray:
    occupancy = np.zeros((meta.height, meta.width), dtype=np.float64)
    if not vmap.drivable:
        logger.warning("vector map has no drivable polygons; occupancy channel is empty")
        return occupancy
    xs, ys = meta.pixel_centers()
    for ring in vmap.drivable:
        col, row = meta.to_pixel(ring)
        c0, c1 = max(int(col.min()) - 1, 0), min(int(col.max()) + 2, meta.width)
        r0, r1 = max(int(row.min()) - 1, 0), min(int(row.max()) + 2, meta.height)
        if c0 >= c1 or r0 >= r1:
            continue
        window = shapely.contains_xy(Polygon(ring), xs[r0:r1, c0:c1], ys[r0:r1, c0:c1])
        occupancy[r0:r1, c0:c1][window] = 1.0
    return occupancy


def compile_map(vmap: VectorMap, meta: MapMeta, sigma_shift: float, alpha: float) -> ProbMap:
    """Precompute every channel; stored values are float32 like the on-disk format."""
    if not meta.covers(vmap.bounds):
        raise LinelocError("map_does_not_cover_bounds")
    line_raster = rasterize_lines(vmap, meta)
    dist = build_distance_channel(line_raster, meta)
    shift = build_shift_channel(dist, meta, sigma_shift, alpha)
    occupancy = build_occupancy_channel(vmap, meta)
    pmap = ProbMap(
        meta=meta,
        line_raster=line_raster.astype(np.float32),
        shift=shift.astype(np.float32),
        dist=dist.astype(np.float32),
        occupancy=occupancy.astype(np.float32),
        sigma_shift=float(sigma_shift),
        alpha=float(alpha),
    )
    logger.info(
        "compiled map %dx%d at %.3f m/px (%d line pixels, %d drivable pixels)",
        meta.width,
        meta.height,
        meta.resolution,
        int(line_raster.sum()),
        int(occupancy.sum()),
    )
    return pmap


def serialize(pmap: ProbMap) -> bytes:
    meta = pmap.meta
    parts = [
        HEADER.pack(
            MAGIC,
            FORMAT_VERSION,
            meta.width,
            meta.height,
            meta.resolution,
            meta.origin.x,
            meta.origin.y,
            pmap.sigma_shift,
            pmap.alpha,
            len(Channel),
        )
    ]
    for channel in Channel:
        parts.append(struct.pack("<B", int(channel)))
        parts.append(np.ascontiguousarray(pmap.channel(channel), dtype="<f4").tobytes())
    return b"".join(parts)


def deserialize(blob: bytes) -> ProbMap:
    if len(blob) < 4:
        raise MapFormatError("truncated")
    if blob[:4] != MAGIC:
        raise MapFormatError("bad_magic", magic=blob[:4].decode("latin-1"))
    if len(blob) < HEADER.size:
        raise MapFormatError("truncated")
    _, version, width, height, res, ox, oy, sigma, alpha, count = HEADER.unpack_from(blob, 0)
    if version != FORMAT_VERSION:
        raise MapFormatError("version_mismatch", version=version)
    meta = MapMeta(width, height, res, Point2(ox, oy))
    nbytes = width * height * 4
    offset = HEADER.size
    channels: Dict[Channel, np.ndarray] = {}
    for _ in range(count):
        if offset + 1 > len(blob):
            raise MapFormatError("truncated")
        channel_id = blob[offset]
        offset += 1
        try:
            channel = Channel(channel_id)
        except ValueError:
            raise MapFormatError("unknown_channel", channel_id=channel_id) from None
        if offset + nbytes > len(blob):
            raise MapFormatError("truncated")
        data = np.frombuffer(blob, dtype="<f4", count=width * height, offset=offset)
        channels[channel] = data.reshape(height, width).astype(np.float32)
        offset += nbytes
    missing = [c.name for c in Channel if c not in channels]
    if missing:
        raise MapFormatError("missing_channel", channels=missing)
    return ProbMap(
        meta=meta,
        line_raster=channels[Channel.LINE_RASTER],
        shift=channels[Channel.SHIFT],
        dist=channels[Channel.DIST],
        occupancy=channels[Channel.OCCUPANCY],
        sigma_shift=sigma,
        alpha=alpha,
    )


def save(pmap: ProbMap, path: Path) -> None:
    Path(path).write_bytes(serialize(pmap))


def load(path: Path) -> ProbMap:
    return deserialize(Path(path).read_bytes())


def lookup_many(pmap: ProbMap, channel: Channel, xy: np.ndarray) -> np.ndarray:
    """Nearest-pixel lookup for an array of map-frame points (shape (..., 2))."""
    meta = pmap.meta
    col, row = meta.to_pixel(xy)
    inside = (col >= 0) & (col < meta.width) & (row >= 0) & (row < meta.height)
    flat = np.where(inside, row * meta.width + col, 0)
    values = pmap.channel(channel).ravel()[flat].astype(np.float64)
    return np.where(inside, values, pmap.neutral(channel))


def lookup(pmap: ProbMap, channel: Channel, point: Point2) -> float:
    return float(lookup_many(pmap, channel, np.array([point.x, point.y]))[()])


def channel_stats(pmap: ProbMap) -> Dict[str, Dict[str, float]]:
    return {
        channel.name.lower(): {
            "min": float(pmap.channel(channel).min()),
            "max": float(pmap.channel(channel).max()),
        }
        for channel in Channel
    }


def free_pixels(pmap: ProbMap, threshold: float = 0.5) -> Tuple[np.ndarray, np.ndarray]:
    rows, cols = np.nonzero(pmap.occupancy > threshold)
    return cols, rows
