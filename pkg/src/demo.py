"""Bundled demo world: two crossing roads with stop lines, a roundabout, and a 200 m route."""
from __future__ import annotations

import math
from typing import Dict, List, Tuple

import numpy as np

from geometry import Frame, Polyline, Pose
from probmap import VectorMap

LANE_HALF_WIDTH = 3.5
ROUNDABOUT_CENTER = (20.0, 7.25)
ISLAND_RADIUS = 4.5
RING_RADIUS = 13.5
DEMO_BOUNDS = (-95.0, -40.0, 60.0, 30.0)

DEMO_START = (-85.0, -1.75, 0.0)
DEMO_ROUTE: List[Dict[str, float]] = [
    {"kind": "straight", "length": 105.0, "speed": 5.0},
    {"kind": "arc", "length": 2.0 * math.pi * 9.0, "radius": 9.0, "speed": 4.0},
    {"kind": "straight", "length": 28.0, "speed": 5.0},
    {"kind": "reverse", "length": 15.0, "speed": 2.0},
]


def _circle(center: Tuple[float, float], radius: float, count: int = 96) -> np.ndarray:
    angles = np.linspace(0.0, 2.0 * math.pi, count, endpoint=False)
    return np.column_stack((center[0] + radius * np.cos(angles), center[1] + radius * np.sin(angles)))


def _rect(xmin: float, ymin: float, xmax: float, ymax: float) -> np.ndarray:
    return np.array([(xmin, ymin), (xmax, ymin), (xmax, ymax), (xmin, ymax)], dtype=np.float64)


def _segment(a: Tuple[float, float], b: Tuple[float, float]) -> Polyline:
    return Polyline(np.array([a, b], dtype=np.float64), Frame.MAP)


def demo_vector_map() -> VectorMap:
    lines: List[Polyline] = []
    for y in (-LANE_HALF_WIDTH, 0.0, LANE_HALF_WIDTH):
        lines.append(_segment((-90.0, y), (55.0, y)))
    for x in (-LANE_HALF_WIDTH, 0.0, LANE_HALF_WIDTH):
        lines.append(_segment((x, -35.0), (x, 25.0)))
    # stop lines across the eastbound lane give longitudinal references on the long straight
    for x in (-75.0, -55.0, -35.0, -15.0, 40.0):
        lines.append(_segment((x, -LANE_HALF_WIDTH), (x, 0.0)))
    for radius in (ISLAND_RADIUS, RING_RADIUS):
        ring = _circle(ROUNDABOUT_CENTER, radius)
        lines.append(Polyline(np.vstack((ring, ring[:1])), Frame.MAP))

    drivable = (
        _rect(-90.0, -LANE_HALF_WIDTH, 55.0, LANE_HALF_WIDTH),
        _rect(-LANE_HALF_WIDTH, -35.0, LANE_HALF_WIDTH, 25.0),
        _circle(ROUNDABOUT_CENTER, RING_RADIUS + 0.5, count=64),
    )
    return VectorMap(tuple(lines), drivable, DEMO_BOUNDS)


def demo_start() -> Pose:
    return Pose(*DEMO_START)
