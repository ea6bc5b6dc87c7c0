"""Particle filter over SE(2) poses: motion prediction, weighting, systematic resampling."""
from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Tuple

import numpy as np

from errors import LinelocError
from geometry import Measurement, Pose, normalize_angles
from observation import ObsParams, PreparedMeasurement, Variant, batch_log_likelihood, prepare_measurement
from probmap import Channel, ProbMap, free_pixels, lookup_many

logger = logging.getLogger(__name__)

# per-purpose random streams, keyed by (seed, iteration, stream)
STREAM_MOTION = 0
STREAM_RESAMPLE = 1
STREAM_INIT = 2


@dataclass(frozen=True)
class Particle:
    pose: Pose
    weight: float


@dataclass(frozen=True)
class MotionNoise:
    """Relative noise of the odometry motion model.

    sigma_linear scales the travelled distance and sigma_angular the heading change. sigma_heading
    (radians per metre) adds heading noise in proportion to the distance; 0 keeps the plain
    multiplicative model, where a straight drive adds no heading noise at all.
    """

    sigma_linear: float = 0.05
    sigma_angular: float = 0.05
    sigma_heading: float = 0.0

    def __post_init__(self) -> None:
        if min(self.sigma_linear, self.sigma_angular, self.sigma_heading) < 0.0:
            raise LinelocError("invalid_motion_noise")


@dataclass(frozen=True)
class OdomDelta:
    dx: float
    dy: float
    dtheta: float

    def __post_init__(self) -> None:
        if not all(math.isfinite(v) for v in (self.dx, self.dy, self.dtheta)):
            raise LinelocError("non_finite_odometry")


@dataclass(frozen=True)
class FilterConfig:
    particles: int = 1000
    variant: Variant = Variant.COMBINED
    ess_gating: bool = False
    workers: int = 1
    chunk_size: int = 256


@dataclass(frozen=True, eq=False)
class ParticleSet:
    poses: np.ndarray
    weights: np.ndarray
    seed: int
    iteration: int = 0
    degenerate: bool = False

    def __post_init__(self) -> None:
        if self.poses.ndim != 2 or self.poses.shape[1] != 3 or len(self.poses) < 1:
            raise LinelocError("invalid_particle_array")
        if self.weights.shape != (len(self.poses),):
            raise LinelocError("invalid_particle_array")
        if not (np.isfinite(self.weights).all() and (self.weights >= 0.0).all()):
            raise LinelocError("invalid_weights")
        self.poses.setflags(write=False)
        self.weights.setflags(write=False)

    def __len__(self) -> int:
        return len(self.poses)

    @property
    def particles(self) -> List[Particle]:
        return [Particle(Pose.from_array(p), float(w)) for p, w in zip(self.poses, self.weights)]

    def rng(self, stream: int) -> np.random.Generator:
        return np.random.default_rng([self.seed, self.iteration, stream])

    def same_as(self, other: "ParticleSet") -> bool:
        return (
            np.array_equal(self.poses, other.poses)
            and np.array_equal(self.weights, other.weights)
            and self.iteration == other.iteration
            and self.degenerate == other.degenerate
        )


@dataclass(frozen=True)
class StepTimings:
    transform_ms: float = 0.0
    shift_ms: float = 0.0
    angular_ms: float = 0.0
    resample_ms: float = 0.0
    total_ms: float = 0.0


@dataclass(frozen=True)
class StepResult:
    particles: ParticleSet
    pose: Pose
    timings: StepTimings
    degenerate: bool
    antipodal: bool
    resampled: bool


def _uniform_weights(n: int) -> np.ndarray:
    return np.full(n, 1.0 / n)


def init_gaussian(pose0: Pose, sigmas: Tuple[float, float, float], n: int, seed: int) -> ParticleSet:
    if n < 1:
        raise LinelocError("invalid_particle_count", count=n)
    rng = np.random.default_rng([seed, 0, STREAM_INIT])
    noise = rng.normal(0.0, 1.0, size=(n, 3)) * np.asarray(sigmas, dtype=np.float64)
    poses = pose0.as_array()[None, :] + noise
    poses[:, 2] = normalize_angles(poses[:, 2])
    return ParticleSet(poses, _uniform_weights(n), seed)


def init_uniform(pmap: ProbMap, n: int, seed: int) -> ParticleSet:
    if n < 1:
        raise LinelocError("invalid_particle_count", count=n)
    cols, rows = free_pixels(pmap)
    if len(cols) == 0:
        raise LinelocError("no_free_pixels")
    rng = np.random.default_rng([seed, 0, STREAM_INIT])
    pick = rng.integers(0, len(cols), size=n)
    # jitter stays strictly inside the chosen pixel so nearest-pixel lookup returns it
    jitter = rng.uniform(-0.49, 0.49, size=(n, 2)) * pmap.meta.resolution
    xy = pmap.meta.to_world(cols[pick], rows[pick]) + jitter
    theta = normalize_angles(rng.uniform(-math.pi, math.pi, size=n))
    poses = np.column_stack((xy, theta))
    return ParticleSet(poses, _uniform_weights(n), seed)


def predict(pset: ParticleSet, delta: OdomDelta, noise: MotionNoise) -> ParticleSet:
    """Heading first, then translation along the new heading; noise scales with the motion."""
    rng = pset.rng(STREAM_MOTION)
    n = len(pset)
    angular = rng.normal(0.0, 1.0, size=n) * noise.sigma_angular
    linear = rng.normal(0.0, 1.0, size=n) * noise.sigma_linear
    step = math.hypot(delta.dx, delta.dy)
    if delta.dx < 0.0:
        step = -step

    x, y, theta = pset.poses[:, 0], pset.poses[:, 1], pset.poses[:, 2]
    heading = delta.dtheta + delta.dtheta * angular
    if noise.sigma_heading > 0.0:
        heading = heading + abs(step) * noise.sigma_heading * rng.normal(0.0, 1.0, size=n)
    theta = normalize_angles(theta + heading)
    d = step + step * linear
    poses = np.column_stack((x + d * np.cos(theta), y + d * np.sin(theta), theta))
    return replace(pset, poses=poses, weights=pset.weights.copy())


def _chunk_log_likelihood(
    prepared: PreparedMeasurement,
    poses: np.ndarray,
    pmap: ProbMap,
    params: ObsParams,
    variant: Variant,
    cfg: FilterConfig,
    timings: Optional[Dict[str, float]],
) -> np.ndarray:
    if cfg.workers <= 1 or len(poses) <= cfg.chunk_size:
        return batch_log_likelihood(prepared, poses, pmap, params, variant, timings)
    starts = range(0, len(poses), cfg.chunk_size)
    chunk_timings: List[Dict[str, float]] = [{} for _ in starts]

    def run(index: int, start: int) -> np.ndarray:
        chunk = poses[start : start + cfg.chunk_size]
        return batch_log_likelihood(prepared, chunk, pmap, params, variant, chunk_timings[index])

    started = time.perf_counter()
    with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
        parts = list(pool.map(run, range(len(starts)), starts))
    wall = time.perf_counter() - started
    if timings is not None:
        # thread times are summed per part, then scaled down to the wall time of the pool
        summed: Dict[str, float] = {}
        for part in chunk_timings:
            for key, value in part.items():
                summed[key] = summed.get(key, 0.0) + value
        scale = min(1.0, wall / max(sum(summed.values()), 1e-12))
        for key, value in summed.items():
            timings[key] = timings.get(key, 0.0) + value * scale
    return np.concatenate(parts)


def weigh(
    pset: ParticleSet,
    z: Measurement,
    pmap: ProbMap,
    params: ObsParams,
    cfg: FilterConfig = FilterConfig(),
    timings: Optional[Dict[str, float]] = None,
    prepared: Optional[PreparedMeasurement] = None,
) -> ParticleSet:
    if prepared is None:
        prepared = prepare_measurement(z, params.spacing)
    log_likelihood = _chunk_log_likelihood(prepared, pset.poses, pmap, params, Variant(cfg.variant), cfg, timings)
    drivable = lookup_many(pmap, Channel.OCCUPANCY, pset.poses[:, :2]) > 0.5
    with np.errstate(divide="ignore"):
        log_raw = np.log(pset.weights) + log_likelihood
    log_raw = np.where(drivable, log_raw, -np.inf)
    best = log_raw.max()
    n = len(pset)
    if not np.isfinite(best):
        logger.warning("all particle weights vanished at iteration %d; resetting to uniform", pset.iteration)
        return replace(pset, weights=_uniform_weights(n), degenerate=True)
    raw = np.exp(log_raw - best)
    return replace(pset, weights=raw / raw.sum(), degenerate=False)


def effective_sample_size(pset: ParticleSet) -> float:
    return float(1.0 / np.square(pset.weights).sum())


def systematic_resample(pset: ParticleSet, u0: Optional[float] = None) -> ParticleSet:
    n = len(pset)
    if abs(float(pset.weights.sum()) - 1.0) > 1e-6:
        raise LinelocError("weights_not_normalized", total=float(pset.weights.sum()))
    if u0 is None:
        u0 = float(pset.rng(STREAM_RESAMPLE).uniform(0.0, 1.0 / n))
    indices = resample_indices(pset.weights, u0)
    return replace(pset, poses=pset.poses[indices].copy(), weights=_uniform_weights(n))


def resample_indices(weights: np.ndarray, u0: float, count: Optional[int] = None) -> np.ndarray:
    """Indices picked by the comb u0 + j / count, j = 0 .. count - 1, against the cumulative weights."""
    count = len(weights) if count is None else count
    comb = u0 + np.arange(count) / count
    return np.minimum(np.searchsorted(np.cumsum(weights), comb, side="right"), len(weights) - 1)


def estimate(pset: ParticleSet) -> Tuple[Pose, bool]:
    """Weighted mean position and weighted circular mean heading.

    The flag is set when the heading resultant vanishes and the max-weight particle's heading is used.
    """
    w = pset.weights / pset.weights.sum()
    x = float(np.dot(w, pset.poses[:, 0]))
    y = float(np.dot(w, pset.poses[:, 1]))
    sin_sum = float(np.dot(w, np.sin(pset.poses[:, 2])))
    cos_sum = float(np.dot(w, np.cos(pset.poses[:, 2])))
    if math.hypot(sin_sum, cos_sum) < 1e-12:
        logger.warning("heading resultant vanished; using the heaviest particle")
        return Pose(x, y, float(pset.poses[int(np.argmax(w)), 2])), True
    return Pose(x, y, math.atan2(sin_sum, cos_sum)), False


def step(
    pset: ParticleSet,
    delta: OdomDelta,
    z: Measurement,
    pmap: ProbMap,
    params: ObsParams,
    noise: MotionNoise,
    cfg: FilterConfig = FilterConfig(),
) -> StepResult:
    started = time.perf_counter()
    parts: Dict[str, float] = {}

    predicted = predict(pset, delta, noise)
    weighted = weigh(predicted, z, pmap, params, cfg, timings=parts)
    pose, antipodal = estimate(weighted)

    resample_started = time.perf_counter()
    resampled = not cfg.ess_gating or effective_sample_size(weighted) < len(weighted) / 2.0
    out = systematic_resample(weighted) if resampled else weighted
    resample_s = time.perf_counter() - resample_started

    out = replace(out, iteration=pset.iteration + 1)
    total_s = time.perf_counter() - started
    timings = StepTimings(
        transform_ms=parts.get("transform", 0.0) * 1e3,
        shift_ms=parts.get("shift", 0.0) * 1e3,
        angular_ms=parts.get("angular", 0.0) * 1e3,
        resample_ms=resample_s * 1e3,
        total_ms=total_s * 1e3,
    )
    return StepResult(out, pose, timings, weighted.degenerate, antipodal, resampled)
