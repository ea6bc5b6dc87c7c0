"""Tests for observation module."""
from __future__ import annotations

import math
import sys
from pathlib import Path
from typing import List

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from geometry import CameraDetections, Frame, Measurement, Polyline, Pose, transform_to_map
from observation import (
    ObsParams,
    Variant,
    angular_likelihood,
    batch_log_likelihood,
    camera_likelihood,
    measurement_likelihood,
    model_variant,
    prepare_lines,
    prepare_measurement,
    segment_gamma,
    shift_likelihood,
)
from probmap import MapMeta, ProbMap, VectorMap, compile_map

SIGMA_SHIFT = 0.2
ALPHA = 10.0
PARAMS = ObsParams(sigma_angle=0.1, spacing=0.5)


@pytest.fixture(scope="module")
def straight_map() -> ProbMap:
    line = Polyline(np.array([(-20.0, 0.0), (20.0, 0.0)]), Frame.MAP)
    road = np.array([(-20.0, -4.0), (20.0, -4.0), (20.0, 4.0), (-20.0, 4.0)])
    vmap = VectorMap((line,), (road,), (-25.0, -10.0, 25.0, 10.0))
    return compile_map(vmap, MapMeta.covering(vmap.bounds, 0.05), SIGMA_SHIFT, ALPHA)


def eq2(distance: float) -> float:
    return math.exp(-(distance ** 2) / (2.0 * SIGMA_SHIFT ** 2)) / (2.0 * math.pi * SIGMA_SHIFT ** 2) + 1.0 / ALPHA


def map_points(points) -> np.ndarray:
    return np.array(points, dtype=np.float64)


def vehicle_line(points) -> Polyline:
    return Polyline(np.array(points, dtype=np.float64), Frame.VEHICLE)


def single_camera(*lines: Polyline) -> Measurement:
    return Measurement((CameraDetections(0, tuple(lines)),))


class TestShiftLikelihood:
    def test_points_on_reference(self, straight_map: ProbMap) -> None:
        value = shift_likelihood(map_points([(0.0, 0.0), (0.5, 0.0), (1.0, 0.0)]), straight_map)
        assert value == pytest.approx(straight_map.shift_peak + 1.0 / ALPHA, rel=1e-6)

    def test_points_out_of_bounds(self, straight_map: ProbMap) -> None:
        assert shift_likelihood(map_points([(100.0, 100.0), (101.0, 100.0)]), straight_map) == 1.0 / ALPHA

    def test_known_offsets(self, straight_map: ProbMap) -> None:
        offsets = [0.07, 0.13, 0.21, 0.26, 0.33]
        points = map_points([(0.5 * i, y) for i, y in enumerate(offsets)])
        expected = sum(eq2(y) for y in offsets) / len(offsets)
        assert shift_likelihood(points, straight_map) == pytest.approx(expected, rel=0.02)

    def test_empty_line_raises(self, straight_map: ProbMap) -> None:
        with pytest.raises(ValueError, match="empty_line"):
            shift_likelihood(np.zeros((0, 2)), straight_map)


class TestSegmentGamma:
    def test_parallel(self) -> None:
        assert segment_gamma(0.3, 0.3, 0.5) == 0.0

    def test_thirty_degrees(self) -> None:
        assert segment_gamma(0.0, 0.5, 1.0) == pytest.approx(math.pi / 6.0)

    def test_clamped(self) -> None:
        assert segment_gamma(0.0, 2.0, 1.0) == pytest.approx(math.pi / 2.0)

    def test_out_of_map_signals_skip(self) -> None:
        assert segment_gamma(math.inf, 0.2, 0.5) is None


class TestAngularLikelihood:
    def test_parallel_segment_is_peak(self, straight_map: ProbMap) -> None:
        value = angular_likelihood(map_points([(0.0, 0.5), (0.5, 0.5), (1.0, 0.5)]), straight_map, PARAMS)
        assert value == pytest.approx(PARAMS.angle_peak, rel=1e-12)

    def test_one_sigma_misalignment(self, straight_map: ProbMap) -> None:
        length = 0.5 / math.sin(PARAMS.sigma_angle)
        points = map_points([(0.0, 0.5), (math.sqrt(length ** 2 - 0.25), 1.0)])
        value = angular_likelihood(points, straight_map, PARAMS)
        assert value == pytest.approx(PARAMS.angle_peak * math.exp(-0.5), rel=1e-6)

    def test_crossing_at_thirty_degrees(self, straight_map: ProbMap) -> None:
        params = ObsParams(sigma_angle=0.6, spacing=0.5)
        direction = np.array([math.cos(math.pi / 6.0), math.sin(math.pi / 6.0)])
        points = np.array([t * direction for t in (-0.5, 0.0, 0.5)])
        gamma = math.pi / 6.0
        expected = math.exp(-(gamma ** 2) / (2.0 * 0.36)) / (0.6 * math.sqrt(2.0 * math.pi))
        assert angular_likelihood(points, straight_map, params) == pytest.approx(expected, rel=0.05)

    def test_all_segments_off_map(self, straight_map: ProbMap) -> None:
        assert angular_likelihood(map_points([(100.0, 0.0), (101.0, 0.0)]), straight_map, PARAMS) == 0.0

    def test_needs_two_points(self, straight_map: ProbMap) -> None:
        with pytest.raises(ValueError, match="angular_needs_two_points"):
            angular_likelihood(map_points([(0.0, 0.0)]), straight_map, PARAMS)

    def test_parallel_maximizes_over_rotations(self, straight_map: ProbMap) -> None:
        base = np.array([(-1.0, 0.0), (-0.5, 0.0), (0.0, 0.0), (0.5, 0.0), (1.0, 0.0)])
        center = np.array([0.0, 1.5])
        angles = np.linspace(-math.pi / 2.0, math.pi / 2.0, 181)
        values = []
        for angle in angles:
            c, s = math.cos(angle), math.sin(angle)
            values.append(angular_likelihood(base @ np.array([[c, s], [-s, c]]) + center, straight_map, PARAMS))
        values = np.array(values)
        parallel = int(np.argmin(np.abs(angles)))
        assert values[parallel] == values.max()
        assert (values[np.abs(angles) > math.radians(2.5)] < values.max()).all()


class TestCameraLikelihood:
    def test_no_detections_is_neutral(self, straight_map: ProbMap) -> None:
        assert camera_likelihood([], straight_map, PARAMS).combined == 1.0

    def test_perfect_line_is_product_of_peaks(self, straight_map: ProbMap) -> None:
        breakdown = camera_likelihood([map_points([(0.0, 0.0), (0.5, 0.0), (1.0, 0.0)])], straight_map, PARAMS)
        expected = (straight_map.shift_peak + 1.0 / ALPHA) * PARAMS.angle_peak
        assert breakdown.combined == pytest.approx(expected, rel=1e-6)
        assert breakdown.combined == breakdown.shift_sum * breakdown.angle_sum

    def test_false_positive_ordering(self, straight_map: ProbMap) -> None:
        perfect = map_points([(0.0, 0.0), (0.5, 0.0), (1.0, 0.0)])
        false_positive = map_points([(3.0, 1.0), (3.3, 1.4), (3.6, 1.8)])
        alone = camera_likelihood([false_positive], straight_map, PARAMS).combined
        mixed = camera_likelihood([perfect, false_positive], straight_map, PARAMS).combined
        both = camera_likelihood([perfect, perfect], straight_map, PARAMS).combined
        assert alone < mixed < both


def random_measurement(rng: np.random.Generator, cameras: int) -> Measurement:
    detections = []
    for cam in range(cameras):
        lines: List[Polyline] = []
        for _ in range(int(rng.integers(0, 3))):
            start = rng.uniform(-4.0, 4.0, size=2)
            heading = rng.uniform(-math.pi, math.pi)
            length = rng.uniform(0.6, 3.0)
            end = start + length * np.array([math.cos(heading), math.sin(heading)])
            lines.append(vehicle_line([start, end]))
        detections.append(CameraDetections(cam, tuple(lines)))
    return Measurement(tuple(detections))


def direct_product(z: Measurement, pose: Pose, pmap: ProbMap) -> float:
    product = 1.0
    for cam in z.cameras:
        lines = [transform_to_map(line, pose) for line in prepare_lines(cam.lines, PARAMS.spacing)]
        product *= camera_likelihood(lines, pmap, PARAMS).combined
    return product


class TestMeasurementLikelihood:
    def test_single_camera_equals_camera_likelihood(self, straight_map: ProbMap) -> None:
        line = vehicle_line([(0.0, 0.2), (2.0, 0.3)])
        pose = Pose(1.0, 0.1, 0.05)
        value, _ = measurement_likelihood(single_camera(line), pose, straight_map, PARAMS)
        assert value == pytest.approx(direct_product(single_camera(line), pose, straight_map), rel=1e-12)

    def test_two_identical_cameras_square(self, straight_map: ProbMap) -> None:
        line = vehicle_line([(0.0, 0.2), (2.0, 0.3)])
        pose = Pose(1.0, 0.1, 0.05)
        one, _ = measurement_likelihood(single_camera(line), pose, straight_map, PARAMS)
        z = Measurement((CameraDetections(0, (line,)), CameraDetections(1, (line,))))
        two, _ = measurement_likelihood(z, pose, straight_map, PARAMS)
        assert two == pytest.approx(one ** 2, rel=1e-12)

    def test_log_fusion_equals_direct_product(self, straight_map: ProbMap) -> None:
        rng = np.random.default_rng(7)
        for _ in range(1000):
            z = random_measurement(rng, 4)
            pose = Pose(float(rng.uniform(-10.0, 10.0)), float(rng.uniform(-2.0, 2.0)), float(rng.uniform(-math.pi, math.pi)))
            value, _ = measurement_likelihood(z, pose, straight_map, PARAMS)
            assert value == pytest.approx(direct_product(z, pose, straight_map), rel=1e-12, abs=0.0)

    def test_short_detections_are_skipped(self, straight_map: ProbMap) -> None:
        value, breakdown = measurement_likelihood(
            single_camera(vehicle_line([(0.0, 0.0), (0.2, 0.0)])), Pose(0.0, 0.0, 0.0), straight_map, PARAMS
        )
        assert value == 1.0
        assert breakdown.per_camera == (1.0,)


class TestLikelihoodProperties:
    OFFSET = np.array([7.5, -2.5])

    @pytest.fixture(scope="class")
    def moved_map(self) -> ProbMap:
        line = Polyline(np.array([(-20.0, 0.0), (20.0, 0.0)]) + self.OFFSET, Frame.MAP)
        road = np.array([(-20.0, -4.0), (20.0, -4.0), (20.0, 4.0), (-20.0, 4.0)]) + self.OFFSET
        bounds = (-25.0 + 7.5, -10.0 - 2.5, 25.0 + 7.5, 10.0 - 2.5)
        vmap = VectorMap((line,), (road,), bounds)
        return compile_map(vmap, MapMeta.covering(vmap.bounds, 0.05), SIGMA_SHIFT, ALPHA)

    def test_translation_invariance(self, straight_map: ProbMap, moved_map: ProbMap) -> None:
        rng = np.random.default_rng(23)
        for _ in range(200):
            z = random_measurement(rng, 4)
            x, y, theta = rng.uniform(-8.0, 8.0), rng.uniform(-2.0, 2.0), rng.uniform(-math.pi, math.pi)
            moved_pose = Pose(float(x + self.OFFSET[0]), float(y + self.OFFSET[1]), float(theta))
            for variant in Variant:
                here = model_variant(z, Pose(float(x), float(y), float(theta)), straight_map, PARAMS, variant)
                there = model_variant(z, moved_pose, moved_map, PARAMS, variant)
                assert there == pytest.approx(here, rel=0.02)

    def test_in_bounds_scenarios_are_strictly_positive(self, straight_map: ProbMap) -> None:
        rng = np.random.default_rng(29)
        for _ in range(500):
            z = random_measurement(rng, 4)
            pose = Pose(float(rng.uniform(-12.0, 12.0)), float(rng.uniform(-2.0, 2.0)), float(rng.uniform(-math.pi, math.pi)))
            for variant in Variant:
                assert model_variant(z, pose, straight_map, PARAMS, variant) > 0.0


class TestModelVariant:
    def test_combined_factorizes(self, straight_map: ProbMap) -> None:
        z = single_camera(vehicle_line([(0.0, 0.2), (2.0, 0.3)]), vehicle_line([(1.0, 1.0), (1.5, 2.0)]))
        pose = Pose(0.5, -0.1, 0.1)
        shift = model_variant(z, pose, straight_map, PARAMS, Variant.SHIFT)
        angular = model_variant(z, pose, straight_map, PARAMS, Variant.ANGULAR)
        combined = model_variant(z, pose, straight_map, PARAMS, Variant.COMBINED)
        assert combined == pytest.approx(shift * angular, rel=1e-12)

    def test_perfect_detection_maximizes_all_variants(self, straight_map: ProbMap) -> None:
        perfect = single_camera(vehicle_line([(0.0, 0.0), (1.0, 0.0)]))
        shifted = single_camera(vehicle_line([(0.0, 0.3), (1.0, 0.45)]))
        pose = Pose(0.0, 0.0, 0.0)
        for variant in Variant:
            assert model_variant(perfect, pose, straight_map, PARAMS, variant) > model_variant(
                shifted, pose, straight_map, PARAMS, variant
            )

    def test_misoriented_line_fools_shift_only_model(self, straight_map: ProbMap) -> None:
        pose = Pose(0.0, 0.0, 0.0)
        shifted = single_camera(vehicle_line([(-1.0, SIGMA_SHIFT), (1.0, SIGMA_SHIFT)]))
        shifted_score = model_variant(shifted, pose, straight_map, PARAMS, Variant.SHIFT)

        direction = np.array([math.cos(math.radians(25.0)), math.sin(math.radians(25.0))])
        crossing = None
        for offset in np.linspace(-0.5, 0.5, 21):
            candidate = single_camera(vehicle_line([(offset - 0.5) * direction, (offset + 0.5) * direction]))
            if model_variant(candidate, pose, straight_map, PARAMS, Variant.SHIFT) >= shifted_score:
                crossing = candidate
                break
        assert crossing is not None

        assert model_variant(crossing, pose, straight_map, PARAMS, Variant.SHIFT) >= shifted_score
        assert model_variant(shifted, pose, straight_map, PARAMS, Variant.COMBINED) > model_variant(
            crossing, pose, straight_map, PARAMS, Variant.COMBINED
        )


class TestBatchLikelihood:
    @pytest.mark.parametrize("variant", list(Variant))
    def test_matches_scalar_path(self, straight_map: ProbMap, variant: Variant) -> None:
        rng = np.random.default_rng(19)
        z = random_measurement(rng, 4)
        poses = np.column_stack(
            (rng.uniform(-10.0, 10.0, 200), rng.uniform(-2.0, 2.0, 200), rng.uniform(-math.pi, math.pi, 200))
        )
        batch = batch_log_likelihood(prepare_measurement(z, PARAMS.spacing), poses, straight_map, PARAMS, variant)
        for row, value in zip(poses, batch):
            scalar = model_variant(z, Pose.from_array(row), straight_map, PARAMS, variant)
            expected = math.log(scalar) if scalar > 0.0 else -math.inf
            if math.isinf(expected):
                assert math.isinf(value)
            else:
                assert value == pytest.approx(expected, rel=1e-9, abs=1e-9)

    def test_empty_measurement_is_neutral(self, straight_map: ProbMap) -> None:
        prepared = prepare_measurement(Measurement((CameraDetections(0, ()),)), PARAMS.spacing)
        assert np.array_equal(batch_log_likelihood(prepared, np.zeros((3, 3)), straight_map, PARAMS), np.zeros(3))

    def test_timings_are_recorded(self, straight_map: ProbMap) -> None:
        z = single_camera(vehicle_line([(0.0, 0.0), (2.0, 0.0)]))
        timings: dict = {}
        batch_log_likelihood(prepare_measurement(z, PARAMS.spacing), np.zeros((4, 3)), straight_map, PARAMS, timings=timings)
        assert set(timings) == {"transform", "shift", "angular"}
        assert all(value >= 0.0 for value in timings.values())
