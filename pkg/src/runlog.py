"""RunLog CSV and detection replay (JSON Lines) formats."""
from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Collection, Dict, List, Optional, Sequence, Tuple

import numpy as np

from errors import LinelocError, ReplayFormatError
from geometry import CameraDetections, Frame, Measurement, Polyline, Pose
from particle_filter import OdomDelta, StepTimings

logger = logging.getLogger(__name__)

CSV_HEADER = (
    "t",
    "truth_x",
    "truth_y",
    "truth_theta",
    "est_x",
    "est_y",
    "est_theta",
    "e_lon",
    "e_lat",
    "e_ang",
    "ms_total",
    "ms_shift",
    "ms_angular",
    "ms_transform",
    "ms_resample",
    "degenerate_flag",
)
CONFIG_PREFIX = "# config: "


@dataclass(frozen=True)
class ReplayFrame:
    t: float
    odom: OdomDelta
    measurement: Measurement
    truth: Optional[Pose] = None


@dataclass(frozen=True)
class RunLogRow:
    t: float
    truth: Optional[Pose]
    estimate: Pose
    errors: Optional[Tuple[float, float, float]]
    timings: StepTimings
    degenerate: bool


@dataclass(frozen=True)
class RunLog:
    rows: Tuple[RunLogRow, ...]
    frames: Tuple[ReplayFrame, ...] = ()

    def degenerate_fraction(self, skip_s: float = 0.0) -> float:
        if not self.rows:
            return 0.0
        t0 = self.rows[0].t
        kept = [row for row in self.rows if row.t - t0 >= skip_s]
        if not kept:
            return 0.0
        return sum(row.degenerate for row in kept) / len(kept)


@dataclass(frozen=True)
class RunErrors:
    """Error columns of one RunLog CSV, as read back for evaluation."""

    label: str
    t: np.ndarray
    e_lon: np.ndarray
    e_lat: np.ndarray
    e_ang: np.ndarray
    degenerate: np.ndarray


def _fmt(value: Optional[float]) -> str:
    return "" if value is None else repr(float(value))


def runlog_csv(log: RunLog, config_json: Optional[str] = None, include_timings: bool = False) -> str:
    buffer = io.StringIO()
    if config_json is not None:
        buffer.write(CONFIG_PREFIX + config_json + "\n")
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for row in log.rows:
        truth = (row.truth.x, row.truth.y, row.truth.theta) if row.truth else (None, None, None)
        errors = row.errors if row.errors else (None, None, None)
        timings: Sequence[Optional[float]] = (None,) * 5
        if include_timings:
            tm = row.timings
            timings = (tm.total_ms, tm.shift_ms, tm.angular_ms, tm.transform_ms, tm.resample_ms)
        writer.writerow(
            [_fmt(row.t)]
            + [_fmt(v) for v in truth]
            + [_fmt(row.estimate.x), _fmt(row.estimate.y), _fmt(row.estimate.theta)]
            + [_fmt(v) for v in errors]
            + [_fmt(v) for v in timings]
            + ["1" if row.degenerate else "0"]
        )
    return buffer.getvalue()


def write_runlog(log: RunLog, path: Path, config_json: Optional[str] = None, include_timings: bool = False) -> None:
    Path(path).write_text(runlog_csv(log, config_json, include_timings), encoding="utf-8")


def read_runlog(path: Path, label: Optional[str] = None) -> RunErrors:
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
        config: Dict[str, Any] = {}
        if lines and lines[0].startswith(CONFIG_PREFIX):
            config = json.loads(lines[0][len(CONFIG_PREFIX) :])
            if not isinstance(config, dict):
                raise TypeError("config line is not an object")
            lines = lines[1:]
        reader = csv.DictReader(lines)
        if reader.fieldnames is None or "e_lon" not in reader.fieldnames:
            raise LinelocError("runlog_missing_columns", path=str(path))
        t, lon, lat, ang, degenerate = [], [], [], [], []
        for record in reader:
            if record["e_lon"] == "":
                raise LinelocError("runlog_without_truth", path=str(path))
            t.append(float(record["t"]))
            lon.append(float(record["e_lon"]))
            lat.append(float(record["e_lat"]))
            ang.append(float(record["e_ang"]))
            degenerate.append(record.get("degenerate_flag") == "1")
    except LinelocError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise LinelocError("malformed_runlog", path=str(path), detail=str(exc)) from exc
    return RunErrors(
        label=label or str(config.get("variant", path.stem)),
        t=np.array(t),
        e_lon=np.array(lon),
        e_lat=np.array(lat),
        e_ang=np.array(ang),
        degenerate=np.array(degenerate, dtype=bool),
    )


def frame_to_json(frame: ReplayFrame) -> str:
    payload: Dict[str, Any] = {
        "t": frame.t,
        "odom": [frame.odom.dx, frame.odom.dy, frame.odom.dtheta],
        "cameras": [
            {"id": cam.camera_id, "lines": [line.points.tolist() for line in cam.lines]}
            for cam in frame.measurement.cameras
        ],
    }
    if frame.truth is not None:
        payload["truth"] = [frame.truth.x, frame.truth.y, frame.truth.theta]
    return json.dumps(payload, separators=(",", ":"))


def write_replay(frames: Sequence[ReplayFrame], path: Path) -> None:
    Path(path).write_text("".join(frame_to_json(frame) + "\n" for frame in frames), encoding="utf-8")


def frame_from_json(text: str, line_no: int, known_cameras: Optional[Collection[int]] = None) -> ReplayFrame:
    try:
        data = json.loads(text)
        odom = OdomDelta(*(float(v) for v in data["odom"]))
        cameras: List[CameraDetections] = []
        for cam in data["cameras"]:
            camera_id = int(cam["id"])
            if known_cameras is not None and camera_id not in known_cameras:
                logger.warning("line %d: unknown camera id %d skipped", line_no, camera_id)
                continue
            lines = tuple(Polyline.from_points(points, Frame.VEHICLE) for points in cam["lines"])
            cameras.append(CameraDetections(camera_id, lines))
        truth = Pose.from_array(data["truth"]) if data.get("truth") is not None else None
        return ReplayFrame(float(data["t"]), odom, Measurement(tuple(cameras)), truth)
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise ReplayFormatError("corrupt_replay_line", line=line_no, detail=str(exc)) from exc


def read_replay(path: Path, known_cameras: Optional[Collection[int]] = None) -> List[ReplayFrame]:
    frames = []
    with Path(path).open("rb") as handle:
        for line_no, raw in enumerate(handle, start=1):
            try:
                text = raw.decode("utf-8")
            except UnicodeDecodeError as exc:
                raise ReplayFormatError("corrupt_replay_line", line=line_no, detail=str(exc)) from exc
            if not text.strip():
                continue
            frames.append(frame_from_json(text, line_no, known_cameras))
    return frames
