"""Error statistics across runs and per-iteration timing breakdowns."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from errors import LinelocError
from particle_filter import StepTimings
from runlog import RunErrors

AXES = ("lon", "lat", "ang")
TIMING_PARTS = ("transform", "shift", "angular", "resample", "other")


@dataclass(frozen=True)
class AxisStats:
    max: float
    mae: float
    std: float

    @classmethod
    def of(cls, errors: np.ndarray) -> "AxisStats":
        magnitude = np.abs(np.asarray(errors, dtype=np.float64))
        return cls(float(magnitude.max()), float(magnitude.mean()), float(magnitude.std()))


@dataclass(frozen=True)
class VariantMetrics:
    label: str
    runs: int
    samples: int
    lon: AxisStats
    lat: AxisStats
    ang: AxisStats

    def columns(self) -> Tuple[float, ...]:
        """Max and MAE for each axis, angular in radians."""
        return (self.lon.max, self.lon.mae, self.lat.max, self.lat.mae, self.ang.max, self.ang.mae)


@dataclass(frozen=True)
class MetricsTable:
    variants: Tuple[VariantMetrics, ...]
    baseline: Optional[str] = None

    def get(self, label: str) -> VariantMetrics:
        for item in self.variants:
            if item.label == label:
                return item
        raise LinelocError("unknown_variant_label", label=label)

    def deltas(self) -> Dict[str, Tuple[Optional[float], ...]]:
        """Percentage change (A - B) / B * 100 of every column against the baseline variant."""
        if self.baseline is None:
            return {}
        base = self.get(self.baseline).columns()
        result: Dict[str, Tuple[Optional[float], ...]] = {}
        for item in self.variants:
            result[item.label] = tuple(
                None if b == 0.0 else (a - b) / b * 100.0 for a, b in zip(item.columns(), base)
            )
        return result


def _trim(run: RunErrors, skip_s: float) -> np.ndarray:
    if len(run.t) == 0:
        return np.zeros(0, dtype=bool)
    return run.t - run.t[0] >= skip_s


def aggregate(series: Sequence[RunErrors], skip_s: float = 0.0, baseline: Optional[str] = None) -> MetricsTable:
    if not series:
        raise LinelocError("no_runlogs")
    groups: Dict[str, List[RunErrors]] = {}
    for run in series:
        groups.setdefault(run.label, []).append(run)
    if baseline is not None and baseline not in groups:
        raise LinelocError("unknown_variant_label", label=baseline)

    variants = []
    for label, runs in groups.items():
        masks = [_trim(run, skip_s) for run in runs]
        lon = np.concatenate([run.e_lon[m] for run, m in zip(runs, masks)])
        lat = np.concatenate([run.e_lat[m] for run, m in zip(runs, masks)])
        ang = np.concatenate([run.e_ang[m] for run, m in zip(runs, masks)])
        if len(lon) == 0:
            raise LinelocError("no_samples_after_skip", label=label, skip=skip_s)
        variants.append(
            VariantMetrics(label, len(runs), len(lon), AxisStats.of(lon), AxisStats.of(lat), AxisStats.of(ang))
        )
    return MetricsTable(tuple(variants), baseline)


def _cell(stats: AxisStats, scale: float = 1.0) -> Tuple[str, str]:
    return f"{stats.max * scale:.3f}", f"{stats.mae * scale:.3f} ± {stats.std * scale:.3f}"


def format_table(table: MetricsTable) -> str:
    header = [
        "variant",
        "lon Max [m]",
        "lon MAE [m]",
        "lat Max [m]",
        "lat MAE [m]",
        "ang Max [rad]",
        "ang MAE [rad]",
        "ang Max [deg]",
        "ang MAE [deg]",
    ]
    rows = []
    for item in table.variants:
        rows.append(
            [item.label]
            + list(_cell(item.lon))
            + list(_cell(item.lat))
            + list(_cell(item.ang))
            + list(_cell(item.ang, 180.0 / math.pi))
        )
    deltas = table.deltas()
    if deltas:
        header += ["Δ lon Max %", "Δ lon MAE %", "Δ lat Max %", "Δ lat MAE %", "Δ ang Max %", "Δ ang MAE %"]
        for row, item in zip(rows, table.variants):
            row += ["n/a" if d is None else f"{d:+.1f}" for d in deltas[item.label]]

    widths = [max(len(str(r[i])) for r in [header] + rows) for i in range(len(header))]
    lines = ["  ".join(cell.ljust(width) for cell, width in zip(line, widths)).rstrip() for line in [header] + rows]
    return "\n".join(lines) + "\n"


def table_csv(table: MetricsTable) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    header = ["variant", "runs", "samples"]
    for axis in ("lon", "lat"):
        header += [f"{axis}_max_m", f"{axis}_mae_m", f"{axis}_std_m"]
    header += ["ang_max_rad", "ang_mae_rad", "ang_std_rad", "ang_max_deg", "ang_mae_deg", "ang_std_deg"]
    deltas = table.deltas()
    if deltas:
        header += [f"delta_{name}_pct" for name in ("lon_max", "lon_mae", "lat_max", "lat_mae", "ang_max", "ang_mae")]
    writer.writerow(header)
    for item in table.variants:
        row: List[object] = [item.label, item.runs, item.samples]
        for stats in (item.lon, item.lat, item.ang):
            row += [repr(stats.max), repr(stats.mae), repr(stats.std)]
        row += [repr(math.degrees(v)) for v in (item.ang.max, item.ang.mae, item.ang.std)]
        if deltas:
            row += ["" if d is None else repr(d) for d in deltas[item.label]]
        writer.writerow(row)
    return buffer.getvalue()


@dataclass(frozen=True)
class TimingReport:
    iterations: int
    mean_ms: float
    percent: Dict[str, float]

    def as_dict(self) -> Dict[str, object]:
        return {"iterations": self.iterations, "mean_ms": self.mean_ms, "percent": dict(self.percent)}


def timing_report(timings: Sequence[StepTimings]) -> TimingReport:
    if not timings:
        raise LinelocError("no_timings")
    total = sum(t.total_ms for t in timings)
    parts = {
        "transform": sum(t.transform_ms for t in timings),
        "shift": sum(t.shift_ms for t in timings),
        "angular": sum(t.angular_ms for t in timings),
        "resample": sum(t.resample_ms for t in timings),
    }
    parts["other"] = max(0.0, total - sum(parts.values()))
    denominator = sum(parts.values())
    if denominator > 0.0:
        percent = {name: parts[name] / denominator * 100.0 for name in TIMING_PARTS}
    else:
        percent = {name: 0.0 for name in TIMING_PARTS}
        percent["other"] = 100.0
    return TimingReport(len(timings), total / len(timings), percent)


def format_timing(report: TimingReport) -> str:
    lines = [f"iterations: {report.iterations}", f"mean iteration: {report.mean_ms:.3f} ms"]
    for name in TIMING_PARTS:
        lines.append(f"  {name:<10} {report.percent[name]:6.2f} %")
    return "\n".join(lines) + "\n"
