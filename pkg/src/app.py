from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

import probmap
from config import PROVENANCE, Config, ConfigStore, default_config
from demo import demo_vector_map
from errors import ConfigError, DegeneracyExceeded, LinelocError
from geometry import CameraDetections, Frame, Measurement, Polyline, Pose
from i18n import I18N
from metrics import aggregate, format_table, format_timing, table_csv, timing_report
from observation import ObsParams, Variant
from particle_filter import FilterConfig, MotionNoise, OdomDelta, StepTimings, init_gaussian, step
from probmap import MapMeta, ProbMap, VectorMap
from runlog import RunLog, read_replay, read_runlog, write_replay, write_runlog
from simulator import (
    CameraFootprint,
    DetectionNoise,
    TrajectorySegment,
    make_trajectory,
    run_closed_loop,
    run_frames,
)

logger = logging.getLogger("lineloc")

LOG_FORMAT = "%(asctime)s %(levelname)s %(message)s"
EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_DEGENERATE = 4


def setup_logging(level: int = logging.INFO, log_file: Optional[Path] = None) -> logging.Logger:
    root = logging.getLogger()
    for handler in [h for h in root.handlers if getattr(h, "_lineloc", False)]:
        root.removeHandler(handler)
        handler.close()
    handlers: List[logging.Handler] = [logging.StreamHandler(sys.stderr)]
    if log_file is not None:
        log_file.parent.mkdir(parents=True, exist_ok=True)
        handlers.append(logging.FileHandler(log_file))
    for handler in handlers:
        handler.setFormatter(logging.Formatter(LOG_FORMAT))
        handler._lineloc = True  # type: ignore[attr-defined]
        root.addHandler(handler)
    root.setLevel(level)
    return logger


# Config -> library objects


def obs_params(config: Config) -> ObsParams:
    return ObsParams(sigma_angle=config.sigma_angle, spacing=config.spacing)


def filter_config(config: Config, workers: Optional[int] = None) -> FilterConfig:
    return FilterConfig(
        particles=config.particles,
        variant=Variant(config.variant),
        ess_gating=config.ess_gating,
        workers=workers if workers is not None else 1,
    )


def motion_noise(config: Config) -> MotionNoise:
    motion = config.motion
    return MotionNoise(motion.sigma_linear, motion.sigma_angular, motion.sigma_heading)


def odometry_noise(config: Config) -> MotionNoise:
    return MotionNoise(config.simulator.odom_sigma_linear, config.simulator.odom_sigma_angular)


def detection_noise(config: Config) -> DetectionNoise:
    sim = config.simulator
    return DetectionNoise(
        sigma_shift_sim=sim.sigma_shift_sim,
        sigma_angle_sim=sim.sigma_angle_sim,
        fp_rate=sim.fp_rate,
        drop_rate=sim.drop_rate,
        isotropic=sim.isotropic_jitter,
        fp_max_length=sim.fp_max_length,
    )


def cameras(config: Config) -> List[CameraFootprint]:
    return [CameraFootprint(cam.id, np.array(cam.polygon, dtype=np.float64)) for cam in config.cameras]


def route(config: Config) -> List[TrajectorySegment]:
    return [TrajectorySegment(seg.kind, seg.length, seg.speed, seg.radius) for seg in config.route]


def vector_map(config: Config, path: Optional[Path] = None) -> VectorMap:
    source = path or (Path(config.vector_map) if config.vector_map else None)
    if source is None:
        logger.info("no vector map configured; using the bundled demo world")
        return demo_vector_map()
    return probmap.load_vector_map(source)


def compile_vector_map(config: Config, vmap: VectorMap) -> ProbMap:
    meta = MapMeta.covering(vmap.bounds, config.resolution)
    return probmap.compile_map(vmap, meta, config.sigma_shift, config.alpha)


def simulate_run(config: Config, vmap: VectorMap, pmap: ProbMap, index: int) -> Tuple[int, RunLog]:
    seed = config.seed + index
    traj = make_trajectory(route(config), config.simulator.dt, Pose(*config.start_pose))
    log = run_closed_loop(
        vmap,
        pmap,
        traj,
        cameras(config),
        detection_noise(config),
        motion_noise(config),
        filter_config(config),
        seed,
        params=obs_params(config),
        odom_noise=odometry_noise(config),
        init_sigmas=config.init_sigmas,
        init_mode=config.init_mode,
    )
    logger.info("run %d (seed %d): %d steps", index, seed, len(log.rows))
    return seed, log


def _check_degeneracy(config: Config, logs: Sequence[RunLog]) -> None:
    worst = max((log.degenerate_fraction(config.evaluate_skip_s) for log in logs), default=0.0)
    if worst > config.max_degenerate_fraction:
        raise DegeneracyExceeded("degeneracy_exceeded", fraction=worst, limit=config.max_degenerate_fraction)


# commands


def cmd_build_map(config: Config, args: argparse.Namespace, i18n: I18N) -> Dict[str, Any]:
    vmap = vector_map(config, Path(args.vector_map) if args.vector_map else None)
    pmap = compile_vector_map(config, vmap)
    target = Path(args.map) if args.map else Path(args.out) / config.map_file
    target.parent.mkdir(parents=True, exist_ok=True)
    probmap.save(pmap, target)
    meta = pmap.meta
    logger.info("map compiled: %s", target)
    return {
        "ok": True,
        "message": i18n.t("msg_map_built", path=str(target), width=meta.width, height=meta.height, resolution=meta.resolution),
        "path": str(target),
        "channels": probmap.channel_stats(pmap),
    }


def cmd_simulate(config: Config, args: argparse.Namespace, i18n: I18N) -> Dict[str, Any]:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    vmap = vector_map(config)
    map_path = Path(args.map) if args.map else out / config.map_file
    if map_path.exists():
        pmap = probmap.load(map_path)
    else:
        logger.info("%s not found; compiling the map in memory", map_path)
        pmap = compile_vector_map(config, vmap)

    indices = range(config.runs)
    if config.workers > 1 and config.runs > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            n = config.runs
            results = list(pool.map(simulate_run, [config] * n, [vmap] * n, [pmap] * n, indices))
    else:
        results = [simulate_run(config, vmap, pmap, k) for k in indices]

    files = []
    for index, (seed, log) in enumerate(results):
        run_config = config.model_copy(update={"seed": seed, "runs": 1})
        csv_path = out / f"run_{index:03d}.csv"
        write_runlog(log, csv_path, run_config.to_json(), include_timings=config.log_timings)
        write_replay(log.frames, out / f"detections_{index:03d}.jsonl")
        files.append(str(csv_path))
    _check_degeneracy(config, [log for _, log in results])
    return {"ok": True, "message": i18n.t("msg_simulated", runs=config.runs, out=str(out)), "runlogs": files}


def cmd_localize(config: Config, args: argparse.Namespace, i18n: I18N) -> Dict[str, Any]:
    pmap = probmap.load(Path(args.map))
    frames = read_replay(Path(args.detections), known_cameras={cam.id for cam in config.cameras})
    log = run_frames(
        frames,
        pmap,
        obs_params(config),
        motion_noise(config),
        filter_config(config, workers=config.workers),
        config.seed,
        init_mode=config.init_mode,
        init_sigmas=config.init_sigmas,
    )
    target = Path(args.output) if args.output else Path(args.out) / "localize.csv"
    target.parent.mkdir(parents=True, exist_ok=True)
    write_runlog(log, target, config.to_json(), include_timings=config.log_timings)
    _check_degeneracy(config, [log])
    return {"ok": True, "message": i18n.t("msg_localized", frames=len(frames), path=str(target)), "path": str(target)}


def cmd_evaluate(config: Config, args: argparse.Namespace, i18n: I18N) -> Dict[str, Any]:
    series = [read_runlog(Path(path)) for path in args.runlogs]
    skip = args.skip if args.skip is not None else config.evaluate_skip_s
    table = aggregate(series, skip_s=skip, baseline=args.baseline)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    text = format_table(table)
    (out / "metrics.txt").write_text(text, encoding="utf-8")
    (out / "metrics.csv").write_text(table_csv(table), encoding="utf-8")
    return {
        "ok": True,
        "message": i18n.t("msg_evaluated", variants=len(table.variants), runs=len(series)),
        "table": text,
    }


def profile_measurement(config: Config) -> Measurement:
    """One straight detection per camera: 6 points at the configured spacing through the footprint centroid."""
    detections = []
    for cam in cameras(config):
        cx, cy = cam.shape.centroid.coords[0]
        xs = cx + config.spacing * (np.arange(6) - 2.5)
        points = np.column_stack((xs, np.full(6, cy)))
        detections.append(CameraDetections(cam.camera_id, (Polyline(points, Frame.VEHICLE),)))
    return Measurement(tuple(detections))


def profile_iterations(config: Config, pmap: ProbMap) -> List[StepTimings]:
    params = obs_params(config)
    noise = motion_noise(config)
    cfg = filter_config(config, workers=1)
    z = profile_measurement(config)
    particles = init_gaussian(Pose(*config.start_pose), config.init_sigmas, config.particles, config.seed)
    still = OdomDelta(0.0, 0.0, 0.0)
    timings = []
    for _ in range(config.profile_iterations):
        result = step(particles, still, z, pmap, params, noise, cfg)
        particles = result.particles
        timings.append(result.timings)
    return timings


def cmd_profile(config: Config, args: argparse.Namespace, i18n: I18N) -> Dict[str, Any]:
    pmap = probmap.load(Path(args.map))
    report = timing_report(profile_iterations(config, pmap))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "profile.json").write_text(json.dumps(report.as_dict(), indent=2, sort_keys=True), encoding="utf-8")
    logger.info("profile:\n%s", format_timing(report))
    return {
        "ok": True,
        "message": i18n.t("msg_profiled", iterations=report.iterations, mean_ms=report.mean_ms),
        "report": report.as_dict(),
    }


COMMANDS = {
    "build-map": cmd_build_map,
    "simulate": cmd_simulate,
    "localize": cmd_localize,
    "evaluate": cmd_evaluate,
    "profile": cmd_profile,
}


def _defaults_epilog() -> str:
    lines = ["configuration defaults:"]
    for key, value in default_config().model_dump(mode="json").items():
        if isinstance(value, (dict, list)):
            continue
        lines.append(f"  {key} = {json.dumps(value)} ({PROVENANCE.get(key, 'tuned')})")
    return "\n".join(lines)


def build_parser(i18n: Optional[I18N] = None) -> argparse.ArgumentParser:
    description = i18n.t("help_description") if i18n else "lineloc"
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, default=None, help="JSON configuration file")
    common.add_argument("--seed", type=int, default=None, help="base random seed")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")
    common.add_argument("--out", default="out", help="output directory")
    common.add_argument("--verbose", action="store_true")
    common.add_argument("--log-file", type=Path, default=None)

    parser = argparse.ArgumentParser(
        prog="lineloc",
        description=description,
        epilog=_defaults_epilog(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    build = sub.add_parser("build-map", parents=[common])
    build.add_argument("vector_map", nargs="?", default=None)
    build.add_argument("--map", default=None, help="output map file")

    simulate = sub.add_parser("simulate", parents=[common])
    simulate.add_argument("--map", default=None, help="compiled map; compiled in memory when absent")

    localize = sub.add_parser("localize", parents=[common])
    localize.add_argument("map")
    localize.add_argument("detections")
    localize.add_argument("--output", default=None, help="run log CSV path")

    evaluate = sub.add_parser("evaluate", parents=[common])
    evaluate.add_argument("runlogs", nargs="+")
    evaluate.add_argument("--baseline", default=None, help="variant label the deltas are relative to")
    evaluate.add_argument("--skip", type=float, default=None, help="seconds excluded at the start of each run")

    profile = sub.add_parser("profile", parents=[common])
    profile.add_argument("map")
    return parser


def load_config(args: argparse.Namespace) -> Config:
    if args.config is not None and not args.config.exists():
        raise ConfigError("config_not_found", path=str(args.config))
    overrides = list(args.overrides)
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    return ConfigStore(args.config).load(overrides)


def main(argv: Optional[Sequence[str]] = None) -> int:
    i18n = I18N()
    args = build_parser(i18n).parse_args(argv)
    setup_logging(logging.DEBUG if args.verbose else logging.INFO, args.log_file)
    try:
        config = load_config(args)
        i18n.set_language(config.language)
        result = COMMANDS[args.command](config, args, i18n)
        print(json.dumps(result))
        return EXIT_OK
    except ConfigError as exc:
        code = EXIT_CONFIG
        message = i18n.describe(exc)
    except DegeneracyExceeded as exc:
        code = EXIT_DEGENERATE
        message = i18n.describe(exc)
    except (LinelocError, OSError) as exc:
        code = EXIT_IO
        message = i18n.describe(exc)
    logger.error(message)
    print(json.dumps({"ok": False, "message": message}))
    return code


if __name__ == "__main__":
    raise SystemExit(main())
