"""End-to-end tests for the command line."""
from __future__ import annotations

import json
import sys
from pathlib import Path
from typing import Any, Dict, List

import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from app import (
    EXIT_CONFIG,
    EXIT_DEGENERATE,
    EXIT_IO,
    EXIT_OK,
    build_parser,
    main,
    profile_iterations,
    profile_measurement,
)
from config import default_config
from demo import DEMO_BOUNDS, demo_vector_map
from metrics import timing_report
from observation import prepare_measurement
from probmap import MapMeta, compile_map


@pytest.fixture()
def world(tmp_path: Path) -> Path:
    vmap = {
        "lines": [{"points": [[-10.0, y], [60.0, y]]} for y in (-3.5, 0.0, 3.5)]
        + [{"points": [[x, -3.5], [x, 0.0]]} for x in (5.0, 15.0)],
        "drivable": [{"ring": [[-10.0, -3.5], [60.0, -3.5], [60.0, 3.5], [-10.0, 3.5]]}],
    }
    (tmp_path / "world.json").write_text(json.dumps(vmap), encoding="utf-8")
    config = {
        "vector_map": str(tmp_path / "world.json"),
        "resolution": 0.1,
        "particles": 100,
        "runs": 2,
        "route": [{"kind": "straight", "length": 15.0, "speed": 5.0}],
        "start_pose": [-5.0, -1.75, 0.0],
        "evaluate_skip_s": 0.0,
        "profile_iterations": 5,
    }
    (tmp_path / "config.json").write_text(json.dumps(config), encoding="utf-8")
    return tmp_path


def run_cli(capsys: pytest.CaptureFixture, args: List[str]) -> Dict[str, Any]:
    code = main(args)
    result = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    result["_code"] = code
    return result


def common(world: Path, out: str = "out") -> List[str]:
    return ["--config", str(world / "config.json"), "--out", str(world / out)]


class TestParser:
    def test_subcommands(self) -> None:
        parser = build_parser()
        args = parser.parse_args(["evaluate", "a.csv", "b.csv", "--baseline", "shift"])
        assert args.command == "evaluate"
        assert args.runlogs == ["a.csv", "b.csv"]

    def test_help_lists_defaults_with_provenance(self) -> None:
        epilog = build_parser().epilog or ""
        assert "particles = 1000 (published)" in epilog
        assert "spacing = 0.5 (tuned)" in epilog


class TestBuildMap:
    def test_deterministic_output(self, world: Path, capsys: pytest.CaptureFixture) -> None:
        first = run_cli(capsys, ["build-map", *common(world), "--map", str(world / "a.lfm")])
        second = run_cli(capsys, ["build-map", *common(world), "--map", str(world / "b.lfm")])
        assert first["_code"] == second["_code"] == EXIT_OK
        assert (world / "a.lfm").read_bytes() == (world / "b.lfm").read_bytes()
        assert set(first["channels"]) == {"line_raster", "shift", "dist", "occupancy"}

    def test_default_target(self, world: Path, capsys: pytest.CaptureFixture) -> None:
        result = run_cli(capsys, ["build-map", *common(world)])
        assert result["ok"] is True
        assert (world / "out" / "map.lfm").exists()


class TestSimulate:
    def test_outputs_are_reproducible(self, world: Path, capsys: pytest.CaptureFixture) -> None:
        assert run_cli(capsys, ["simulate", *common(world, "one")])["_code"] == EXIT_OK
        assert run_cli(capsys, ["simulate", *common(world, "two")])["_code"] == EXIT_OK
        for name in ("run_000.csv", "run_001.csv", "detections_000.jsonl", "detections_001.jsonl"):
            assert (world / "one" / name).read_bytes() == (world / "two" / name).read_bytes()

    def test_each_run_records_its_seed(self, world: Path, capsys: pytest.CaptureFixture) -> None:
        run_cli(capsys, ["simulate", *common(world), "--seed", "40"])
        for index in (0, 1):
            first = (world / "out" / f"run_{index:03d}.csv").read_text(encoding="utf-8").splitlines()[0]
            assert json.loads(first.split(" ", 2)[2])["seed"] == 40 + index

    def test_replay_matches_closed_loop(self, world: Path, capsys: pytest.CaptureFixture) -> None:
        run_cli(capsys, ["build-map", *common(world)])
        run_cli(capsys, ["simulate", *common(world), "--set", "runs=1"])
        result = run_cli(
            capsys,
            [
                "localize",
                str(world / "out" / "map.lfm"),
                str(world / "out" / "detections_000.jsonl"),
                *common(world),
                "--set",
                "runs=1",
            ],
        )
        assert result["_code"] == EXIT_OK
        simulated = (world / "out" / "run_000.csv").read_text(encoding="utf-8").splitlines()
        replayed = (world / "out" / "localize.csv").read_text(encoding="utf-8").splitlines()
        assert replayed[1:] == simulated[1:]


class TestEvaluateAndProfile:
    def test_evaluate_writes_table(self, world: Path, capsys: pytest.CaptureFixture) -> None:
        run_cli(capsys, ["simulate", *common(world)])
        logs = [str(world / "out" / f"run_{i:03d}.csv") for i in (0, 1)]
        result = run_cli(capsys, ["evaluate", *logs, *common(world), "--baseline", "shift+angular"])
        assert result["_code"] == EXIT_OK
        assert "shift+angular" in result["table"]
        assert (world / "out" / "metrics.txt").exists()
        assert len((world / "out" / "metrics.csv").read_text(encoding="utf-8").splitlines()) == 2

    def test_profile_percentages(self, world: Path, capsys: pytest.CaptureFixture) -> None:
        run_cli(capsys, ["build-map", *common(world)])
        result = run_cli(capsys, ["profile", str(world / "out" / "map.lfm"), *common(world)])
        assert result["_code"] == EXIT_OK
        report = json.loads((world / "out" / "profile.json").read_text(encoding="utf-8"))
        assert report["iterations"] == 5
        assert sum(report["percent"].values()) == pytest.approx(100.0)


class TestExitCodes:
    def test_missing_config(self, tmp_path: Path, capsys: pytest.CaptureFixture) -> None:
        result = run_cli(capsys, ["simulate", "--config", str(tmp_path / "nope.json")])
        assert result["_code"] == EXIT_CONFIG
        assert result["ok"] is False

    def test_invalid_override(self, world: Path, capsys: pytest.CaptureFixture) -> None:
        result = run_cli(capsys, ["simulate", *common(world), "--set", "particles=0"])
        assert result["_code"] == EXIT_CONFIG
        assert "particles" in result["message"]

    def test_corrupt_map(self, world: Path, capsys: pytest.CaptureFixture) -> None:
        (world / "bad.lfm").write_bytes(b"XXXX" + bytes(64))
        (world / "empty.jsonl").write_text("", encoding="utf-8")
        result = run_cli(capsys, ["localize", str(world / "bad.lfm"), str(world / "empty.jsonl"), *common(world)])
        assert result["_code"] == EXIT_IO

    def test_missing_runlog(self, world: Path, capsys: pytest.CaptureFixture) -> None:
        result = run_cli(capsys, ["evaluate", str(world / "missing.csv"), *common(world)])
        assert result["_code"] == EXIT_IO

    def test_malformed_vector_map(self, world: Path, capsys: pytest.CaptureFixture) -> None:
        (world / "world.json").write_text('{"lines": [{"points": [[0, 0], ["a", 1]]}]}', encoding="utf-8")
        result = run_cli(capsys, ["build-map", *common(world)])
        assert result["_code"] == EXIT_IO
        assert result["ok"] is False

    def test_malformed_runlog(self, world: Path, capsys: pytest.CaptureFixture) -> None:
        (world / "run.csv").write_text("t,e_lon,e_lat,e_ang\n0.0,abc,0.1,0.0\n", encoding="utf-8")
        result = run_cli(capsys, ["evaluate", str(world / "run.csv"), *common(world)])
        assert result["_code"] == EXIT_IO

    def test_degenerate_run(self, world: Path, capsys: pytest.CaptureFixture) -> None:
        run_cli(capsys, ["build-map", *common(world)])
        frame = {"t": 0.0, "odom": [0.0, 0.0, 0.0], "cameras": [], "truth": [20.0, 30.0, 0.0]}
        (world / "offroad.jsonl").write_text(json.dumps(frame) + "\n", encoding="utf-8")
        result = run_cli(
            capsys,
            [
                "localize",
                str(world / "out" / "map.lfm"),
                str(world / "offroad.jsonl"),
                *common(world),
                "--set",
                "max_degenerate_fraction=0",
            ],
        )
        assert result["_code"] == EXIT_DEGENERATE


@pytest.mark.slow
class TestProfileTiming:
    def test_demo_iteration_budget(self) -> None:
        config = default_config().model_copy(update={"profile_iterations": 200})
        pmap = compile_map(
            demo_vector_map(), MapMeta.covering(DEMO_BOUNDS, config.resolution), config.sigma_shift, config.alpha
        )
        z = profile_measurement(config)
        assert len(z.cameras) == 4
        assert 20 <= prepare_measurement(z, config.spacing).segment_count <= 24

        report = timing_report(profile_iterations(config, pmap))
        assert report.iterations == 200
        assert report.mean_ms <= 12.0
        assert report.percent["angular"] >= report.percent["shift"]
