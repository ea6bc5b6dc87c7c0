from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Sequence, Tuple

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from demo import DEMO_ROUTE, DEMO_START
from errors import ConfigError

VARIANTS = ("shift", "angular", "shift+angular")

# provenance shown by --help: "published" defaults match the published experiments
PROVENANCE: Dict[str, str] = {
    "particles": "published",
    "runs": "published",
}


class MotionSettings(BaseModel):
    model_config = ConfigDict(extra="forbid")

    sigma_linear: float = Field(0.05, ge=0.0)
    sigma_angular: float = Field(0.05, ge=0.0)
    sigma_heading: float = Field(0.02, ge=0.0)


class SimulatorSettings(BaseModel):
    model_config = ConfigDict(extra="forbid")

    sigma_shift_sim: float = Field(0.1, ge=0.0)
    sigma_angle_sim: float = Field(math.radians(1.0), ge=0.0)
    fp_rate: float = Field(0.2, ge=0.0)
    drop_rate: float = Field(0.1, ge=0.0, le=1.0)
    isotropic_jitter: bool = False
    fp_max_length: float = Field(3.0, gt=0.0)
    odom_sigma_linear: float = Field(0.02, ge=0.0)
    odom_sigma_angular: float = Field(0.02, ge=0.0)
    dt: float = Field(0.1, gt=0.0)


class CameraSettings(BaseModel):
    model_config = ConfigDict(extra="forbid")

    id: int = Field(ge=0)
    polygon: List[Tuple[float, float]]

    @field_validator("polygon")
    @classmethod
    def _enough_vertices(cls, value: List[Tuple[float, float]]) -> List[Tuple[float, float]]:
        if len(value) < 3:
            raise ValueError("camera polygon needs at least 3 vertices")
        return value


class RouteSegmentSettings(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kind: Literal["straight", "arc", "reverse"]
    length: float = Field(gt=0.0)
    speed: float = Field(gt=0.0)
    radius: Optional[float] = None


def _default_cameras() -> List[CameraSettings]:
    from simulator import default_cameras

    return [CameraSettings(id=cam.camera_id, polygon=[tuple(p) for p in cam.polygon.tolist()]) for cam in default_cameras()]


class Config(BaseSettings):
    model_config = SettingsConfigDict(env_prefix="LINELOC_", env_nested_delimiter="__", extra="forbid")

    vector_map: Optional[str] = None
    map_file: str = "map.lfm"
    sigma_shift: float = Field(0.2, gt=0.0)
    alpha: float = Field(10.0, gt=0.0)
    sigma_angle: float = Field(0.1, gt=0.0)
    spacing: float = Field(0.5, gt=0.0)
    resolution: float = Field(0.05, gt=0.0)
    particles: int = Field(1000, ge=1)
    motion: MotionSettings = Field(default_factory=MotionSettings)
    variant: Literal["shift", "angular", "shift+angular"] = "shift+angular"
    seed: int = Field(0, ge=0)
    runs: int = Field(10, ge=1)
    workers: int = Field(1, ge=1)
    simulator: SimulatorSettings = Field(default_factory=SimulatorSettings)
    cameras: List[CameraSettings] = Field(default_factory=_default_cameras)
    route: List[RouteSegmentSettings] = Field(
        default_factory=lambda: [RouteSegmentSettings(**seg) for seg in DEMO_ROUTE]
    )
    start_pose: Tuple[float, float, float] = DEMO_START
    init_mode: Literal["gaussian", "uniform"] = "gaussian"
    init_sigmas: Tuple[float, float, float] = (0.5, 0.5, 0.05)
    ess_gating: bool = False
    log_timings: bool = False
    evaluate_skip_s: float = Field(5.0, ge=0.0)
    max_degenerate_fraction: float = Field(0.2, ge=0.0, le=1.0)
    profile_iterations: int = Field(500, ge=1)
    language: str = "en"

    @field_validator("cameras")
    @classmethod
    def _unique_cameras(cls, value: List[CameraSettings]) -> List[CameraSettings]:
        ids = [cam.id for cam in value]
        if len(ids) != len(set(ids)):
            raise ValueError("camera ids must be unique")
        return value

    def to_json(self) -> str:
        return json.dumps(self.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))


def _describe(exc: ValidationError) -> List[str]:
    return [f"{'.'.join(str(p) for p in err['loc'])}: {err['msg']}" for err in exc.errors()]


def build_config(data: Dict[str, Any]) -> Config:
    try:
        return Config(**data)
    except ValidationError as exc:
        raise ConfigError("invalid_config", errors=_describe(exc)) from exc


def parse_config(text: str) -> Config:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("invalid_config", errors=[str(exc)]) from exc
    if not isinstance(data, dict):
        raise ConfigError("invalid_config", errors=["config must be a JSON object"])
    return build_config(data)


def _parse_value(raw: str) -> Any:
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def apply_overrides(data: Dict[str, Any], overrides: Sequence[str]) -> Dict[str, Any]:
    """Apply `key.sub=value` assignments; values are JSON when they parse as JSON."""
    merged = json.loads(json.dumps(data))
    for item in overrides:
        key, sep, raw = item.partition("=")
        if not sep or not key.strip():
            raise ConfigError("invalid_override", errors=[item])
        parts = key.strip().split(".")
        node = merged
        for part in parts[:-1]:
            child = node.get(part)
            if not isinstance(child, dict):
                child = {}
                node[part] = child
            node = child
        node[parts[-1]] = _parse_value(raw)
    return merged


class ConfigStore:
    def __init__(self, path: Optional[Path]) -> None:
        self.path = path

    def load_data(self) -> Dict[str, Any]:
        if self.path is None or not self.path.exists():
            return {}
        try:
            with self.path.open("r", encoding="utf-8") as handle:
                data = json.load(handle)
        except json.JSONDecodeError as exc:
            raise ConfigError("invalid_config", errors=[str(exc)]) from exc
        if not isinstance(data, dict):
            raise ConfigError("invalid_config", errors=["config must be a JSON object"])
        return data

    def load(self, overrides: Sequence[str] = ()) -> Config:
        return build_config(apply_overrides(self.load_data(), overrides))

    def save(self, config: Config) -> None:
        if self.path is None:
            raise ConfigError("invalid_config", errors=["no config path"])
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with self.path.open("w", encoding="utf-8") as handle:
            json.dump(config.model_dump(mode="json"), handle, indent=2, sort_keys=True)


def default_config() -> Config:
    return build_config({})
