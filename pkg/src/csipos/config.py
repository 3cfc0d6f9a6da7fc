"""Experiment configuration: INI-style files with strict validation.

One file drives everything: scene/channel parameters, camera poses, model
hyperparameters, both training stages, the experiment grid, and output
location. Unknown sections or keys are rejected so typos fail loudly. The
scene portion has a canonical text form whose SHA-256 ties datasets and
checkpoints to the configuration that produced them.
"""

from __future__ import annotations

import configparser
import hashlib
import io
import os
from dataclasses import dataclass, field, fields, replace
from typing import Optional

from .geometry import CameraModel
from .nn.models import ModelConfig
from .simulate import SceneConfig, default_cameras
from .training import DownstreamConfig, PretrainConfig

OUTPUT_DIR_ENV = "CSIPOS_OUT_DIR"


class ConfigError(ValueError):
    """Invalid or unparsable experiment configuration."""


@dataclass(frozen=True)
class GridConfig:
    n_pretrain: int = 3000
    n_validation: int = 1480
    nt_grid: tuple[int, ...] = (200, 300, 500, 750, 1000)
    k_grid: tuple[int, ...] = (15, 30, 60)
    seeds: tuple[int, ...] = (1, 2, 3, 4, 5)
    jobs: int = 1

    def __post_init__(self):
        if self.n_pretrain < 1 or self.n_validation < 1:
            raise ValueError("split sizes must be positive")
        if not self.nt_grid or not self.k_grid or not self.seeds:
            raise ValueError("nt_grid, k_grid, and seeds must be non-empty")
        if min(self.nt_grid) < 1 or min(self.k_grid) < 1:
            raise ValueError("nt_grid and k_grid entries must be positive")
        if self.jobs < 1:
            raise ValueError("jobs must be positive")


@dataclass(frozen=True)
class ExperimentConfig:
    scene: SceneConfig = field(default_factory=SceneConfig)
    model: ModelConfig = field(default_factory=lambda: ModelConfig(16, 52))
    pretrain: PretrainConfig = field(default_factory=PretrainConfig)
    downstream: DownstreamConfig = field(default_factory=DownstreamConfig)
    grid: GridConfig = field(default_factory=GridConfig)
    output_dir: str = "out"

    def resolved_output_dir(self) -> str:
        return os.environ.get(OUTPUT_DIR_ENV, self.output_dir)


_SCENE_KEYS = {
    "num_antennas": int, "num_subcarriers": int, "carrier_freq_hz": float,
    "bandwidth_hz": float, "df_range_deg": float, "max_range_m": float,
    "vehicle_count_min": int, "vehicle_count_max": int,
    "path_count_min": int, "path_count_max": int,
    "nlos_probability": float, "detection_miss_prob": float,
    "detection_angle_noise_deg": float, "csi_noise_snr_db": float, "seed": int,
    "lane_count": int, "num_scatterers": int, "time_stride": int,
    "slot_duration_s": float, "false_detection_rate": float,
    "detection_quantize": bool, "drop_empty_snapshots": bool,
    "normalize_magnitude": bool,
}
_CAMERA_KEYS = {
    "los_azimuth_deg": float, "los_elevation_deg": float,
    "horiz_view_deg": float, "vert_view_deg": float,
    "pixel_width": int, "pixel_height": int,
}
_MODEL_KEYS = {"feature_dim": int, "fn_hidden": int}
_PRETRAIN_KEYS = {
    "iterations": int, "batch_size": int, "lr_encoder": float, "lr_fn1": float,
    "bins": int, "decay_every": int, "decay_factor": float,
}
_DOWNSTREAM_KEYS = {
    "epochs": int, "batch_size": int, "lr_encoder": float, "lr_fn2": float,
    "decay_every": int, "decay_factor": float, "eval_every": int,
}
_GRID_KEYS = {
    "n_pretrain": int, "n_validation": int, "nt_grid": "int_list",
    "k_grid": "int_list", "seeds": "int_list", "jobs": int,
}
_IO_KEYS = {"output_dir": str}


def _convert(section: str, key: str, kind, raw: str):
    try:
        if kind is bool:
            lowered = raw.strip().lower()
            if lowered in ("true", "yes", "1", "on"):
                return True
            if lowered in ("false", "no", "0", "off"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if kind == "int_list":
            return tuple(int(part) for part in raw.replace(",", " ").split())
        return kind(raw)
    except ValueError as exc:
        raise ConfigError(f"[{section}] {key}: {exc}") from exc


def _read_section(parser: configparser.ConfigParser, section: str, keys: dict) -> dict:
    out = {}
    if not parser.has_section(section):
        return out
    for key, raw in parser.items(section):
        if key not in keys:
            raise ConfigError(f"[{section}] unknown key {key!r}")
        out[key] = _convert(section, key, keys[key], raw)
    return out


def parse_config(text: str) -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"config parse error: {exc}") from exc

    known = {"scene", "model", "pretrain", "downstream", "experiment", "io"}
    camera_sections = []
    for section in parser.sections():
        if section in known:
            continue
        if section.startswith("camera."):
            try:
                camera_sections.append((int(section.split(".", 1)[1]), section))
            except ValueError as exc:
                raise ConfigError(f"camera section must be [camera.<index>]: [{section}]") from exc
        else:
            raise ConfigError(f"unknown section [{section}]")

    scene_kv = _read_section(parser, "scene", _SCENE_KEYS)
    scene_kwargs = dict(scene_kv)
    count_pairs = [("vehicle_count_min", "vehicle_count_max", "vehicle_count_range"),
                   ("path_count_min", "path_count_max", "path_count_range")]
    for low_key, high_key, target in count_pairs:
        low = scene_kwargs.pop(low_key, None)
        high = scene_kwargs.pop(high_key, None)
        if (low is None) != (high is None):
            raise ConfigError(f"[scene] {low_key} and {high_key} must be set together")
        if low is not None:
            scene_kwargs[target] = (low, high)

    cameras = []
    for index, section in sorted(camera_sections):
        kv = _read_section(parser, section, _CAMERA_KEYS)
        missing = set(_CAMERA_KEYS) - set(kv)
        if missing:
            raise ConfigError(f"[{section}] missing keys: {sorted(missing)}")
        try:
            cameras.append(CameraModel(**kv))
        except ValueError as exc:
            raise ConfigError(f"[{section}]: {exc}") from exc
    if cameras:
        scene_kwargs["cameras"] = tuple(cameras)
    elif "df_range_deg" in scene_kwargs:
        scene_kwargs["cameras"] = default_cameras(scene_kwargs["df_range_deg"])

    try:
        scene = SceneConfig(**scene_kwargs)
        scene.camera_array()  # validates FoV disjointness
        model_kv = _read_section(parser, "model", _MODEL_KEYS)
        model = ModelConfig(n_antennas=scene.num_antennas,
                            n_subcarriers=scene.num_subcarriers, **model_kv)
        pretrain = PretrainConfig(**_read_section(parser, "pretrain", _PRETRAIN_KEYS))
        downstream = DownstreamConfig(**_read_section(parser, "downstream", _DOWNSTREAM_KEYS))
        grid = GridConfig(**_read_section(parser, "experiment", _GRID_KEYS))
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc

    io_kv = _read_section(parser, "io", _IO_KEYS)
    return ExperimentConfig(scene=scene, model=model, pretrain=pretrain,
                            downstream=downstream, grid=grid,
                            output_dir=io_kv.get("output_dir", "out"))


def load_config(path: str) -> ExperimentConfig:
    try:
        with open(path, "r", encoding="utf-8") as f:
            return parse_config(f.read())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc


def scene_canonical_text(scene: SceneConfig) -> str:
    """Deterministic text form of the scene; hashed into data files."""
    buf = io.StringIO()
    for f in fields(SceneConfig):
        if f.name == "cameras":
            continue
        buf.write(f"{f.name}={getattr(scene, f.name)!r}\n")
    for i, cam in enumerate(scene.cameras):
        for cf in fields(CameraModel):
            buf.write(f"camera.{i}.{cf.name}={getattr(cam, cf.name)!r}\n")
    return buf.getvalue()


def scene_hash(scene: SceneConfig) -> bytes:
    return hashlib.sha256(scene_canonical_text(scene).encode("utf-8")).digest()


def with_seed(cfg: ExperimentConfig, seed: Optional[int]) -> ExperimentConfig:
    if seed is None:
        return cfg
    return replace(cfg, scene=replace(cfg.scene, seed=seed))
