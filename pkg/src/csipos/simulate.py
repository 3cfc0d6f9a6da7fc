"""Synthetic street scene: traffic, multipath CSI, and camera detections.

The BS sits at the origin with its uniform linear array along the x axis;
azimuths are measured from that axis, so the direction-finding range
[0, omega] is the upper half plane for omega = 180. Vehicles ride
circular-conveyor lanes parallel to the array (per-vehicle offset and speed
drawn once per scene), which makes every vehicle's position a pure function
of the slot index; snapshots can therefore be generated independently and in
any order from per-index RNG streams derived off the scene seed.

The channel for a vehicle is a sum of geometric paths: an optional direct
path at the vehicle's true azimuth plus reflections off a fixed set of
scene scatterers, each path contributing a steering vector across the array
(half-wavelength spacing) and a delay phase ramp across subcarriers. Least
squares estimation error at the vehicle is modeled as additive complex
Gaussian noise at a configured SNR. Camera detections replace an object
detector: each vehicle inside some camera's view is reported with Gaussian
azimuth noise and is routed through that camera's pixel plane (integer
quantization included) before coming back as an azimuth.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .geometry import (CameraArray, CameraModel, PixelCoord, PolarDirection,
                       clamp_azimuth, direction_to_pixel, pixel_to_direction)

SPEED_OF_LIGHT = 299_792_458.0

# stream tags so per-purpose RNGs never collide
_TAG_SCENE = 0x5C31
_TAG_SNAPSHOT = 0x54AB

_SPEED_RANGE = (5.0, 15.0)  # m/s along the lane
_SCATTER_REFLECT_LOSS = 0.3


def default_cameras(df_range_deg: float = 180.0, count: int = 3) -> tuple[CameraModel, ...]:
    """Evenly split the direction-finding range across `count` cameras."""
    span = df_range_deg / count
    return tuple(
        CameraModel(
            los_azimuth_deg=(i + 0.5) * span,
            los_elevation_deg=0.0,
            horiz_view_deg=span,
            vert_view_deg=40.0,
            pixel_width=1280,
            pixel_height=720,
        )
        for i in range(count)
    )


@dataclass(frozen=True)
class SceneConfig:
    num_antennas: int = 16
    num_subcarriers: int = 52
    carrier_freq_hz: float = 28e9
    bandwidth_hz: float = 0.2e9
    df_range_deg: float = 180.0
    max_range_m: float = 40.0
    cameras: tuple[CameraModel, ...] = field(default_factory=default_cameras)
    vehicle_count_range: tuple[int, int] = (1, 5)
    path_count_range: tuple[int, int] = (1, 3)
    nlos_probability: float = 0.2
    detection_miss_prob: float = 0.0
    detection_angle_noise_deg: float = 1.0
    csi_noise_snr_db: float = 20.0
    seed: int = 1
    # simulator knobs
    lane_count: int = 4
    num_scatterers: int = 12
    time_stride: int = 4
    slot_duration_s: float = 0.1
    false_detection_rate: float = 0.0
    detection_quantize: bool = True
    drop_empty_snapshots: bool = False
    normalize_magnitude: bool = True

    def __post_init__(self):
        if self.num_antennas < 2:
            raise ValueError(f"need at least 2 antennas, got {self.num_antennas}")
        if self.num_subcarriers < 1:
            raise ValueError(f"need at least 1 subcarrier, got {self.num_subcarriers}")
        if not (0.0 < self.df_range_deg <= 360.0):
            raise ValueError(f"direction-finding range must be in (0, 360], got {self.df_range_deg}")
        if self.max_range_m <= 0:
            raise ValueError(f"max range must be positive, got {self.max_range_m}")
        for name in ("nlos_probability", "detection_miss_prob"):
            p = getattr(self, name)
            if not (0.0 <= p <= 1.0):
                raise ValueError(f"{name} must be in [0, 1], got {p}")
        lo, hi = self.vehicle_count_range
        if not (1 <= lo <= hi):
            raise ValueError(f"vehicle count range must satisfy 1 <= min <= max, got {self.vehicle_count_range}")
        plo, phi = self.path_count_range
        if not (1 <= plo <= phi):
            raise ValueError(f"path count range must satisfy 1 <= min <= max, got {self.path_count_range}")
        if self.lane_count < 1 or self.num_scatterers < 1:
            raise ValueError("need at least one lane and one scatterer")

    @property
    def subcarrier_spacing_hz(self) -> float:
        return self.bandwidth_hz / self.num_subcarriers

    def camera_array(self) -> CameraArray:
        return CameraArray(self.cameras, self.df_range_deg)


@dataclass(frozen=True)
class VehicleState:
    """Horizontal polar position (azimuth degrees, ground distance meters)."""

    azimuth_deg: float
    distance_m: float
    speed_mps: float = 0.0


@dataclass
class Snapshot:
    """Everything the BS collects in one slot.

    `truth_positions` (rows of [azimuth_deg, distance_m], aligned with `csi`)
    is retained only for labeled/validation use; pretraining snapshots carry
    None. Detected azimuths carry no correspondence to the CSI order.
    """

    time_index: int
    csi: list[np.ndarray]
    detected_azimuths: np.ndarray
    truth_positions: Optional[np.ndarray]


@dataclass(frozen=True)
class LabeledSample:
    """One (CSI, position) supervision pair."""

    time_index: int
    csi: np.ndarray
    position: np.ndarray  # [azimuth_deg, distance_m]


def _scene_rng(cfg: SceneConfig) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([cfg.seed, _TAG_SCENE]))


def snapshot_rng(cfg: SceneConfig, time_index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([cfg.seed, _TAG_SNAPSHOT, time_index]))


class Scene:
    """Frozen scene-level randomness: lanes, conveyor vehicles, scatterers."""

    def __init__(self, cfg: SceneConfig):
        self.cfg = cfg
        rng = _scene_rng(cfg)
        r = cfg.max_range_m
        # lanes parallel to the array axis, at increasing standoff
        self.lane_y = np.linspace(0.2 * r, 0.75 * r, cfg.lane_count)
        self.lane_span = np.sqrt(r * r - self.lane_y ** 2)
        self.lane_loop = 3.0 * self.lane_span  # conveyor half-length
        lanes = []
        for li in range(cfg.lane_count):
            count = int(np.ceil(2.0 * self.lane_span[li] / 12.0)) + 2
            offsets = rng.uniform(0.0, 2.0 * self.lane_loop[li], size=count)
            speeds = rng.uniform(*_SPEED_RANGE, size=count)
            direction = 1.0 if li % 2 == 0 else -1.0
            lanes.append((offsets, speeds * direction))
        self.lanes = lanes
        # scatterers: fixed reflectors scattered over the covered half-disc
        az = rng.uniform(0.0, cfg.df_range_deg, size=cfg.num_scatterers)
        dist = rng.uniform(0.3 * r, 1.1 * r, size=cfg.num_scatterers)
        self.scatterer_xy = np.stack([
            dist * np.cos(np.radians(az)), dist * np.sin(np.radians(az))], axis=1)
        self.scatterer_loss = rng.uniform(0.5 * _SCATTER_REFLECT_LOSS,
                                          1.5 * _SCATTER_REFLECT_LOSS,
                                          size=cfg.num_scatterers)
        # blockage: fixed, disjoint azimuth sectors covering nlos_probability
        # of the DF range, so whether a vehicle sees the direct path depends
        # only on where it is (ray-tracing-like), at the configured rate
        self.blocked_sectors: list[tuple[float, float]] = []
        remaining = cfg.nlos_probability * cfg.df_range_deg
        while remaining > 1e-9 * cfg.df_range_deg:
            width = min(rng.uniform(0.08, 0.15) * cfg.df_range_deg, remaining)
            for _ in range(200):
                start = rng.uniform(0.0, cfg.df_range_deg - width)
                if all(start + width <= lo or start >= hi
                       for lo, hi in self.blocked_sectors):
                    self.blocked_sectors.append((start, start + width))
                    remaining -= width
                    break
            else:  # range too fragmented to place more disjoint sectors
                break

    def los_blocked(self, azimuth_deg: float) -> bool:
        return any(lo <= azimuth_deg < hi for lo, hi in self.blocked_sectors)

    def vehicles_at(self, time_index: int) -> list[VehicleState]:
        """All conveyor vehicles currently inside range and DF coverage."""
        cfg = self.cfg
        t_sec = time_index * cfg.time_stride * cfg.slot_duration_s
        out = []
        for li, (offsets, speeds) in enumerate(self.lanes):
            loop = self.lane_loop[li]
            x = (offsets + speeds * t_sec) % (2.0 * loop) - loop
            y = self.lane_y[li]
            for xi, sp in zip(x, speeds):
                if abs(xi) > self.lane_span[li]:
                    continue
                azimuth = math.degrees(math.atan2(y, xi))
                dist = math.hypot(xi, y)
                if 0.0 <= azimuth <= cfg.df_range_deg and 0.0 < dist <= cfg.max_range_m:
                    out.append(VehicleState(azimuth, dist, abs(sp)))
        return out

    def spawn_vehicle(self, rng: np.random.Generator) -> VehicleState:
        """Extra i.i.d. vehicle on a random lane (used when the conveyor is thin)."""
        cfg = self.cfg
        for _ in range(64):
            li = int(rng.integers(len(self.lanes)))
            x = rng.uniform(-self.lane_span[li], self.lane_span[li])
            y = self.lane_y[li]
            azimuth = math.degrees(math.atan2(y, x))
            if 0.0 <= azimuth <= cfg.df_range_deg:
                return VehicleState(azimuth, math.hypot(x, y), rng.uniform(*_SPEED_RANGE))
        # degenerate DF ranges: fall back to broadside of the first lane
        return VehicleState(min(90.0, cfg.df_range_deg / 2.0), float(self.lane_y[0]),
                            rng.uniform(*_SPEED_RANGE))


def channel_from_paths(paths: Sequence[tuple[complex, float, float]],
                       n_antennas: int, n_subcarriers: int,
                       subcarrier_spacing_hz: float) -> np.ndarray:
    """Sum of path contributions: gain * steering(azimuth) x delay ramp.

    Each path is (complex gain, departure azimuth in degrees, delay in
    seconds). Antenna n picks up phase -pi * n * cos(azimuth) under
    half-wavelength spacing; subcarrier k adds -2*pi * k * spacing * delay.
    """
    n = np.arange(n_antennas)[:, None]
    k = np.arange(n_subcarriers)[None, :]
    h = np.zeros((n_antennas, n_subcarriers), dtype=complex)
    for gain, azimuth_deg, delay_s in paths:
        steer = -np.pi * n * np.cos(np.radians(azimuth_deg))
        ramp = -2.0 * np.pi * k * subcarrier_spacing_hz * delay_s
        h += gain * np.exp(1j * (steer + ramp))
    return h


def vehicle_paths(cfg: SceneConfig, scene: Scene, vehicle: VehicleState,
                  rng: np.random.Generator) -> list[tuple[complex, float, float]]:
    """This slot's path set for one vehicle.

    The direct path leaves at the true azimuth with free-space amplitude 1/d
    and carrier-delay phase; it is present unless the azimuth falls in one of
    the scene's fixed blockage sectors (which cover a nlos_probability
    fraction of the DF range). Scattered paths bounce off the scatterers
    nearest the vehicle; the count is drawn per slot, but angle, delay, and
    gain follow from the fixed geometry, so the fingerprint stays a
    (near-)deterministic, strongly position-dependent map.
    """
    psi, d = vehicle.azimuth_deg, vehicle.distance_m
    vx = d * math.cos(math.radians(psi))
    vy = d * math.sin(math.radians(psi))
    paths = []
    if not scene.los_blocked(psi):
        delay = d / SPEED_OF_LIGHT
        phase = -2.0 * np.pi * cfg.carrier_freq_hz * delay
        paths.append(((1.0 / d) * np.exp(1j * phase), psi, delay))
    n_scatter = int(rng.integers(cfg.path_count_range[0], cfg.path_count_range[1] + 1))
    n_scatter = min(n_scatter, cfg.num_scatterers)
    d2_all = np.hypot(scene.scatterer_xy[:, 0] - vx, scene.scatterer_xy[:, 1] - vy)
    for si in np.argsort(d2_all, kind="stable")[:n_scatter]:
        sx, sy = scene.scatterer_xy[si]
        d1 = math.hypot(sx, sy)
        total = d1 + d2_all[si]
        delay = total / SPEED_OF_LIGHT
        phase = -2.0 * np.pi * cfg.carrier_freq_hz * delay
        azimuth = math.degrees(math.atan2(sy, sx))
        gain = (scene.scatterer_loss[si] / total) * np.exp(1j * phase)
        paths.append((gain, azimuth, delay))
    return paths


def simulate_channel(cfg: SceneConfig, scene: Scene, vehicle: VehicleState,
                     rng: np.random.Generator) -> np.ndarray:
    """One vehicle's N_B x N_C CSI matrix, including estimation noise."""
    if not (0.0 < vehicle.distance_m <= cfg.max_range_m):
        raise ValueError(f"vehicle distance {vehicle.distance_m} outside (0, {cfg.max_range_m}]")
    if not (0.0 <= vehicle.azimuth_deg <= cfg.df_range_deg):
        raise ValueError(f"vehicle azimuth {vehicle.azimuth_deg} outside [0, {cfg.df_range_deg}]")
    paths = vehicle_paths(cfg, scene, vehicle, rng)
    h = channel_from_paths(paths, cfg.num_antennas, cfg.num_subcarriers,
                           cfg.subcarrier_spacing_hz)
    if math.isfinite(cfg.csi_noise_snr_db):
        signal_power = float(np.mean(np.abs(h) ** 2))
        sigma2 = signal_power / 10.0 ** (cfg.csi_noise_snr_db / 10.0)
        noise = rng.standard_normal(h.shape) + 1j * rng.standard_normal(h.shape)
        h = h + np.sqrt(sigma2 / 2.0) * noise
    return h


def simulate_detections(cfg: SceneConfig, cameras: CameraArray,
                        vehicles: Sequence[VehicleState],
                        rng: np.random.Generator) -> np.ndarray:
    """Image-derived azimuths for one slot, order shuffled.

    Vehicles outside every camera's view are dropped; the rest are missed
    with `detection_miss_prob`, otherwise reported at their true azimuth plus
    Gaussian noise, routed through the covering camera's pixel plane (with
    integer quantization unless disabled). No CSI correspondence survives.
    """
    omega = cfg.df_range_deg
    detected = []
    for vehicle in vehicles:
        if cameras.camera_for_azimuth(vehicle.azimuth_deg) is None:
            continue
        if rng.random() < cfg.detection_miss_prob:
            continue
        noisy = vehicle.azimuth_deg + rng.normal(0.0, cfg.detection_angle_noise_deg)
        detected.append(clamp_azimuth(noisy, omega))
    if cfg.false_detection_rate > 0.0:
        for _ in range(rng.poisson(cfg.false_detection_rate)):
            detected.append(float(rng.uniform(0.0, omega)))
    routed = []
    for azimuth in detected:
        cam_idx = cameras.camera_for_azimuth(azimuth)
        if cam_idx is None:
            continue
        if cfg.detection_quantize:
            cam = cameras.cameras[cam_idx]
            px = direction_to_pixel(cam, PolarDirection(azimuth, cam.los_elevation_deg))
            px = PixelCoord(round(px.u), round(px.v))
            azimuth = clamp_azimuth(pixel_to_direction(cam, px).azimuth_deg, omega)
        routed.append(azimuth)
    routed = np.array(routed, dtype=float)
    rng.shuffle(routed)
    return routed


def snapshot_at(cfg: SceneConfig, scene: Scene, cameras: CameraArray, time_index: int,
                with_truth: bool = False) -> Snapshot:
    """Generate slot `time_index` from its own derived RNG stream."""
    rng = snapshot_rng(cfg, time_index)
    vehicles = _select_vehicles(cfg, scene, time_index, rng)
    csi = [simulate_channel(cfg, scene, v, rng) for v in vehicles]
    detections = simulate_detections(cfg, cameras, vehicles, rng)
    truth = None
    if with_truth:
        truth = np.array([[v.azimuth_deg, v.distance_m] for v in vehicles])
    return Snapshot(time_index, csi, detections, truth)


def _select_vehicles(cfg: SceneConfig, scene: Scene, time_index: int,
                     rng: np.random.Generator) -> list[VehicleState]:
    lo, hi = cfg.vehicle_count_range
    target = int(rng.integers(lo, hi + 1))
    candidates = scene.vehicles_at(time_index)
    if len(candidates) >= target:
        picked = rng.choice(len(candidates), size=target, replace=False)
        return [candidates[i] for i in picked]
    extra = [scene.spawn_vehicle(rng) for _ in range(target - len(candidates))]
    return candidates + extra


def labeled_sample_at(cfg: SceneConfig, scene: Scene, time_index: int) -> LabeledSample:
    """One supervision pair: a full traffic slot, one vehicle volunteered."""
    rng = snapshot_rng(cfg, time_index)
    vehicles = _select_vehicles(cfg, scene, time_index, rng)
    j = int(rng.integers(len(vehicles)))
    vehicle = vehicles[j]
    csi = simulate_channel(cfg, scene, vehicle, rng)
    return LabeledSample(time_index, csi, np.array([vehicle.azimuth_deg, vehicle.distance_m]))


@dataclass(frozen=True)
class DatasetSizes:
    n_pretrain: int
    n_labeled: int
    n_validation: int

    def __post_init__(self):
        if min(self.n_pretrain, self.n_labeled, self.n_validation) <= 0:
            raise ValueError(f"split sizes must be positive, got {self}")


def generate_datasets(cfg: SceneConfig, sizes: DatasetSizes):
    """Build the (pretrain, labeled, validation) splits.

    Pretrain snapshots keep only CSI and detections; labeled/validation
    entries are per-vehicle (CSI, position) pairs. Splits occupy disjoint
    time-index ranges and the whole thing is reproducible from cfg.seed.
    """
    scene = Scene(cfg)
    cameras = cfg.camera_array()
    pretrain: list[Snapshot] = []
    t = 0
    while len(pretrain) < sizes.n_pretrain:
        snap = snapshot_at(cfg, scene, cameras, t)
        t += 1
        if cfg.drop_empty_snapshots and snap.detected_azimuths.size == 0:
            continue
        pretrain.append(snap)
    labeled = [labeled_sample_at(cfg, scene, t + i) for i in range(sizes.n_labeled)]
    t += sizes.n_labeled
    validation = [labeled_sample_at(cfg, scene, t + i) for i in range(sizes.n_validation)]
    return pretrain, labeled, validation
