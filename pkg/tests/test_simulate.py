"""Channel synthesis, detections, and dataset generation."""

import cmath
import math

import numpy as np
import pytest

from csipos.geometry import CameraModel
from csipos.simulate import (DatasetSizes, Scene, SceneConfig, VehicleState,
                             channel_from_paths, generate_datasets, simulate_channel,
                             simulate_detections, snapshot_at, snapshot_rng,
                             vehicle_paths)

DESK = dict(num_antennas=8, num_subcarriers=16, vehicle_count_range=(1, 3))


def steering_oracle(gain, azimuth_deg, delay_s, n_antennas, n_subcarriers, spacing_hz):
    """Independent scalar re-derivation of the single-path channel entry."""
    h = np.empty((n_antennas, n_subcarriers), dtype=complex)
    for n in range(n_antennas):
        for k in range(n_subcarriers):
            phase = (-math.pi * n * math.cos(math.radians(azimuth_deg))
                     - 2.0 * math.pi * k * spacing_hz * delay_s)
            h[n, k] = gain * cmath.exp(1j * phase)
    return h


class TestChannelFromPaths:
    def test_broadside_all_in_phase(self):
        h = channel_from_paths([(1.0, 90.0, 0.0)], 8, 16, 1e6)
        np.testing.assert_allclose(h, np.ones((8, 16)), atol=1e-12)

    def test_matches_steering_oracle(self):
        for azimuth in (0.0, 37.5, 90.0, 144.2, 180.0):
            for delay in (0.0, 53e-9):
                h = channel_from_paths([(0.8 - 0.3j, azimuth, delay)], 8, 16, 3.85e6)
                expected = steering_oracle(0.8 - 0.3j, azimuth, delay, 8, 16, 3.85e6)
                np.testing.assert_allclose(h, expected, atol=1e-12)

    def test_superposition(self):
        p1 = (0.5 + 0.1j, 40.0, 10e-9)
        p2 = (0.2 - 0.7j, 130.0, 90e-9)
        both = channel_from_paths([p1, p2], 8, 16, 3.85e6)
        separate = (channel_from_paths([p1], 8, 16, 3.85e6)
                    + channel_from_paths([p2], 8, 16, 3.85e6))
        np.testing.assert_array_equal(both, separate)

    def test_single_path_is_rank_one(self):
        h = channel_from_paths([(1.0, 63.0, 40e-9)], 8, 16, 3.85e6)
        s = np.linalg.svd(h, compute_uv=False)
        assert s[1] / s[0] < 1e-12

    def test_gain_doubling_quadruples_energy(self):
        paths = [(0.5 + 0.1j, 40.0, 10e-9), (0.2 - 0.7j, 130.0, 90e-9)]
        doubled = [(2 * g, a, d) for g, a, d in paths]
        e1 = np.sum(np.abs(channel_from_paths(paths, 8, 16, 3.85e6)) ** 2)
        e2 = np.sum(np.abs(channel_from_paths(doubled, 8, 16, 3.85e6)) ** 2)
        assert e2 == pytest.approx(4.0 * e1, rel=1e-12)


class TestSimulateChannel:
    def test_shape_and_noise(self):
        cfg = SceneConfig(**DESK, seed=3)
        scene = Scene(cfg)
        h = simulate_channel(cfg, scene, VehicleState(90.0, 20.0), snapshot_rng(cfg, 0))
        assert h.shape == (8, 16)
        assert np.all(np.isfinite(h.real)) and np.all(np.isfinite(h.imag))

    def test_noiseless_channel_is_path_sum(self):
        cfg = SceneConfig(**DESK, csi_noise_snr_db=math.inf, seed=3)
        scene = Scene(cfg)
        vehicle = VehicleState(75.0, 18.0)
        h = simulate_channel(cfg, scene, vehicle, snapshot_rng(cfg, 1))
        paths = vehicle_paths(cfg, scene, vehicle, snapshot_rng(cfg, 1))
        np.testing.assert_array_equal(
            h, channel_from_paths(paths, 8, 16, cfg.subcarrier_spacing_hz))

    def test_out_of_range_rejected(self):
        cfg = SceneConfig(**DESK)
        scene = Scene(cfg)
        rng = snapshot_rng(cfg, 0)
        with pytest.raises(ValueError):
            simulate_channel(cfg, scene, VehicleState(90.0, 45.0), rng)
        with pytest.raises(ValueError):
            simulate_channel(cfg, scene, VehicleState(-5.0, 20.0), rng)

    def test_blockage_sectors_drop_direct_path(self):
        cfg = SceneConfig(**DESK, nlos_probability=0.4, seed=11)
        scene = Scene(cfg)
        assert scene.blocked_sectors
        lo, hi = scene.blocked_sectors[0]
        blocked = VehicleState((lo + hi) / 2.0, 20.0)
        paths = vehicle_paths(cfg, scene, blocked, snapshot_rng(cfg, 0))
        assert all(abs(az - blocked.azimuth_deg) > 1e-6 for _, az, _ in paths)
        total = sum(hi - lo for lo, hi in scene.blocked_sectors)
        assert total == pytest.approx(0.4 * 180.0, rel=0.01)


def detection_cameras():
    return SceneConfig(**DESK).camera_array()


class TestSimulateDetections:
    def test_noiseless_matches_truth_within_pixel(self):
        cfg = SceneConfig(**DESK, detection_miss_prob=0.0, detection_angle_noise_deg=0.0)
        cams = cfg.camera_array()
        vehicles = [VehicleState(a, 20.0) for a in (25.0, 91.3, 157.0)]
        detected = simulate_detections(cfg, cams, vehicles, snapshot_rng(cfg, 0))
        assert len(detected) == 3
        cam = cfg.cameras[0]
        pixel_width_deg = math.degrees(
            2.0 * math.tan(math.radians(cam.horiz_view_deg / 2)) / cam.pixel_width)
        for truth in (25.0, 91.3, 157.0):
            assert min(abs(d - truth) for d in detected) <= pixel_width_deg

    def test_all_missed(self):
        cfg = SceneConfig(**DESK, detection_miss_prob=1.0)
        detected = simulate_detections(cfg, cfg.camera_array(),
                                       [VehicleState(90.0, 20.0)], snapshot_rng(cfg, 0))
        assert len(detected) == 0

    def test_outside_coverage_dropped(self):
        cfg = SceneConfig(**DESK, cameras=(CameraModel(45, 0, 90, 40, 1280, 720),))
        detected = simulate_detections(cfg, cfg.camera_array(),
                                       [VehicleState(120.0, 20.0), VehicleState(30.0, 20.0)],
                                       snapshot_rng(cfg, 0))
        assert len(detected) == 1

    def test_noise_statistics(self):
        # with quantization off, mean |error| of a half-normal is sigma*sqrt(2/pi)
        sigma = 1.5
        cfg = SceneConfig(**DESK, detection_angle_noise_deg=sigma,
                          detection_quantize=False)
        vehicles = [VehicleState(90.0, 20.0)] * 20_000
        detected = simulate_detections(cfg, cfg.camera_array(), vehicles,
                                       snapshot_rng(cfg, 0))
        mean_abs = np.mean(np.abs(np.asarray(detected) - 90.0))
        assert mean_abs == pytest.approx(sigma * math.sqrt(2 / math.pi), rel=0.05)

    def test_detections_stay_in_range(self):
        cfg = SceneConfig(**DESK, detection_angle_noise_deg=30.0)
        vehicles = [VehicleState(a, 20.0) for a in (1.0, 179.0)] * 200
        detected = simulate_detections(cfg, cfg.camera_array(), vehicles,
                                       snapshot_rng(cfg, 0))
        assert np.all(np.asarray(detected) >= 0.0)
        assert np.all(np.asarray(detected) <= 180.0)


class TestGenerateDatasets:
    def test_disjoint_time_indices(self):
        cfg = SceneConfig(**DESK, seed=9)
        pre, lab, val = generate_datasets(cfg, DatasetSizes(10, 5, 5))
        indices = ([s.time_index for s in pre] + [s.time_index for s in lab]
                   + [s.time_index for s in val])
        assert len(indices) == 20
        assert len(set(indices)) == 20

    def test_deterministic(self):
        cfg = SceneConfig(**DESK, seed=9)
        a = generate_datasets(cfg, DatasetSizes(5, 3, 3))
        b = generate_datasets(cfg, DatasetSizes(5, 3, 3))
        for snap_a, snap_b in zip(a[0], b[0]):
            assert len(snap_a.csi) == len(snap_b.csi)
            for ha, hb in zip(snap_a.csi, snap_b.csi):
                np.testing.assert_array_equal(ha, hb)
            np.testing.assert_array_equal(snap_a.detected_azimuths,
                                          snap_b.detected_azimuths)
        for la, lb in zip(a[1], b[1]):
            np.testing.assert_array_equal(la.csi, lb.csi)
            np.testing.assert_array_equal(la.position, lb.position)

    def test_vehicle_count_range_enforced(self):
        cfg = SceneConfig(**DESK, vehicle_count_range=(2, 4), seed=2)
        pre, _, _ = generate_datasets(cfg, DatasetSizes(40, 1, 1))
        counts = [len(s.csi) for s in pre]
        assert all(2 <= c <= 4 for c in counts)
        assert min(counts) == 2 and max(counts) == 4

    def test_pretrain_has_no_truth(self):
        cfg = SceneConfig(**DESK, seed=2)
        pre, lab, val = generate_datasets(cfg, DatasetSizes(4, 2, 2))
        assert all(s.truth_positions is None for s in pre)
        for sample in lab + val:
            azimuth, distance = sample.position
            assert 0.0 <= azimuth <= 180.0
            assert 0.0 < distance <= 40.0

    def test_snapshot_independent_of_generation_order(self):
        cfg = SceneConfig(**DESK, seed=4)
        scene = Scene(cfg)
        cams = cfg.camera_array()
        later_first = snapshot_at(cfg, scene, cams, 7)
        snapshot_at(cfg, scene, cams, 2)
        again = snapshot_at(cfg, scene, cams, 7)
        for ha, hb in zip(later_first.csi, again.csi):
            np.testing.assert_array_equal(ha, hb)
