"""CSI matrix to 3-channel tensor transform."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from csipos.preprocess import (apply_magnitude_scale, magnitude_scale,
                               phase_differences, stack_snapshot, to_tensor)

TWO_PI = 2.0 * np.pi


def random_csi(seed, shape=(4, 6)):
    rng = np.random.default_rng(seed)
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


class TestPhaseDifferences:
    def test_identical_phases_give_zero(self):
        np.testing.assert_array_equal(phase_differences(np.ones((4, 3), dtype=complex)),
                                      np.zeros((4, 3)))

    def test_hand_evaluated_column_with_wraparound(self):
        # raw phases (0, pi/2, pi, 3pi/2): direct differences give
        # (-pi/2, -pi/2, -pi/2, 3pi/2); the principal-value implementation
        # must agree modulo 2*pi, with identical sin/cos
        col = np.exp(1j * np.array([0.0, np.pi / 2, np.pi, 3 * np.pi / 2]))
        delta = phase_differences(col[:, None])[:, 0]
        expected = np.array([-np.pi / 2, -np.pi / 2, -np.pi / 2, 3 * np.pi / 2])
        wrapped = (delta - expected + np.pi) % TWO_PI - np.pi
        np.testing.assert_allclose(wrapped, 0.0, atol=1e-12)
        np.testing.assert_allclose(np.sin(delta), np.sin(expected), atol=1e-12)
        np.testing.assert_allclose(np.cos(delta), np.cos(expected), atol=1e-12)

    def test_global_phase_cancels(self):
        h = random_csi(0)
        rotated = h * np.exp(1j * 0.7321)
        np.testing.assert_allclose(phase_differences(rotated), phase_differences(h),
                                   atol=1e-12)

    def test_zero_entries_use_arg_zero(self):
        h = np.zeros((3, 2), dtype=complex)
        h[0, 0] = 1.0
        delta = phase_differences(h)
        assert np.all(np.isfinite(delta))
        np.testing.assert_array_equal(delta, np.zeros((3, 2)))

    def test_rejects_non_matrix(self):
        with pytest.raises(ValueError):
            phase_differences(np.ones(5, dtype=complex))


class TestToTensor:
    def test_magnitude_channel(self):
        h = np.full((2, 2), 3 + 4j)
        t = to_tensor(h)
        np.testing.assert_allclose(t[0], 5.0)
        np.testing.assert_allclose(t[1], 0.0, atol=1e-15)  # sin of zero diff
        np.testing.assert_allclose(t[2], 1.0)

    def test_zero_entry_convention(self):
        t = to_tensor(np.zeros((2, 3), dtype=complex))
        np.testing.assert_array_equal(t[0], 0.0)
        np.testing.assert_array_equal(t[1], 0.0)
        np.testing.assert_array_equal(t[2], 1.0)

    def test_pythagorean_identity(self):
        t = to_tensor(random_csi(3, (8, 16)))
        np.testing.assert_allclose(t[1] ** 2 + t[2] ** 2, 1.0, atol=1e-9)

    def test_global_phase_invariance(self):
        h = random_csi(4)
        np.testing.assert_allclose(to_tensor(h * np.exp(1j * 2.1)), to_tensor(h),
                                   atol=1e-12)

    def test_scale_covariance(self):
        h = random_csi(5)
        t1, t2 = to_tensor(h), to_tensor(2.5 * h)
        np.testing.assert_allclose(t2[0], 2.5 * t1[0], rtol=1e-12)
        np.testing.assert_allclose(t2[1:], t1[1:], atol=1e-12)

    @settings(max_examples=50, deadline=None)
    @given(hnp.arrays(np.complex128, (4, 6),
                      elements=st.complex_numbers(max_magnitude=1e3, allow_nan=False,
                                                  allow_infinity=False)))
    def test_shape_and_identity_property(self, h):
        t = to_tensor(h)
        assert t.shape == (3, 4, 6)
        assert np.all(t[0] >= 0.0)
        np.testing.assert_allclose(t[1] ** 2 + t[2] ** 2, 1.0, atol=1e-9)


class TestStackSnapshot:
    def test_singleton(self):
        assert stack_snapshot([random_csi(0)]).shape == (1, 3, 4, 6)

    def test_five(self):
        stacked = stack_snapshot([random_csi(i) for i in range(5)])
        assert stacked.shape == (5, 3, 4, 6)

    def test_slicing_recovers_each(self):
        matrices = [random_csi(i) for i in range(3)]
        stacked = stack_snapshot(matrices)
        for i, h in enumerate(matrices):
            np.testing.assert_array_equal(stacked[i], to_tensor(h))

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            stack_snapshot([])

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError, match="shape"):
            stack_snapshot([random_csi(0, (4, 6)), random_csi(1, (4, 7))])


class TestMagnitudeScale:
    def test_percentile(self):
        h = np.arange(1, 101, dtype=float).reshape(10, 10).astype(complex)
        assert magnitude_scale([h]) == pytest.approx(np.percentile(np.arange(1, 101), 99))

    def test_zero_dataset_degenerates_to_one(self):
        assert magnitude_scale([np.zeros((2, 2), dtype=complex)]) == 1.0
        assert magnitude_scale([]) == 1.0

    def test_apply_scales_only_magnitude(self):
        t = to_tensor(random_csi(7))
        scaled = apply_magnitude_scale(t, 4.0)
        np.testing.assert_allclose(scaled[0], t[0] / 4.0)
        np.testing.assert_array_equal(scaled[1:], t[1:])
