"""Angular label construction and noisy-or algebra."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from csipos.labels import AngularGrid, gaussian_vector, label_snapshot, nor_fuse

# frozen from a 50-digit scalar evaluation of the normalized Gaussian,
# K=15, range 180, azimuth 90 (symmetric about bin 8)
GAUSS_K15_PHI90 = np.array([
    9.1347203594886703e-12, 6.07588281731387422e-9, 1.48671950677950705e-6,
    0.000133830225048817917, 0.00443184838822511042, 0.0539909662243058305,
    0.241970723224463055, 0.398942278266865738, 0.241970723224463055,
    0.0539909662243058305, 0.00443184838822511042, 0.000133830225048817917,
    1.48671950677950705e-6, 6.07588281731387422e-9, 9.1347203594886703e-12,
])


class TestAngularGrid:
    def test_centers(self):
        grid = AngularGrid(180.0, 15)
        assert grid.bin_width == 12.0
        np.testing.assert_allclose(grid.centers, np.arange(6.0, 180.0, 12.0))

    def test_peak_bin_is_ceiling(self):
        grid = AngularGrid(180.0, 30)
        assert grid.peak_bin(0.1) == 1
        assert grid.peak_bin(6.0) == 1
        assert grid.peak_bin(6.0001) == 2
        assert grid.peak_bin(180.0) == 30

    def test_peak_bin_at_zero(self):
        assert AngularGrid(180.0, 30).peak_bin(0.0) == 1

    def test_validation(self):
        with pytest.raises(ValueError):
            AngularGrid(180.0, 0)
        with pytest.raises(ValueError):
            AngularGrid(0.0, 10)


class TestGaussianVector:
    def test_single_bin_is_one(self):
        np.testing.assert_array_equal(gaussian_vector(AngularGrid(180.0, 1), 77.0), [1.0])

    def test_symmetric_about_center_bin(self):
        grid = AngularGrid(180.0, 30)
        vec = gaussian_vector(grid, 87.0)  # center of bin 15
        assert np.argmax(vec) == 14
        assert vec[13] == pytest.approx(vec[15], abs=1e-12)
        assert vec[10] == pytest.approx(vec[18], abs=1e-12)

    def test_matches_high_precision_oracle(self):
        vec = gaussian_vector(AngularGrid(180.0, 15), 90.0)
        np.testing.assert_allclose(vec, GAUSS_K15_PHI90, rtol=0, atol=1e-12)

    def test_rejects_out_of_range(self):
        grid = AngularGrid(180.0, 15)
        with pytest.raises(ValueError):
            gaussian_vector(grid, -0.5)
        with pytest.raises(ValueError):
            gaussian_vector(grid, 180.5)

    @settings(max_examples=200, deadline=None)
    @given(st.sampled_from([15, 30, 60]), st.floats(0.0, 180.0))
    def test_unit_sum_and_peak(self, k, phi):
        grid = AngularGrid(180.0, k)
        vec = gaussian_vector(grid, phi)
        assert vec.min() >= 0.0
        assert vec.sum() == pytest.approx(1.0, abs=1e-9)
        if phi % grid.bin_width != 0.0:
            assert np.argmax(vec) + 1 == grid.peak_bin(phi)


dist_lists = st.integers(1, 4).flatmap(
    lambda n: st.lists(
        st.lists(st.floats(0.0, 1.0), min_size=5, max_size=5).map(np.array),
        min_size=n, max_size=n))


class TestNorFuse:
    def test_single_unchanged(self):
        w = np.array([0.1, 0.9, 0.0, 1.0, 0.3])
        np.testing.assert_array_equal(nor_fuse([w]), w)

    def test_two_halves(self):
        a = np.zeros(4)
        a[2] = 0.5
        fused = nor_fuse([a, a])
        assert fused[2] == pytest.approx(0.75)
        np.testing.assert_array_equal(fused[[0, 1, 3]], 0.0)

    def test_one_is_absorbing(self):
        a = np.array([1.0, 0.2])
        b = np.array([0.7, 0.1])
        fused = nor_fuse([a, b, b])
        assert fused[0] == 1.0

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            nor_fuse([])

    def test_shape_and_range_checked(self):
        with pytest.raises(ValueError):
            nor_fuse([np.zeros(3), np.zeros(4)])
        with pytest.raises(ValueError):
            nor_fuse([np.array([1.5])])

    @settings(max_examples=200, deadline=None)
    @given(dist_lists)
    def test_algebra(self, ws):
        fused = nor_fuse(ws)
        assert np.all(fused >= 0.0) and np.all(fused <= 1.0)
        # commutative
        np.testing.assert_allclose(nor_fuse(ws[::-1]), fused, atol=1e-12)
        # associative: fold left equals one-shot
        folded = ws[0]
        for w in ws[1:]:
            folded = nor_fuse([folded, w])
        np.testing.assert_allclose(folded, fused, atol=1e-12)
        # monotone: adding a distribution never decreases any entry
        more = nor_fuse(ws + [np.full(5, 0.25)])
        assert np.all(more >= fused - 1e-15)
        # De Morgan
        product = np.ones(5)
        for w in ws:
            product *= 1.0 - w
        np.testing.assert_allclose(1.0 - fused, product, atol=1e-12)


class TestLabelSnapshot:
    def test_single_azimuth_matches_gaussian(self):
        grid = AngularGrid(180.0, 30)
        np.testing.assert_array_equal(label_snapshot(grid, [42.0]),
                                      gaussian_vector(grid, 42.0))

    def test_permutation_invariant(self):
        grid = AngularGrid(180.0, 30)
        azimuths = [10.0, 95.5, 140.2]
        np.testing.assert_allclose(label_snapshot(grid, azimuths),
                                   label_snapshot(grid, azimuths[::-1]), atol=1e-12)

    def test_duplicate_raises_peak(self):
        grid = AngularGrid(180.0, 30)
        single = label_snapshot(grid, [88.0])
        double = label_snapshot(grid, [88.0, 88.0])
        positive = single > 0
        assert np.all(double[positive] >= single[positive])
        assert double[np.argmax(single)] > single.max()

    def test_empty_is_zeros(self):
        np.testing.assert_array_equal(label_snapshot(AngularGrid(180.0, 30), []),
                                      np.zeros(30))
