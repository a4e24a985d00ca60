"""Homography algebra, DLT and RANSAC behavior."""
import math

import numpy as np
import pytest

from matchbench.errors import (
    DegenerateConfiguration,
    InvariantViolation,
    NoModel,
    PointAtInfinity,
    TooFewMatches,
)
from matchbench.geometry import (
    Homography,
    RansacConfig,
    apply_homography,
    apply_homography_array,
    corner_transfer_error,
    dlt_homography,
    ransac_homography,
    reprojection_error,
    reprojection_errors,
)


def random_h(rng) -> Homography:
    m = np.array(
        [
            [1 + rng.uniform(-0.2, 0.2), rng.uniform(-0.2, 0.2), rng.uniform(-30, 30)],
            [rng.uniform(-0.2, 0.2), 1 + rng.uniform(-0.2, 0.2), rng.uniform(-30, 30)],
            [rng.uniform(-1e-3, 1e-3), rng.uniform(-1e-3, 1e-3), 1.0],
        ]
    )
    return Homography.from_matrix(m)


class TestApply:
    def test_identity(self):
        assert apply_homography(Homography.identity(), (3.0, 4.0)) == (3.0, 4.0)

    def test_translation(self):
        h = Homography.from_matrix([[1, 0, 2], [0, 1, -1], [0, 0, 1]])
        assert apply_homography(h, (3.0, 4.0)) == (5.0, 3.0)

    def test_point_at_infinity(self):
        # After h33 normalization the denominator is 1 - x: zero at x = 1.
        h = Homography.from_matrix([[1, 0, 0], [0, 1, 0], [1, 0, -1]])
        with pytest.raises(PointAtInfinity):
            apply_homography(h, (1.0, 5.0))
        arr = apply_homography_array(h, [(1.0, 5.0), (3.0, 0.0)])
        assert np.isinf(arr[0]).all() and np.isfinite(arr[1]).all()

    def test_inverse_round_trip(self):
        rng = np.random.RandomState(0)
        for _ in range(100):
            h = random_h(rng)
            pts = rng.uniform(-50, 150, size=(20, 2))
            back = apply_homography_array(h.inverse(), apply_homography_array(h, pts))
            assert np.allclose(back, pts, atol=1e-9)

    def test_invalid_matrix_rejected(self):
        with pytest.raises(InvariantViolation):
            Homography.from_matrix(np.full((3, 3), np.nan))
        with pytest.raises(InvariantViolation):
            Homography.from_matrix(np.zeros((3, 3)))


class TestDlt:
    def test_identity_square(self):
        sq = [(0, 0), (1, 0), (0, 1), (1, 1)]
        h = dlt_homography(sq, sq)
        assert np.allclose(h.matrix, np.eye(3), atol=1e-10)

    def test_pure_translation(self):
        sq = np.array([(0, 0), (1, 0), (0, 1), (1, 1)], float)
        h = dlt_homography(sq, sq + [5.0, 0.0])
        expected = np.array([[1, 0, 5], [0, 1, 0], [0, 0, 1]], float)
        assert np.allclose(h.matrix, expected, atol=1e-10)

    def test_exact_recovery_eight_points(self):
        rng = np.random.RandomState(42)
        h_true = random_h(rng)
        ref = rng.uniform(0, 200, size=(8, 2))
        tgt = apply_homography_array(h_true, ref)
        h = dlt_homography(ref, tgt)
        err = reprojection_errors(h, ref, tgt)
        assert err.max() < 1e-6

    def test_collinear_sample_rejected(self):
        ref = [(0, 0), (1, 1), (2, 2), (3, 3)]
        tgt = [(0, 0), (1, 0), (0, 1), (1, 1)]
        with pytest.raises(DegenerateConfiguration):
            dlt_homography(ref, tgt)

    def test_too_few_points(self):
        with pytest.raises(DegenerateConfiguration):
            dlt_homography([(0, 0), (1, 0), (0, 1)], [(0, 0), (1, 0), (0, 1)])


class TestReprojectionError:
    def test_zero(self):
        assert reprojection_error(Homography.identity(), ((1.0, 2.0), (1.0, 2.0))) == 0.0

    def test_345(self):
        assert reprojection_error(Homography.identity(), ((0.0, 0.0), (3.0, 4.0))) == 5.0

    def test_infinite_is_a_value(self):
        h = Homography.from_matrix([[1, 0, 0], [0, 1, 0], [1, 0, -1]])
        assert reprojection_error(h, ((1.0, 0.0), (0.0, 0.0))) == math.inf


class TestRansac:
    def test_exact_recovery(self):
        rng = np.random.RandomState(1)
        h_true = random_h(rng)
        ref = rng.uniform(0, 300, size=(50, 2))
        tgt = apply_homography_array(h_true, ref)
        res = ransac_homography(ref, tgt, RansacConfig(seed=9))
        assert res.inlier_mask.all()
        assert corner_transfer_error(res.homography, h_true, (300, 300)) < 1e-6

    def test_too_few(self):
        pts = np.zeros((3, 2))
        with pytest.raises(TooFewMatches):
            ransac_homography(pts, pts, RansacConfig())

    def test_all_collinear_gives_no_model(self):
        ref = np.column_stack([np.arange(10.0), np.arange(10.0)])
        with pytest.raises(NoModel):
            ransac_homography(ref, ref, RansacConfig(max_iters=50, seed=3))

    def test_determinism(self):
        rng = np.random.RandomState(2)
        h_true = random_h(rng)
        ref = rng.uniform(0, 300, size=(80, 2))
        tgt = apply_homography_array(h_true, ref) + rng.normal(0, 1.0, (80, 2))
        cfg = RansacConfig(seed=77)
        a = ransac_homography(ref, tgt, cfg)
        b = ransac_homography(ref, tgt, cfg)
        assert np.array_equal(a.homography.matrix, b.homography.matrix)
        assert np.array_equal(a.inlier_mask, b.inlier_mask)
        assert a.iterations_run == b.iterations_run

    def test_refit_inlier_count_at_least_four(self):
        rng = np.random.RandomState(5)
        for trial in range(20):
            h_true = random_h(rng)
            ref = rng.uniform(0, 200, size=(30, 2))
            tgt = apply_homography_array(h_true, ref) + rng.normal(0, 0.5, (30, 2))
            res = ransac_homography(ref, tgt, RansacConfig(seed=trial))
            assert res.inlier_count >= 4


class TestCornerTransfer:
    def test_equal_homographies(self):
        rng = np.random.RandomState(4)
        for _ in range(20):
            h = random_h(rng)
            assert corner_transfer_error(h, h, (123, 45)) == 0.0

    def test_translation(self):
        h = Homography.from_matrix([[1, 0, 2], [0, 1, 0], [0, 0, 1]])
        assert corner_transfer_error(h, Homography.identity(), (100, 100)) == 2.0

    def test_scale_closed_form(self):
        # 1.1x scale on a 100x100 image: corners move 0, 9.9, 9.9, 9.9*sqrt(2).
        h = Homography.from_matrix([[1.1, 0, 0], [0, 1.1, 0], [0, 0, 1]])
        expected = (0.0 + 9.9 + 9.9 + 9.9 * math.sqrt(2)) / 4.0
        got = corner_transfer_error(h, Homography.identity(), (100, 100))
        assert abs(got - expected) < 1e-9
        assert abs(got - 8.45) < 5e-3

    def test_infinite_corner(self):
        h = Homography.from_matrix([[1, 0, 0], [0, 1, 0], [-1 / 99.0, 0, 1]])
        assert corner_transfer_error(h, Homography.identity(), (100, 100)) == math.inf
