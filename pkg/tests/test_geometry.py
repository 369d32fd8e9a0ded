import csv
import math

import numpy as np
import pytest

from direplab.geometry import (GeometryError, GeometryInstance, circle_point,
                               ddrep_size, orthogonality_residual,
                               random_instance, random_rotation, theta_grid,
                               vaegan_decompose, verify_claims)

CANON = GeometryInstance(S=[1.0, 0.0, 0.0], T=[0.0, 1.0, 0.0])
SQRT2 = math.sqrt(2.0)


class TestInstance:
    def test_amplitude_mismatch_rejected(self):
        with pytest.raises(ValueError, match="amplitude"):
            GeometryInstance(S=[1.0, 0.0, 0.0], T=[0.0, 1.1, 0.0])

    def test_amplitude_within_tolerance_accepted(self):
        GeometryInstance(S=[1.0, 0.0, 0.0], T=[0.0, 1.0 + 1e-12, 0.0])

    def test_zero_and_bad_shapes_rejected(self):
        with pytest.raises(ValueError, match="nonzero"):
            GeometryInstance(S=[0.0, 0.0, 0.0], T=[0.0, 0.0, 0.0])
        with pytest.raises(ValueError, match="3-vector"):
            GeometryInstance(S=[1.0, 0.0], T=[0.0, 1.0])
        with pytest.raises(ValueError, match="finite"):
            GeometryInstance(S=[1.0, 0.0, np.nan], T=[0.0, 1.0, 0.0])

    def test_collinear_is_degenerate_not_an_error(self):
        same = GeometryInstance(S=[1.0, 1.0, 0.0], T=[1.0, 1.0, 0.0])
        assert same.is_degenerate
        opposite = GeometryInstance(S=[1.0, 0.0, 0.0], T=[-1.0, 0.0, 0.0])
        assert opposite.is_degenerate
        assert not CANON.is_degenerate

    def test_degenerate_blocks_plane_dependent_ops(self):
        inst = GeometryInstance(S=[2.0, 0.0, 0.0], T=[2.0, 0.0, 0.0])
        with pytest.raises(GeometryError):
            inst.plane_normal()
        with pytest.raises(GeometryError):
            circle_point(inst, 0.3)
        with pytest.raises(GeometryError, match="degenerate"):
            verify_claims(inst, n_theta=10)

    def test_plane_normal_unit_and_perpendicular(self):
        n = CANON.plane_normal()
        assert np.allclose(n, [0.0, 0.0, 1.0])
        rng = np.random.default_rng(7)
        for _ in range(10):
            inst = random_instance(rng)
            n = inst.plane_normal()
            assert np.linalg.norm(n) == pytest.approx(1.0, abs=1e-12)
            assert abs(np.dot(n, inst.S)) < 1e-12
            assert abs(np.dot(n, inst.T)) < 1e-12


class TestDecompose:
    def test_midpoint_split(self):
        di, dd_s, dd_t = vaegan_decompose(CANON)
        assert np.array_equal(di, [0.5, 0.5, 0.0])
        assert np.linalg.norm(di) == pytest.approx(math.sqrt(0.5), abs=1e-12)
        assert np.array_equal(dd_s, [0.5, -0.5, 0.0])
        assert np.array_equal(dd_t, [-0.5, 0.5, 0.0])

    def test_parts_reassemble_exactly(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            inst = random_instance(rng)
            di, dd_s, dd_t = vaegan_decompose(inst)
            assert np.allclose(di + dd_s, inst.S, rtol=0, atol=1e-12)
            assert np.allclose(di + dd_t, inst.T, rtol=0, atol=1e-12)
            assert np.linalg.norm(dd_s) == pytest.approx(
                np.linalg.norm(dd_t), rel=1e-12)

    def test_degenerate_decomposes_fine(self):
        inst = GeometryInstance(S=[1.0, 1.0, 0.0], T=[1.0, 1.0, 0.0])
        di, dd_s, dd_t = vaegan_decompose(inst)
        assert np.array_equal(di, inst.S)
        assert np.all(dd_s == 0.0) and np.all(dd_t == 0.0)


class TestCirclePoint:
    def test_apex_is_exactly_the_midpoint(self):
        d = circle_point(CANON, math.pi / 2)
        assert np.array_equal(d, (CANON.S + CANON.T) / 2.0)

    def test_radius_at_thirty_degrees(self):
        d = circle_point(CANON, math.pi / 6)
        v = (CANON.S + CANON.T) / 2.0
        assert np.linalg.norm(d) == pytest.approx(0.5 * np.linalg.norm(v),
                                                  abs=1e-12)

    def test_right_angles_at_d(self):
        for theta in (0.1, 0.7, 1.2, math.pi / 2):
            d = circle_point(CANON, theta)
            res_s, res_t = orthogonality_residual(CANON, d)
            assert res_s < 1e-12 and res_t < 1e-12
            # D also subtends the OV diameter at a right angle
            v = (CANON.S + CANON.T) / 2.0
            assert abs(np.dot(d, d - v)) < 1e-12

    def test_theta_domain(self):
        for theta in (0.0, -0.1, math.pi / 2 + 1e-9, 3.2):
            with pytest.raises(ValueError, match="theta"):
                circle_point(CANON, theta)


class TestResidualAndSize:
    def test_residual_zero_at_midpoint(self):
        v = (CANON.S + CANON.T) / 2.0
        assert orthogonality_residual(CANON, v) == (0.0, 0.0)

    def test_residual_large_off_circle(self):
        v = (CANON.S + CANON.T) / 2.0
        res_s, res_t = orthogonality_residual(CANON, 2.0 * v)
        assert res_s > 0.1 and res_t > 0.1

    def test_zero_d_rejected(self):
        with pytest.raises(ValueError, match="zero"):
            orthogonality_residual(CANON, [0.0, 0.0, 0.0])

    def test_size_at_midpoint_is_the_gap(self):
        di, _, _ = vaegan_decompose(CANON)
        assert ddrep_size(CANON, di) == pytest.approx(SQRT2, abs=1e-12)
        rng = np.random.default_rng(11)
        for _ in range(20):
            inst = random_instance(rng)
            di, _, _ = vaegan_decompose(inst)
            assert ddrep_size(inst, di) == pytest.approx(
                float(np.linalg.norm(inst.S - inst.T)), rel=1e-12)

    def test_size_grows_away_from_apex(self):
        small = ddrep_size(CANON, circle_point(CANON, math.pi / 2))
        assert ddrep_size(CANON, circle_point(CANON, 0.9)) > small
        assert ddrep_size(CANON, circle_point(CANON, 0.3)) > small


class TestThetaGrid:
    def test_endpoint_exact_and_range(self):
        grid = theta_grid(1000)
        assert len(grid) == 1000
        assert grid[-1] == math.pi / 2
        assert grid[0] > 0.0
        assert np.all(np.diff(grid) > 0)

    def test_too_few_angles(self):
        with pytest.raises(ValueError):
            theta_grid(1)


class TestVerifyClaims:
    def test_canonical_sweep_passes(self):
        report = verify_claims(CANON, n_theta=1000)
        assert report.passed
        assert report.n_theta == 1000
        assert report.max_residual <= CANON.tolerance
        assert report.max_radius_error <= CANON.tolerance
        assert report.argmin_theta == math.pi / 2
        assert report.min_ddrep_size == pytest.approx(SQRT2, abs=1e-12)

    def test_fine_grid_minimum_sits_at_apex(self):
        report = verify_claims(CANON, n_theta=10000)
        assert report.argmin_theta == math.pi / 2

    def test_csv_dump(self, tmp_path):
        path = str(tmp_path / "sweep.csv")
        verify_claims(CANON, n_theta=50, csv_path=path)
        with open(path, newline="") as f:
            rows = list(csv.reader(f))
        assert rows[0] == ["theta", "od_norm", "ddrep_size",
                           "residual_s", "residual_t"]
        assert len(rows) == 51
        last = [float(c) for c in rows[-1]]
        assert last[0] == pytest.approx(math.pi / 2, rel=1e-12)
        assert last[1] == pytest.approx(math.sqrt(0.5), rel=1e-9)

    def test_rotation_invariance(self):
        rng = np.random.default_rng(5)
        base = verify_claims(CANON, n_theta=200)
        for _ in range(5):
            q = random_rotation(rng)
            rotated = GeometryInstance(S=q @ CANON.S, T=q @ CANON.T)
            report = verify_claims(rotated, n_theta=200)
            assert report.min_ddrep_size == pytest.approx(
                base.min_ddrep_size, rel=1e-9)

    def test_scale_invariance(self):
        scaled = GeometryInstance(S=3.7 * CANON.S, T=3.7 * CANON.T)
        report = verify_claims(scaled, n_theta=200)
        assert report.min_ddrep_size == pytest.approx(3.7 * SQRT2, rel=1e-9)

    def test_random_instances_all_pass(self):
        rng = np.random.default_rng(19)
        for _ in range(20):
            inst = random_instance(rng, scale=float(rng.uniform(0.1, 10.0)))
            report = verify_claims(inst, n_theta=100)
            assert report.passed

    def test_error_carries_theta(self):
        err = GeometryError("bad angle", theta=0.25)
        assert err.theta == 0.25
        assert isinstance(err, ValueError)


class TestRandomHelpers:
    def test_random_instance_properties(self):
        rng = np.random.default_rng(23)
        for _ in range(20):
            inst = random_instance(rng)
            assert np.linalg.norm(inst.S) == pytest.approx(
                float(np.linalg.norm(inst.T)), rel=1e-9)
            assert not inst.is_degenerate

    def test_random_instance_deterministic(self):
        a = random_instance(np.random.default_rng(2))
        b = random_instance(np.random.default_rng(2))
        assert np.array_equal(a.S, b.S) and np.array_equal(a.T, b.T)

    def test_random_rotation_is_orthogonal(self):
        rng = np.random.default_rng(29)
        for _ in range(10):
            q = random_rotation(rng)
            assert np.allclose(q.T @ q, np.eye(3), atol=1e-12)
            assert np.linalg.det(q) == pytest.approx(1.0, abs=1e-12)
