"""Tests for the shared value types."""

import math
import unittest

import numpy as np

from demuxforge.model import (
    RB87_MASS,
    ControlCurve,
    DesignParams,
    MappingConfig,
    PhysicalSchedule,
    SpatialGrid,
    TwoLevelState,
    ValidationError,
    WaveFunction,
    compute_hash,
)


class TestDesignParams(unittest.TestCase):
    """Tests for DesignParams validation."""

    def test_accepts_case_a(self):
        """Case A parameters are valid and default to theta_final 0."""
        params = DesignParams(2 * math.pi * 78, 10.0, 10.0, 0.25)
        self.assertEqual(params.theta_final, 0.0)
        self.assertEqual(params.n_samples, 2001)

    def test_rejects_non_positive_duration(self):
        """A zero duration is rejected."""
        with self.assertRaises(ValidationError):
            DesignParams(2 * math.pi * 78, 10.0, 10.0, 0.0)

    def test_rejects_zero_initial_slope(self):
        """The initial bias slope must be nonzero."""
        with self.assertRaises(ValidationError):
            DesignParams(2 * math.pi * 78, 10.0, 0.0, 0.25)

    def test_rejects_other_final_angles(self):
        """Only 0 and pi are accepted as final polar angles."""
        with self.assertRaises(ValidationError):
            DesignParams(2 * math.pi * 78, 10.0, 10.0, 0.25, theta_final=1.0)
        params = DesignParams(2 * math.pi * 78, 10.0, 10.0, 0.25, theta_final=math.pi)
        self.assertEqual(params.theta_final, math.pi)

    def test_validation_error_is_a_value_error(self):
        """ValidationError can be caught as ValueError."""
        with self.assertRaises(ValueError):
            DesignParams(-1.0, 10.0, 10.0, 0.25)


class TestControlCurve(unittest.TestCase):
    """Tests for ControlCurve."""

    def test_properties(self):
        """tf, length and the negative-delta flag follow the samples."""
        curve = ControlCurve(
            times=[0.0, 0.5, 1.0], delta=[2.0, -1.0, 0.0], lam=[0.0, 1.0, 2.0]
        )
        self.assertEqual(curve.tf, 1.0)
        self.assertEqual(len(curve), 3)
        self.assertTrue(curve.has_negative_delta)
        self.assertEqual(curve.controls_at(-1).lam, 2.0)

    def test_arrays_are_read_only(self):
        """Curve arrays cannot be modified in place."""
        curve = ControlCurve(times=[0.0, 1.0], delta=[1.0, 0.0], lam=[0.0, 1.0])
        with self.assertRaises(ValueError):
            curve.delta[0] = 5.0

    def test_rejects_bad_times(self):
        """Times must start at 0 and increase."""
        with self.assertRaises(ValidationError):
            ControlCurve(times=[0.1, 1.0], delta=[1.0, 0.0], lam=[0.0, 1.0])
        with self.assertRaises(ValidationError):
            ControlCurve(times=[0.0, 0.0], delta=[1.0, 0.0], lam=[0.0, 1.0])

    def test_rejects_unknown_kind(self):
        """Only the known provenance tags are accepted."""
        with self.assertRaises(ValidationError):
            ControlCurve(
                times=[0.0, 1.0], delta=[1.0, 0.0], lam=[0.0, 1.0], meta="sketch"
            )


class TestTwoLevelState(unittest.TestCase):
    """Tests for TwoLevelState."""

    def test_basis_states(self):
        """|R> and |L> are orthonormal."""
        right, left = TwoLevelState.right(), TwoLevelState.left()
        self.assertEqual(right.c_r, 1.0)
        self.assertEqual(left.c_l, 1.0)
        self.assertEqual(right.overlap(left), 0.0)

    def test_rejects_unnormalized(self):
        """States must have unit norm."""
        with self.assertRaises(ValidationError):
            TwoLevelState(np.array([1.0, 1.0]))


class TestSpatialGrid(unittest.TestCase):
    """Tests for SpatialGrid."""

    def test_spacing_and_points(self):
        """Points are uniform and include both ends."""
        grid = SpatialGrid(-1.0, 1.0, 101)
        self.assertAlmostEqual(grid.spacing, 0.02)
        self.assertEqual(grid.points[0], -1.0)
        self.assertEqual(grid.points[-1], 1.0)

    def test_rejects_small_grids(self):
        """Fewer than 64 points is rejected."""
        with self.assertRaises(ValidationError):
            SpatialGrid(-1.0, 1.0, 10)


class TestPhysicalSchedule(unittest.TestCase):
    """Tests for PhysicalSchedule."""

    def _schedule(self, dx_shift):
        return PhysicalSchedule(
            times=[0.0, 0.5, 1.0],
            v0=[0.0, 1e-31, 2e-31],
            omega=[400.0, 300.0, 200.0],
            dx_shift=dx_shift,
            residuals=[0.0, 0.1, 0.2],
            saturated=[False, False, True],
            d_l=5.18e-6,
        )

    def test_constant_displacement_is_broadcast(self):
        """A scalar displacement becomes one value per sample."""
        schedule = self._schedule(1e-7)
        np.testing.assert_array_equal(schedule.dx_shift, [1e-7, 1e-7, 1e-7])
        self.assertFalse(schedule.has_moving_lattice)
        self.assertEqual(schedule.params_at(1).omega, 300.0)
        self.assertEqual(schedule.mass, RB87_MASS)

    def test_moving_lattice(self):
        """A varying displacement is detected."""
        self.assertTrue(self._schedule([1e-7, 0.0, -1e-7]).has_moving_lattice)

    def test_rejects_negative_depth(self):
        """Lattice depths must be non-negative."""
        with self.assertRaises(ValidationError):
            PhysicalSchedule(
                times=[0.0, 1.0],
                v0=[0.0, -1.0],
                omega=[1.0, 1.0],
                dx_shift=0.0,
                residuals=[0.0, 0.0],
                saturated=[False, False],
                d_l=1.0,
            )


class TestWaveFunction(unittest.TestCase):
    """Tests for WaveFunction."""

    def test_normalized_and_fidelity(self):
        """normalized() rescales to unit norm and self-fidelity is 1."""
        grid = SpatialGrid(-5.0, 5.0, 201)
        state = WaveFunction.normalized(grid, np.exp(-(grid.points**2)))
        self.assertAlmostEqual(state.norm(), 1.0, places=12)
        self.assertAlmostEqual(state.fidelity(state), 1.0, places=12)

    def test_rejects_unnormalized(self):
        """Raw amplitudes must already be normalized."""
        grid = SpatialGrid(-5.0, 5.0, 201)
        with self.assertRaises(ValidationError):
            WaveFunction(grid, np.ones(201))


class TestMappingConfig(unittest.TestCase):
    """Tests for MappingConfig."""

    def test_defaults_and_bounds(self):
        """The simplex tolerance defaults to cost_tol / 1000."""
        cfg = MappingConfig(
            grid=SpatialGrid(-1e-5, 1e-5, 128),
            d_l=5.18e-6,
            dx_shift=0.0,
            v0_max=1e-30,
            omega_bounds=(10.0, 100.0),
            cost_tol=0.25,
        )
        self.assertEqual(cfg.spread_tol, 0.25e-3)
        self.assertTrue(cfg.in_bounds(0.0, 50.0))
        self.assertFalse(cfg.in_bounds(0.0, 101.0))
        self.assertFalse(cfg.in_bounds(-1e-35, 50.0))

    def test_rejects_unordered_bounds(self):
        """The frequency bounds must be ordered."""
        with self.assertRaises(ValidationError):
            MappingConfig(
                grid=SpatialGrid(-1e-5, 1e-5, 128),
                d_l=5.18e-6,
                dx_shift=0.0,
                v0_max=1e-30,
                omega_bounds=(100.0, 10.0),
                cost_tol=0.25,
            )


class TestComputeHash(unittest.TestCase):
    """Tests for compute_hash."""

    def test_hash_depends_on_content_only(self):
        """Key order does not matter, values do."""
        self.assertEqual(compute_hash({"a": 1, "b": 2}), compute_hash({"b": 2, "a": 1}))
        self.assertNotEqual(compute_hash({"a": 1}), compute_hash({"a": 2}))


if __name__ == "__main__":
    unittest.main()
