"""Tests for the spectral module."""

import math
import unittest
from unittest.mock import patch

import numpy as np

from demuxforge.model import HBAR, PLANCK, RB87_MASS, PotentialParams, SpatialGrid
from demuxforge.spectral import (
    D_LATTICE,
    GridTooNarrow,
    InconsistentExtraction,
    _parity_pair,
    align_phases,
    apply_hamiltonian,
    default_grid,
    extract_controls,
    harmonic_length,
    lr_basis,
    potential,
    solve_stationary,
    well_populations,
)

OMEGA0 = 2 * math.pi * 78
A0 = harmonic_length(RB87_MASS, OMEGA0)


def _trap(v0_hz=0.0, dx_shift=0.0, omega=OMEGA0):
    return PotentialParams(RB87_MASS, omega, PLANCK * v0_hz, dx_shift, D_LATTICE)


def _harmonic_grid(half_width, n_points):
    return SpatialGrid(-half_width * A0, half_width * A0, n_points)


def _nodes(state):
    significant = state[np.abs(state) > 1e-6 * np.abs(state).max()]
    return int(np.count_nonzero(np.diff(np.sign(significant))))


class TestPotential(unittest.TestCase):
    """Tests for potential."""

    def test_lattice_maximum_at_displacement(self):
        """At x = dx_shift the lattice contributes its full depth."""
        trap = _trap(1000.0, 1e-7)
        expected = 0.5 * RB87_MASS * OMEGA0**2 * 1e-14 + trap.v0
        self.assertAlmostEqual(float(potential(1e-7, trap)) / expected, 1.0)

    def test_lattice_node(self):
        """Half a period away from the maximum only the harmonic term is left."""
        trap = _trap(1000.0, 1e-7)
        x = 1e-7 + D_LATTICE / 2
        harmonic = 0.5 * RB87_MASS * OMEGA0**2 * x**2
        self.assertAlmostEqual(float(potential(x, trap)) / harmonic, 1.0, places=12)

    def test_pure_harmonic(self):
        """Without a lattice the potential is harmonic everywhere."""
        x = np.linspace(-5e-6, 5e-6, 11)
        np.testing.assert_allclose(
            potential(x, _trap()), 0.5 * RB87_MASS * OMEGA0**2 * x**2
        )


class TestSolveStationary(unittest.TestCase):
    """Tests for solve_stationary."""

    def test_harmonic_spectrum_fine_grid(self):
        """The harmonic levels are reproduced to 1e-5 on 4096 points."""
        solution = solve_stationary(_trap(), _harmonic_grid(10, 4096), k=4)
        expected = HBAR * OMEGA0 * (np.arange(4) + 0.5)
        np.testing.assert_allclose(solution.energies, expected, rtol=1e-5)

    def test_harmonic_spectrum_coarse_grid(self):
        """On 1024 points the second-order error stays below 2e-4."""
        solution = solve_stationary(_trap(), _harmonic_grid(10, 1024), k=4)
        expected = HBAR * OMEGA0 * (np.arange(4) + 0.5)
        np.testing.assert_allclose(solution.energies, expected, rtol=2e-4)

    def test_node_counts(self):
        """Level n has n nodes."""
        solution = solve_stationary(_trap(), _harmonic_grid(10, 1024), k=4)
        nodes = [_nodes(solution.states[:, level]) for level in range(4)]
        self.assertEqual(nodes, [0, 1, 2, 3])

    def test_orthonormal_states(self):
        """States are orthonormal under the grid inner product."""
        grid = default_grid()
        solution = solve_stationary(_trap(1500.0, 1e-7), grid)
        gram = grid.spacing * solution.states.T @ solution.states
        np.testing.assert_allclose(gram, np.eye(solution.levels), atol=1e-10)
        self.assertTrue(np.all(np.diff(solution.energies) > 0))

    def test_phase_convention(self):
        """Level 0 has a positive integral and level 1 rises through the centre."""
        grid = _harmonic_grid(10, 1024)
        solution = solve_stationary(_trap(), grid, k=2)
        self.assertGreater(solution.states[:, 0].sum(), 0.0)
        right = grid.points > 0
        self.assertGreater(solution.states[right, 1].sum(), 0.0)

    def test_parity(self):
        """With a centred lattice the levels alternate between even and odd."""
        solution = solve_stationary(_trap(500.0), default_grid(), k=4)
        for level in range(4):
            state = solution.states[:, level]
            np.testing.assert_allclose(
                state[::-1],
                (-1) ** level * state,
                atol=1e-6 * np.abs(state).max(),
            )

    def test_doublet_splitting_shrinks_with_depth(self):
        """Deepening the lattice closes the lowest doublet."""
        grid = default_grid()
        splittings = []
        for v0_hz in (250.0, 500.0, 1000.0, 2000.0):
            energies = solve_stationary(_trap(v0_hz), grid, k=2).energies
            splittings.append(energies[1] - energies[0])
        self.assertTrue(np.all(np.diff(splittings) < 0))

    def test_grid_too_narrow(self):
        """States reaching the boundary are rejected."""
        with self.assertRaises(GridTooNarrow):
            solve_stationary(_trap(), _harmonic_grid(3, 256), k=4)

    def test_rejects_bad_level_count(self):
        """At least one level must be requested."""
        with self.assertRaises(ValueError):
            solve_stationary(_trap(), default_grid(), k=0)

    def test_grid_convergence(self):
        """Doubling the resolution of the default grid barely moves the doublet."""
        coarse = default_grid()
        fine = SpatialGrid(coarse.x_min, coarse.x_max, 2 * coarse.n_points)
        trap = _trap(2000.0, 1e-7, omega=2 * math.pi * 60)
        np.testing.assert_allclose(
            solve_stationary(trap, coarse, k=2).energies,
            solve_stationary(trap, fine, k=2).energies,
            rtol=1e-4,
        )

    def test_align_phases(self):
        """Flipped states are brought back in line with a reference."""
        grid = default_grid()
        reference = solve_stationary(_trap(1000.0), grid, k=3)
        flipped = reference.states * np.array([1.0, -1.0, -1.0])
        solution = type(reference)(grid, reference.energies, flipped)
        aligned = align_phases(solution, reference)
        np.testing.assert_array_equal(aligned.states, reference.states)


class TestHamiltonian(unittest.TestCase):
    """Tests for apply_hamiltonian."""

    def test_hermitian(self):
        """<u|Hv> equals <Hu|v> for random grid functions."""
        grid = default_grid()
        trap = _trap(1000.0, 1e-7)
        rng = np.random.default_rng(7)
        u = rng.normal(size=grid.n_points) + 1j * rng.normal(size=grid.n_points)
        v = rng.normal(size=grid.n_points) + 1j * rng.normal(size=grid.n_points)
        left = grid.inner(u, apply_hamiltonian(v, trap, grid))
        right = grid.inner(apply_hamiltonian(u, trap, grid), v)
        self.assertLess(abs(left - right), 1e-10 * abs(left))

    def test_columns(self):
        """Matrices are handled column by column."""
        grid = default_grid()
        trap = _trap(1000.0)
        states = solve_stationary(trap, grid, k=2).states
        applied = apply_hamiltonian(states, trap, grid)
        np.testing.assert_allclose(
            applied[:, 1], apply_hamiltonian(states[:, 1], trap, grid)
        )


class TestLRBasis(unittest.TestCase):
    """Tests for lr_basis."""

    def test_orthonormal(self):
        """L and R are orthonormal."""
        grid = default_grid()
        basis = lr_basis(_trap(1500.0, 1e-7), grid)
        self.assertLess(abs(grid.inner(basis.left, basis.right)), 1e-10)
        self.assertAlmostEqual(grid.inner(basis.right, basis.right).real, 1.0)

    def test_shift_of_centred_lattice(self):
        """With no displacement the shift is the doublet midpoint."""
        grid = default_grid()
        trap = _trap(1500.0)
        energies = solve_stationary(trap, grid, k=2).energies
        basis = lr_basis(trap, grid)
        self.assertEqual(basis.shift, 0.5 * (energies[0] + energies[1]))
        self.assertEqual(basis.e_minus, energies[0])

    def test_parity_pair_undoes_rotation(self):
        """A rotated doublet is brought back to its even and odd states."""
        grid = default_grid()
        states = solve_stationary(_trap(1000.0), grid, k=2).states
        angle = math.pi / 6
        rotation = np.array(
            [[math.cos(angle), -math.sin(angle)], [math.sin(angle), math.cos(angle)]]
        )
        even, odd = _parity_pair(states @ rotation, grid)
        expected_even, expected_odd = _parity_pair(states, grid)
        peak = np.abs(states).max()
        np.testing.assert_allclose(even, expected_even, atol=1e-8 * peak)
        np.testing.assert_allclose(odd, expected_odd, atol=1e-8 * peak)
        np.testing.assert_allclose(even[::-1], even, atol=1e-8 * peak)
        np.testing.assert_allclose(odd[::-1], -odd, atol=1e-8 * peak)

    def test_localized_in_deep_lattice(self):
        """In a deep lattice R lives on the right half-line and L on the left."""
        grid = default_grid()
        basis = lr_basis(_trap(5000.0), grid)
        self.assertLess(basis.gap_symmetric, 0.01 * HBAR * OMEGA0)
        self.assertGreater(well_populations(basis.right, grid)[1], 0.95)
        self.assertGreater(well_populations(basis.left, grid)[0], 0.95)


class TestExtractControls(unittest.TestCase):
    """Tests for extract_controls."""

    def test_harmonic_trap(self):
        """A pure harmonic trap has delta = w0 and no bias."""
        grid = _harmonic_grid(8, 16384)
        controls = extract_controls(_trap(), grid)
        self.assertAlmostEqual(controls.delta / OMEGA0, 1.0, delta=1e-6)
        self.assertLess(abs(controls.lam), 1e-8 * OMEGA0)

    def test_centred_lattice_has_no_bias(self):
        """A centred lattice gives lambda = 0 for any depth."""
        for v0_hz in (200.0, 2000.0):
            controls = extract_controls(_trap(v0_hz), default_grid())
            self.assertLess(abs(controls.lam), 1e-8 * OMEGA0)
            self.assertGreater(controls.delta, 0.0)

    def test_bias_follows_displacement(self):
        """Shifting the lattice right raises the right well."""
        grid = default_grid()
        self.assertGreater(extract_controls(_trap(1000.0, 1e-7), grid).lam, 0.0)
        self.assertLess(extract_controls(_trap(1000.0, -1e-7), grid).lam, 0.0)

    def test_bias_of_isolated_wells(self):
        """A deep displaced lattice keeps only the odd lattice term in the bias.

        With tunneling frozen out the bias is set by the harmonic tilt across
        the wells, about 2 m w^2 dx <x>_R / hbar, even though each one-sided
        diagonal element is offset by hundreds of rad/s.
        """
        omega = 2 * math.pi * 19
        trap = _trap(5000.0, 1e-7, omega)
        grid = default_grid()
        controls = extract_controls(trap, grid)
        self.assertLess(abs(controls.delta), 1e-3 * OMEGA0)
        self.assertGreater(controls.lam, 5.0)
        self.assertLess(controls.lam, 20.0)

        right = lr_basis(trap, grid).right
        k = math.pi / D_LATTICE
        odd_term = grid.spacing * np.sum(right**2 * np.sin(2 * k * grid.points))
        expected = trap.v0 * math.sin(2 * k * trap.dx_shift) / HBAR * odd_term
        self.assertAlmostEqual(controls.lam / expected, 1.0, delta=1e-6)

        self.assertGreater(controls.lambda_right - controls.lambda_left, 100.0)
        self.assertAlmostEqual(
            controls.lam, 0.5 * (controls.lambda_right + controls.lambda_left)
        )
        self.assertGreater(controls.lambda_mismatch, 0.0)

    def test_deeper_lattice_suppresses_tunneling(self):
        """Tunneling falls as the lattice deepens."""
        grid = default_grid()
        shallow = extract_controls(_trap(1000.0, 1e-7), grid)
        deep = extract_controls(_trap(3000.0, 1e-7), grid)
        self.assertLess(deep.delta, shallow.delta)

    def test_inconsistent_matrix_elements(self):
        """A non-symmetric operator is reported."""
        calls = []

        def skewed(psi, p, grid):
            calls.append(psi)
            scale = 1.0 if len(calls) == 1 else 1.1
            return scale * apply_hamiltonian(psi, p, grid)

        with patch("demuxforge.spectral.apply_hamiltonian", side_effect=skewed):
            with self.assertRaises(InconsistentExtraction):
                extract_controls(_trap(1000.0, 1e-7), default_grid())


class TestWellPopulations(unittest.TestCase):
    """Tests for well_populations."""

    def test_packet_on_the_right(self):
        """A packet centred at +3 um lies on the right half-line."""
        grid = default_grid()
        psi = np.exp(-(((grid.points - 3e-6) / 5e-7) ** 2))
        psi /= math.sqrt(grid.inner(psi, psi).real)
        left, right = well_populations(psi, grid)
        self.assertLess(left, 1e-12)
        self.assertAlmostEqual(right, 1.0)


if __name__ == "__main__":
    unittest.main()
