# Copyright (c) 2026
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#    http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or
# implied.
# See the License for the specific language governing permissions and
# limitations under the License.

"""Coordinate-space eigenproblems of the harmonic-plus-lattice trap.

The trap is V(x) = m w^2 x^2 / 2 + V0 cos^2(pi (x - dx) / d_l). Hamiltonians
are discretized with 3-point finite differences and Dirichlet boundaries, so
every eigenproblem is symmetric tridiagonal. From the two lowest states of
the symmetric trap (dx = 0) the module builds the localized L/R basis and
extracts the effective two-level controls of any parameter set.
"""

import dataclasses
import logging
import math

import numpy as np
from scipy.linalg import LinAlgError, eigh_tridiagonal

from .model import (
    HBAR,
    DemuxForgeError,
    EigenSolution,
    LRBasis,
    PotentialParams,
    SpatialGrid,
    TwoLevelControls,
)

logger = logging.getLogger(__name__)

D_LATTICE = 5.18e-6
DEFAULT_LEVELS = 6
BOUNDARY_TOL = 1e-8
SYMMETRY_RTOL = 1e-8


class GridTooNarrow(DemuxForgeError):
    """Raised when an eigenstate still has weight at the grid boundary."""


class NonConverged(DemuxForgeError):
    """Raised when the tridiagonal eigensolver fails."""


class InconsistentExtraction(DemuxForgeError):
    """Raised when the two-level matrix elements fail their cross-checks."""


@dataclasses.dataclass(frozen=True)
class ExtractedControls(TwoLevelControls):
    """Two-level controls with the diagnostics of their extraction.

    Attributes:
        lambda_right: One-sided bias (2/hbar)<R|H-shift|R>.
        lambda_left: One-sided bias -(2/hbar)<L|H-shift|L>.
        symmetry_residual: |<L|H|R> - <R|H|L>| relative to the control scale.
        lambda_mismatch: |lambda_right - lambda_left| relative to the control
            scale. Both one-sided forms carry the same even-order offset of a
            displaced lattice, so this grows as dx_shift squared.
    """

    lambda_right: float = 0.0
    lambda_left: float = 0.0
    symmetry_residual: float = 0.0
    lambda_mismatch: float = 0.0


def default_grid() -> SpatialGrid:
    """Grid covering the central lattice period and its neighbouring sites."""
    return SpatialGrid(x_min=-16e-6, x_max=16e-6, n_points=2560)


def harmonic_length(mass: float, omega: float) -> float:
    """Return sqrt(hbar / (m w))."""
    return math.sqrt(HBAR / (mass * omega))


def potential(x, p: PotentialParams):
    """Evaluate the harmonic-plus-lattice potential (J) at positions ``x`` (m)."""
    x = np.asarray(x, dtype=float)
    lattice = np.cos(math.pi * (x - p.dx_shift) / p.d_l) ** 2
    return 0.5 * p.mass * p.omega**2 * x**2 + p.v0 * lattice


def hamiltonian_diagonals(p: PotentialParams, grid: SpatialGrid) -> tuple:
    """Return the main and off diagonals of the finite-difference Hamiltonian."""
    kinetic = HBAR**2 / (p.mass * grid.spacing**2)
    diagonal = kinetic + potential(grid.points, p)
    off_diagonal = np.full(grid.n_points - 1, -0.5 * kinetic)
    return diagonal, off_diagonal


def apply_hamiltonian(psi, p: PotentialParams, grid: SpatialGrid):
    """Apply the finite-difference Hamiltonian to grid function(s) ``psi``.

    Works on a single vector or on the columns of a matrix; amplitudes
    outside the grid are zero.
    """
    diagonal, off_diagonal = hamiltonian_diagonals(p, grid)
    psi = np.asarray(psi)
    if psi.ndim == 2:
        diagonal = diagonal[:, None]
    off = off_diagonal[0]
    result = diagonal * psi
    result[:-1] += off * psi[1:]
    result[1:] += off * psi[:-1]
    return result


def _parity_pair(states: np.ndarray, grid: SpatialGrid) -> tuple:
    """Rotate the lowest two states of a centred trap onto parity eigenstates.

    A deep lattice leaves the doublet degenerate to machine precision and the
    eigensolver may return any rotation of it. On a grid symmetric about
    x = 0 the even and odd combinations are recovered; on other grids the
    states are returned unchanged.
    """
    g, e = states[:, 0], states[:, 1]
    if abs(grid.x_min + grid.x_max) > 1e-12 * (grid.x_max - grid.x_min):
        return g, e
    pair = states[:, :2]
    parity = grid.spacing * pair.T @ pair[::-1]
    _, rotation = np.linalg.eigh(0.5 * (parity + parity.T))
    odd, even = pair @ rotation[:, 0], pair @ rotation[:, 1]
    if np.sum(even) < 0:
        even = -even
    if np.sum(grid.points * odd) < 0:
        odd = -odd
    return even, odd


def _fix_phases(states: np.ndarray, grid: SpatialGrid):
    """Apply the sign convention to the columns of ``states`` in place.

    Level 0 gets a positive grid integral, level 1 a positive first moment
    (a positive slope through the centre, measured where the state has
    weight) and higher levels a positive largest-magnitude entry.
    """
    x = grid.points
    for level in range(states.shape[1]):
        column = states[:, level]
        if level == 0:
            sign = np.sign(np.sum(column))
        elif level == 1:
            sign = np.sign(np.sum(x * column))
        else:
            sign = np.sign(column[np.argmax(np.abs(column))])
        if sign < 0:
            states[:, level] = -column


def align_phases(solution: EigenSolution, reference: EigenSolution) -> EigenSolution:
    """Flip states so that each overlaps positively with the reference level."""
    states = np.array(solution.states)
    levels = min(solution.levels, reference.levels)
    overlaps = np.einsum("ij,ij->j", reference.states[:, :levels], states[:, :levels])
    flip = np.flatnonzero(overlaps < 0)
    states[:, flip] *= -1
    return dataclasses.replace(solution, states=states)


def solve_stationary(
    p: PotentialParams,
    grid: SpatialGrid,
    k: int = DEFAULT_LEVELS,
    boundary_tol: float = BOUNDARY_TOL,
    reference: EigenSolution | None = None,
) -> EigenSolution:
    """Solve for the ``k`` lowest eigenpairs of the trap Hamiltonian.

    Args:
        p: Trap parameters.
        grid: Spatial grid.
        k: Number of levels.
        boundary_tol: Largest boundary amplitude of level k-1 allowed,
            relative to its peak.
        reference: Previous solution along a parameter path; when given,
            signs are flipped to keep overlaps with it positive.

    Returns:
        Energies (J) in ascending order and grid-normalized real states.

    Raises:
        GridTooNarrow: If level k-1 leaks to the grid boundary.
        NonConverged: If the eigensolver fails.
    """
    if not 1 <= k <= grid.n_points:
        raise ValueError(f"cannot solve for {k} levels on {grid.n_points} points")
    diagonal, off_diagonal = hamiltonian_diagonals(p, grid)
    try:
        energies, vectors = eigh_tridiagonal(
            diagonal, off_diagonal, select="i", select_range=(0, k - 1)
        )
    except (LinAlgError, ValueError) as exc:
        raise NonConverged(f"tridiagonal eigensolver failed: {exc}") from exc
    if energies.size != k or not np.all(np.isfinite(vectors)):
        raise NonConverged(f"eigensolver returned {energies.size} of {k} levels")

    states = vectors / math.sqrt(grid.spacing)
    top = np.abs(states[:, -1])
    edge = max(top[0], top[-1]) / top.max()
    if edge >= boundary_tol:
        raise GridTooNarrow(
            f"level {k - 1} has boundary amplitude {edge:.3g} of its peak "
            f"(limit {boundary_tol:.1g})"
        )
    _fix_phases(states, grid)
    solution = EigenSolution(grid=grid, energies=energies, states=states)
    if reference is not None:
        solution = align_phases(solution, reference)
    return solution


def lr_basis(p: PotentialParams, grid: SpatialGrid) -> LRBasis:
    """Build the L/R basis of the symmetric trap and the shift of the full one.

    Examples:
        >>> from demuxforge.model import RB87_MASS
        >>> trap = PotentialParams(RB87_MASS, 2 * math.pi * 78, 0.0, 0.0, D_LATTICE)
        >>> basis = lr_basis(trap, default_grid())
        >>> abs(default_grid().inner(basis.left, basis.right)) < 1e-10
        True
    """
    symmetric = solve_stationary(dataclasses.replace(p, dx_shift=0.0), grid, k=2)
    full = symmetric if p.dx_shift == 0 else solve_stationary(p, grid, k=2)
    g, e = _parity_pair(symmetric.states, grid)
    return LRBasis(
        g=g,
        e=e,
        left=(g - e) / math.sqrt(2),
        right=(g + e) / math.sqrt(2),
        shift=0.5 * float(full.energies[0] + full.energies[1]),
        e_minus=float(full.energies[0]),
        e_plus=float(full.energies[1]),
        gap_symmetric=float(symmetric.energies[1] - symmetric.energies[0]),
    )


def extract_controls(
    p: PotentialParams,
    grid: SpatialGrid,
    lambda_rtol: float | None = None,
) -> ExtractedControls:
    """Extract the effective tunneling rate and bias of a trap.

    delta = -(2/hbar) <L|H|R> and lambda = (<R|H|R> - <L|H|L>)/hbar, with H
    applied by finite differences. The bias is the mean of the one-sided
    forms (2/hbar)<R|H-shift|R> and -(2/hbar)<L|H-shift|L>; a displaced
    lattice adds the same second-order offset to both, which cancels in the
    difference. The Hermiticity cross-check <L|H|R> = <R|H|L> is always
    enforced. The one-sided forms agree exactly only for a centred lattice,
    so their agreement is enforced when ``dx_shift`` is 0 or ``lambda_rtol``
    is given.

    Raises:
        InconsistentExtraction: If a cross-check fails.
    """
    basis = lr_basis(p, grid)
    h_right = apply_hamiltonian(basis.right, p, grid)
    h_left = apply_hamiltonian(basis.left, p, grid)
    left_h_right = grid.inner(basis.left, h_right).real
    right_h_left = grid.inner(basis.right, h_left).real
    right_h_right = grid.inner(basis.right, h_right).real
    left_h_left = grid.inner(basis.left, h_left).real

    delta = -2.0 / HBAR * left_h_right
    lambda_right = 2.0 / HBAR * (right_h_right - basis.shift)
    lambda_left = -2.0 / HBAR * (left_h_left - basis.shift)
    lam = 0.5 * (lambda_right + lambda_left)

    # The doublet gap vanishes in deep lattices; never scale below the trap.
    scale = max(basis.gap_symmetric / HBAR, abs(delta), abs(lam), p.omega)
    symmetry = abs(left_h_right - right_h_left) * 2.0 / HBAR / scale
    mismatch = abs(lambda_right - lambda_left) / scale
    if symmetry > SYMMETRY_RTOL:
        raise InconsistentExtraction(
            f"<L|H|R> and <R|H|L> differ by {symmetry:.3g} of the control scale"
        )
    tolerance = lambda_rtol
    if tolerance is None and p.dx_shift == 0:
        tolerance = SYMMETRY_RTOL
    if tolerance is not None and mismatch > tolerance:
        raise InconsistentExtraction(
            f"bias from R and from L differ by {mismatch:.3g} of the control scale"
        )
    return ExtractedControls(
        delta=float(delta),
        lam=float(lam),
        lambda_right=float(lambda_right),
        lambda_left=float(lambda_left),
        symmetry_residual=float(symmetry),
        lambda_mismatch=float(mismatch),
    )


def well_populations(psi, grid: SpatialGrid) -> tuple:
    """Probabilities on the left (x < 0) and right (x >= 0) half-lines."""
    density = np.abs(np.asarray(psi)) ** 2 * grid.spacing
    right = grid.points >= 0.0
    return float(density[~right].sum()), float(density[right].sum())
