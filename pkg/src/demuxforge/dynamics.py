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

"""Time-dependent propagation of a wavefunction under a trap schedule.

States are advanced with Crank-Nicolson steps on the same finite-difference
Hamiltonian the eigensolver uses, with the potential evaluated at the
midpoint of every step. Schedule values between samples come from monotone
cubic interpolation. Populations of the instantaneous eigenbasis, energy
statistics and <x> are recorded on a coarser diagnostic time grid.
"""

import dataclasses
import logging
import math
from typing import Mapping

import numpy as np
from scipy.integrate import trapezoid
from scipy.interpolate import PchipInterpolator
from scipy.linalg import solve_banded

from . import spectral
from .model import (
    HBAR,
    PLANCK,
    RB87_MASS,
    DemuxForgeError,
    PhysicalSchedule,
    PotentialParams,
    PropagationResult,
    SpatialGrid,
    ValidationError,
    WaveFunction,
)

logger = logging.getLogger(__name__)

DEFAULT_DT = 2e-6
DIAGNOSTIC_SAMPLES = 201
FIDELITY_CHANGE_TOL = 1e-7
MAX_HALVINGS = 4
EDGE_WARNING = 1e-6
STATIONARY_SPREAD = 1e-8


class NotConverged(DemuxForgeError):
    """Raised when halving dt keeps changing the result beyond tolerance."""


def schedule_potential(schedule: PhysicalSchedule, t) -> tuple:
    """Interpolate V0, w and the lattice displacement at times ``t``."""
    t = np.clip(np.asarray(t, dtype=float), schedule.times[0], schedule.times[-1])
    v0 = PchipInterpolator(schedule.times, schedule.v0)(t)
    omega = PchipInterpolator(schedule.times, schedule.omega)(t)
    dx_shift = PchipInterpolator(schedule.times, schedule.dx_shift)(t)
    return np.maximum(v0, 0.0), np.maximum(omega, 0.0), dx_shift


def _params(schedule: PhysicalSchedule, v0, omega, dx_shift) -> PotentialParams:
    return PotentialParams(
        mass=schedule.mass,
        omega=float(omega),
        v0=float(v0),
        dx_shift=float(dx_shift),
        d_l=schedule.d_l,
    )


def coherent_state(
    grid: SpatialGrid, mass: float, omega: float, displacement: float = 0.0
) -> WaveFunction:
    """Harmonic-oscillator ground state displaced by ``displacement`` (m)."""
    length = spectral.harmonic_length(mass, omega)
    x = grid.points - displacement
    return WaveFunction.normalized(grid, np.exp(-0.5 * (x / length) ** 2))


def eigenstate(
    p: PotentialParams, grid: SpatialGrid, level: int = 0
) -> WaveFunction:
    """Return one eigenstate of the trap as a wavefunction."""
    solution = spectral.solve_stationary(p, grid, k=level + 1)
    return WaveFunction.normalized(grid, solution.states[:, level])


class _Diagnostics:
    """Accumulates populations, energy moments and <x> along a propagation."""

    def __init__(self, schedule: PhysicalSchedule, grid: SpatialGrid, levels: int):
        self.schedule = schedule
        self.grid = grid
        self.levels = levels
        self.rows = []
        self.reference = None

    def record(self, t: float, psi: np.ndarray):
        v0, omega, dx_shift = schedule_potential(self.schedule, t)
        p = _params(self.schedule, v0, omega, dx_shift)
        # far lattice sites may touch the box; the propagated state never does
        basis = spectral.solve_stationary(
            p, self.grid, k=self.levels, boundary_tol=math.inf, reference=self.reference
        )
        self.reference = basis
        h = self.grid.spacing
        populations = np.abs(h * (basis.states.T @ psi)) ** 2
        h_psi = spectral.apply_hamiltonian(psi, p, self.grid)
        mean = h * np.vdot(psi, h_psi).real
        residual = h_psi - mean * psi
        variance = h * np.vdot(residual, residual).real
        density = np.abs(psi) ** 2
        self.rows.append(
            (
                t,
                populations,
                mean,
                math.sqrt(max(variance, 0.0)),
                h * float(np.sum(self.grid.points * density)),
                abs(h * float(density.sum()) - 1.0),
            )
        )

    def column(self, index: int) -> np.ndarray:
        return np.array([row[index] for row in self.rows])


def _propagate_once(
    schedule: PhysicalSchedule,
    psi0: WaveFunction,
    dt: float,
    levels: int,
    n_diagnostics: int,
    targets: Mapping[str, WaveFunction],
) -> PropagationResult:
    grid = psi0.grid
    n_steps = max(1, math.ceil(schedule.tf / dt - 1e-9))
    step = schedule.tf / n_steps
    midpoints = schedule.times[0] + (np.arange(n_steps) + 0.5) * step
    v0_mid, omega_mid, dx_mid = schedule_potential(schedule, midpoints)

    checkpoints = np.unique(
        np.rint(np.linspace(0, n_steps, max(n_diagnostics, 2))).astype(int)
    )
    checkpoint_set = set(checkpoints.tolist())
    diagnostics = _Diagnostics(schedule, grid, levels)

    kinetic = HBAR**2 / (schedule.mass * grid.spacing**2)
    coupling = 0.5j * step / HBAR
    off = -0.5 * kinetic
    bands = np.zeros((3, grid.n_points), dtype=complex)
    bands[0, 1:] = coupling * off
    bands[2, :-1] = coupling * off

    psi = np.array(psi0.amplitudes)
    diagnostics.record(schedule.times[0], psi)
    x = grid.points
    for index in range(n_steps):
        p = _params(schedule, v0_mid[index], omega_mid[index], dx_mid[index])
        diagonal = kinetic + spectral.potential(x, p)
        bands[1] = 1.0 + coupling * diagonal
        rhs = (1.0 - coupling * diagonal) * psi
        rhs[:-1] -= coupling * off * psi[1:]
        rhs[1:] -= coupling * off * psi[:-1]
        psi = solve_banded((1, 1), bands, rhs, check_finite=False)
        if index + 1 in checkpoint_set:
            diagnostics.record(schedule.times[0] + (index + 1) * step, psi)

    edge = max(abs(psi[0]), abs(psi[-1])) / np.abs(psi).max()
    if edge > EDGE_WARNING:
        logger.warning("Wavefunction reaches the grid boundary (%.3g of peak)", edge)

    final_state = WaveFunction(grid, psi)
    result = PropagationResult(
        times=diagnostics.column(0),
        populations=np.vstack(diagnostics.column(1)),
        final_state=final_state,
        fidelity_targets={
            name: target.fidelity(final_state) for name, target in targets.items()
        },
        energy_mean=diagnostics.column(2),
        energy_std=diagnostics.column(3),
        position_mean=diagnostics.column(4),
        norm_drift=float(diagnostics.column(5).max()),
        dt=step,
    )
    return dataclasses.replace(result, aa_min_time=aa_bound(result))


def _change(coarse: PropagationResult, fine: PropagationResult) -> float:
    if coarse.fidelity_targets:
        return max(
            abs(coarse.fidelity_targets[name] - fine.fidelity_targets[name])
            for name in coarse.fidelity_targets
        )
    return 1.0 - coarse.final_state.fidelity(fine.final_state)


def propagate(  # pylint: disable=too-many-arguments
    schedule: PhysicalSchedule,
    psi0: WaveFunction,
    dt: float = DEFAULT_DT,
    levels: int = spectral.DEFAULT_LEVELS,
    n_diagnostics: int = DIAGNOSTIC_SAMPLES,
    targets: Mapping[str, WaveFunction] | None = None,
    verify: bool = False,
    dt_min: float | None = None,
) -> PropagationResult:
    """Propagate ``psi0`` through ``schedule`` with Crank-Nicolson steps.

    The step is shrunk so that an integer number of steps spans the schedule.

    Args:
        schedule: Trap parameters over time.
        psi0: Initial wavefunction; its grid is used throughout.
        dt: Requested time step (s).
        levels: Instantaneous levels tracked in the populations.
        n_diagnostics: Number of diagnostic times, endpoints included.
        targets: Named states whose final fidelity is reported.
        verify: Repeat with dt halved until the final fidelities change by
            less than 1e-7.
        dt_min: Smallest step tried in verification, dt/16 by default.

    Returns:
        The propagation result; with ``verify`` it is the finest run, and
        ``convergence`` lists the steps tried.

    Raises:
        ValidationError: If dt is not positive.
        NotConverged: If verification reaches dt_min without converging.
    """
    if dt <= 0:
        raise ValidationError(f"dt must be positive, got {dt}")
    targets = dict(targets or {})
    result = _propagate_once(schedule, psi0, dt, levels, n_diagnostics, targets)
    if not verify:
        return result

    dt_min = dt / 2**MAX_HALVINGS if dt_min is None else dt_min
    history = [{"dt": result.dt, "change": None}]
    while True:
        if result.dt / 2 < dt_min * (1 - 1e-9):
            raise NotConverged(
                f"final fidelities still change by {history[-1]['change']} "
                f"at dt={result.dt:.3g} s"
            )
        finer = _propagate_once(
            schedule, psi0, result.dt / 2, levels, n_diagnostics, targets
        )
        change = _change(result, finer)
        history.append({"dt": finer.dt, "change": change})
        logger.info("dt=%.3g s changes the final fidelity by %.3g", finer.dt, change)
        result = finer
        if change < FIDELITY_CHANGE_TOL:
            return dataclasses.replace(
                result, convergence={"converged": True, "steps": history}
            )


def instantaneous_populations(
    psi: WaveFunction, p: PotentialParams, k: int = spectral.DEFAULT_LEVELS
) -> np.ndarray:
    """Populations |<phi_n|psi>|^2 of the k lowest eigenstates of the trap."""
    basis = spectral.solve_stationary(p, psi.grid, k=k)
    return np.abs(psi.grid.spacing * (basis.states.T @ psi.amplitudes)) ** 2


def aa_bound(result: PropagationResult) -> float:
    """Anandan-Aharonov minimal time h / (4 * time-averaged energy spread).

    Returns +inf when the energy spread is below 1e-8 of the mean energy.
    """
    duration = result.times[-1] - result.times[0]
    if duration <= 0:
        return math.inf
    mean_spread = trapezoid(result.energy_std, result.times) / duration
    scale = float(np.max(np.abs(result.energy_mean)))
    if mean_spread <= STATIONARY_SPREAD * scale:
        logger.warning("Energy spread vanishes; the time bound is infinite")
        return math.inf
    return PLANCK / (4.0 * mean_spread)


def linear_ramp_schedule(  # pylint: disable=too-many-arguments
    v0_final: float,
    omega_const: float,
    tf: float,
    n: int = 2001,
    dx_shift: float = 0.0,
    d_l: float = spectral.D_LATTICE,
    mass: float = RB87_MASS,
) -> PhysicalSchedule:
    """Baseline schedule: V0 ramps linearly to ``v0_final`` at constant w."""
    times = np.linspace(0.0, tf, n)
    return PhysicalSchedule(
        times=times,
        v0=v0_final * times / tf,
        omega=np.full(n, omega_const),
        dx_shift=dx_shift,
        residuals=np.full(n, np.nan),
        saturated=np.zeros(n, dtype=bool),
        d_l=d_l,
        mass=mass,
    )


def static_schedule(p: PotentialParams, tf: float) -> PhysicalSchedule:
    """Schedule that holds the trap at ``p`` for ``tf`` seconds."""
    return PhysicalSchedule(
        times=np.array([0.0, tf]),
        v0=np.full(2, p.v0),
        omega=np.full(2, p.omega),
        dx_shift=p.dx_shift,
        residuals=np.full(2, np.nan),
        saturated=np.zeros(2, dtype=bool),
        d_l=p.d_l,
        mass=p.mass,
    )


def convergence_order(
    schedule: PhysicalSchedule,
    psi0: WaveFunction,
    dt: float,
    halvings: int = 3,
) -> float:
    """Measured order of the final-state error under repeated dt halving.

    Runs the propagation at dt, dt/2, ..., dt/2**halvings and fits the
    log of successive final-state differences against the log of dt.
    """
    finals = []
    steps = []
    for level in range(halvings + 1):
        result = _propagate_once(schedule, psi0, dt / 2**level, 1, 2, {})
        finals.append(result.final_state.amplitudes)
        steps.append(result.dt)
    errors = [
        math.sqrt(psi0.grid.spacing) * np.linalg.norm(finals[i] - finals[i + 1])
        for i in range(halvings)
    ]
    slope, _ = np.polyfit(np.log(steps[:-1]), np.log(errors), 1)
    return float(slope)
