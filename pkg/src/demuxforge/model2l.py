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

"""Two-level model of the trap splitting.

The lowest doublet of the double well is described in the localized basis
(|R>, |L>) by H = (hbar/2) [[lam, -delta], [-delta, -lam]], with delta the
tunneling rate and lam the bias. This module designs delta(t), lam(t) by
inverse engineering from a dynamical invariant whose Bloch angles theta(t),
phi(t) are polynomials, builds the fast-adiabatic reference curve and
propagates two-level states exactly.
"""

import logging
import math
from typing import NamedTuple, Sequence

import numpy as np
from numpy.polynomial import polynomial as P

from .model import (
    HBAR,
    AnglePolynomials,
    ControlCurve,
    DemuxForgeError,
    DesignParams,
    TwoLevelControls,
    TwoLevelState,
)

logger = logging.getLogger(__name__)

OMEGA_REF = 1.0  # invariant frequency scale; it cancels from the designed controls
ADIABATIC_LIMIT = 0.1
MAX_PHASE_STEP = 0.1
BOUNDARY_RTOL = 1e-10
SIN_FLOOR = 1e-12


class DegenerateHamiltonian(DemuxForgeError):
    """Raised when both tunneling rate and bias vanish."""


class SingularSystem(DemuxForgeError):
    """Raised when the boundary-condition system for the angles has no solution."""


class IndeterminateInterior(DemuxForgeError):
    """Raised when the inverse-engineering formulas are 0/0 away from the ends."""

    def __init__(self, time: float, quantity: str):
        super().__init__(f"{quantity} vanishes at interior time t={time:.9g} s")
        self.time = time


class StepTooCoarse(DemuxForgeError):
    """Raised when a curve is too sparsely sampled for stepwise propagation."""


class Eigensystem2L(NamedTuple):
    """Instantaneous eigensystem of the two-level Hamiltonian."""

    e_minus: float
    e_plus: float
    alpha: float
    psi_minus: TwoLevelState
    psi_plus: TwoLevelState


class AngleSamples(NamedTuple):
    """Invariant angles and their first two time derivatives."""

    theta: np.ndarray
    theta_dot: np.ndarray
    theta_ddot: np.ndarray
    phi: np.ndarray
    phi_dot: np.ndarray
    phi_ddot: np.ndarray


class FastAdiabaticDesign(NamedTuple):
    """Fast-adiabatic curve and its constant adiabaticity parameter."""

    curve: ControlCurve
    c: float

    @property
    def non_adiabatic(self) -> bool:
        return self.c >= ADIABATIC_LIMIT


class TwoLevelPropagation(NamedTuple):
    """Final state and full trajectory of a two-level propagation."""

    final: TwoLevelState
    trajectory: tuple


def hamiltonian_2l(controls: TwoLevelControls) -> np.ndarray:
    """Return the two-level Hamiltonian (J) in the (|R>, |L>) basis."""
    return 0.5 * HBAR * np.array(
        [[controls.lam, -controls.delta], [-controls.delta, -controls.lam]]
    )


def eigensystem_2l(controls: TwoLevelControls) -> Eigensystem2L:
    """Diagonalize the two-level Hamiltonian in closed form.

    The mixing angle is atan2(delta, lambda), which lies in [0, pi] for
    delta >= 0 and keeps the closed-form vectors ordered for delta < 0.

    Args:
        controls: Instantaneous tunneling rate and bias.

    Returns:
        Energies (J), mixing angle (rad) and the lower/upper eigenstates.

    Raises:
        DegenerateHamiltonian: If delta and lambda are both zero.

    Examples:
        >>> system = eigensystem_2l(TwoLevelControls(delta=3.0, lam=4.0))
        >>> round(system.e_plus / HBAR, 12), round(system.e_minus / HBAR, 12)
        (2.5, -2.5)
    """
    if controls.delta == 0 and controls.lam == 0:
        raise DegenerateHamiltonian("delta and lambda are both zero")
    gap = math.hypot(controls.delta, controls.lam)
    alpha = math.atan2(controls.delta, controls.lam)
    cos_half, sin_half = math.cos(alpha / 2), math.sin(alpha / 2)
    psi_plus = TwoLevelState(np.array([-cos_half, sin_half]))
    psi_minus = TwoLevelState(np.array([sin_half, cos_half]))
    return Eigensystem2L(
        e_minus=-0.5 * HBAR * gap,
        e_plus=0.5 * HBAR * gap,
        alpha=alpha,
        psi_minus=psi_minus,
        psi_plus=psi_plus,
    )


def invariant_matrix(theta: float, phi: float, omega_ref: float = OMEGA_REF):
    """Return the invariant I = (hbar*Omega0/2) n.sigma for Bloch angles theta, phi.

    Examples:
        >>> matrix = invariant_matrix(0.0, 1.3) / HBAR
        >>> matrix.real.tolist()
        [[0.5, 0.0], [0.0, -0.5]]
    """
    off = math.sin(theta) * np.exp(1j * phi)
    return (
        0.5
        * HBAR
        * omega_ref
        * np.array([[math.cos(theta), off], [np.conj(off), -math.cos(theta)]])
    )


def _monomial_row(degree: int, order: int, s: float) -> np.ndarray:
    row = np.zeros(degree + 1)
    for j in range(order, degree + 1):
        row[j] = math.perm(j, order) * s ** (j - order)
    return row


def _solve_monomials(conditions: Sequence[tuple], degree: int, tf: float):
    """Solve derivative conditions (order, s, value) in scaled time s = t/tf."""
    matrix = np.array([_monomial_row(degree, order, s) for order, s, _ in conditions])
    rhs = np.array([value * tf**order for order, _, value in conditions])
    try:
        scaled = np.linalg.solve(matrix, rhs)
    except np.linalg.LinAlgError as exc:
        raise SingularSystem(f"boundary system is singular: {exc}") from exc
    return scaled / tf ** np.arange(degree + 1)


def _theta_conditions(params: DesignParams):
    return [
        (0, 0.0, math.pi / 2),
        (1, 0.0, 0.0),
        (2, 0.0, 0.0),
        (3, 0.0, -params.omega0 * params.dlambda0),
        (0, 1.0, params.theta_final),
        (1, 1.0, 0.0),
    ]


def _phi_conditions(params: DesignParams):
    return [
        (0, 0.0, math.pi),
        (1, 0.0, 0.0),
        (2, 0.0, -params.dlambda0),
        (0, 1.0, math.pi / 2),
        (1, 1.0, -params.lambda_f / 3),
    ]


def boundary_residuals(poly: AnglePolynomials, params: DesignParams) -> dict:
    """Evaluate the eleven angle boundary conditions.

    Each residual is |got - want| * tf**k / max(|want| * tf**k, 1) for a k-th
    derivative, i.e. a relative error in scaled time.
    """
    residuals = {}
    for label, coefficients, conditions in (
        ("theta", poly.a, _theta_conditions(params)),
        ("phi", poly.b, _phi_conditions(params)),
    ):
        for order, s, want in conditions:
            got = P.polyval(s * poly.tf, P.polyder(coefficients, order))
            scale = poly.tf**order
            name = f"d{order}{label}({'tf' if s else '0'})"
            residuals[name] = abs(got - want) * scale / max(abs(want) * scale, 1.0)
    return residuals


def solve_angle_polynomials(params: DesignParams) -> AnglePolynomials:
    """Fit theta(t) (degree 5) and phi(t) (degree 4) to their boundary values.

    Args:
        params: Design parameters.

    Returns:
        Monomial coefficients satisfying all eleven conditions.

    Raises:
        SingularSystem: If either linear system is singular or its solution
            misses a condition by more than 1e-10 relative.
    """
    a = _solve_monomials(_theta_conditions(params), 5, params.tf)
    b = _solve_monomials(_phi_conditions(params), 4, params.tf)
    poly = AnglePolynomials(a=a, b=b, tf=params.tf)
    worst = max(boundary_residuals(poly, params).values())
    if worst > BOUNDARY_RTOL:
        raise SingularSystem(f"boundary conditions violated by {worst:.3g}")
    logger.debug("Angle polynomials a=%s b=%s", poly.a, poly.b)
    return poly


def angles(poly: AnglePolynomials, t) -> AngleSamples:
    """Evaluate theta, phi and their first two derivatives at times ``t``."""
    t = np.asarray(t, dtype=float)
    return AngleSamples(
        theta=P.polyval(t, poly.a),
        theta_dot=P.polyval(t, P.polyder(poly.a)),
        theta_ddot=P.polyval(t, P.polyder(poly.a, 2)),
        phi=P.polyval(t, poly.b),
        phi_dot=P.polyval(t, P.polyder(poly.b)),
        phi_ddot=P.polyval(t, P.polyder(poly.b, 2)),
    )


def evaluate_controls(poly: AnglePolynomials, t) -> tuple:
    """Evaluate delta(t), lambda(t) from the angles at interior times ``t``.

    Raises:
        IndeterminateInterior: If sin(phi) or sin(theta) vanishes at any of
            the requested times.
    """
    t = np.atleast_1d(np.asarray(t, dtype=float))
    samples = angles(poly, t)
    sin_phi = np.sin(samples.phi)
    sin_theta = np.sin(samples.theta)
    for values, quantity in ((sin_phi, "sin(phi)"), (sin_theta, "sin(theta)")):
        bad = np.flatnonzero(np.abs(values) < SIN_FLOOR)
        if bad.size:
            raise IndeterminateInterior(float(t[bad[0]]), quantity)
    delta = -samples.theta_dot / sin_phi
    cot_theta = np.cos(samples.theta) / sin_theta
    lam = -delta * cot_theta * np.cos(samples.phi) - samples.phi_dot
    return delta, lam


def controls_from_angles(poly: AnglePolynomials, params: DesignParams) -> ControlCurve:
    """Invert the invariance relations to get delta(t) and lambda(t).

    Interior samples use delta = -theta'/sin(phi) and
    lambda = -delta*cot(theta)*cos(phi) - phi'. Both endpoints are 0/0 forms
    and take their boundary values instead.

    Raises:
        IndeterminateInterior: If sin(phi) or sin(theta) vanishes at an
            interior sample.
    """
    times = np.linspace(0.0, params.tf, params.n_samples)
    delta = np.empty_like(times)
    lam = np.empty_like(times)
    if times.size > 2:
        delta[1:-1], lam[1:-1] = evaluate_controls(poly, times[1:-1])
    delta[0], lam[0] = params.omega0, 0.0
    delta[-1], lam[-1] = 0.0, params.lambda_f

    curve = ControlCurve(times=times, delta=delta, lam=lam, meta="invariant-designed")
    if curve.has_negative_delta:
        logger.warning(
            "Designed tunneling rate turns negative (min %.6g rad/s)",
            float(delta.min()),
        )
    return curve


def design_curve(params: DesignParams) -> tuple:
    """Solve the angle polynomials and sample the resulting controls."""
    poly = solve_angle_polynomials(params)
    return poly, controls_from_angles(poly, params)


def fast_adiabatic_slope(omega0: float, lambda_const: float, tf: float, t):
    """Analytic time derivative of the fast-adiabatic tunneling rate."""
    t = np.asarray(t, dtype=float)
    denominator = lambda_const**2 * tf**2 + omega0**2 * t * (2 * tf - t)
    return (
        -omega0
        * lambda_const
        * tf**2
        * (lambda_const**2 + omega0**2)
        / denominator**1.5
    )


def adiabaticity_parameter(delta, delta_dot, lam):
    """Return |lam * delta' / (2 (lam^2 + delta^2)^(3/2))|."""
    delta = np.asarray(delta, dtype=float)
    return np.abs(lam * np.asarray(delta_dot) / (2 * (lam**2 + delta**2) ** 1.5))


def fast_adiabatic_curve(
    omega0: float, lambda_const: float, tf: float, n_samples: int = 2001
) -> FastAdiabaticDesign:
    """Build the constant-bias curve with a constant adiabaticity parameter.

    Args:
        omega0: Initial tunneling rate (rad/s).
        lambda_const: Constant bias (rad/s), positive.
        tf: Duration (s), positive.
        n_samples: Number of uniform samples.

    Returns:
        The curve and c = omega0 / (2 lam sqrt(omega0^2 + lam^2) tf).

    Examples:
        >>> design = fast_adiabatic_curve(2 * math.pi * 78, 10.0, 0.25, 11)
        >>> round(design.c, 4), design.non_adiabatic
        (0.2, True)
    """
    if lambda_const <= 0 or tf <= 0:
        raise ValueError("fast-adiabatic design needs lambda > 0 and tf > 0")
    times = np.linspace(0.0, tf, n_samples)
    delta = (
        omega0
        * lambda_const
        * (tf - times)
        / np.sqrt(lambda_const**2 * tf**2 + omega0**2 * times * (2 * tf - times))
    )
    c = omega0 / (2 * lambda_const * math.sqrt(omega0**2 + lambda_const**2) * tf)
    curve = ControlCurve(
        times=times,
        delta=delta,
        lam=np.full_like(times, lambda_const),
        meta="fast-adiabatic",
    )
    design = FastAdiabaticDesign(curve=curve, c=c)
    if design.non_adiabatic:
        logger.warning("Fast-adiabatic curve is not adiabatic: c=%.4f", c)
    return design


def _step_propagators(curve: ControlCurve) -> np.ndarray:
    dt = np.diff(curve.times)
    delta = 0.5 * (curve.delta[1:] + curve.delta[:-1])
    lam = 0.5 * (curve.lam[1:] + curve.lam[:-1])
    half_angle = 0.5 * np.hypot(delta, lam) * dt
    cos = np.cos(half_angle)
    # sin(half_angle) / rate, finite when the rate vanishes
    sin_over_rate = 0.5 * dt * np.sinc(half_angle / np.pi)
    steps = np.empty((dt.size, 2, 2), dtype=complex)
    steps[:, 0, 0] = cos - 1j * sin_over_rate * lam
    steps[:, 1, 1] = cos + 1j * sin_over_rate * lam
    steps[:, 0, 1] = 1j * sin_over_rate * delta
    steps[:, 1, 0] = steps[:, 0, 1]
    return steps


def propagate_2l(curve: ControlCurve, psi0: TwoLevelState) -> TwoLevelPropagation:
    """Propagate a two-level state through a control curve.

    Each interval uses the exact exponential of the Hamiltonian sampled at its
    midpoint, so the evolution is unitary to round-off.

    Raises:
        StepTooCoarse: If max(sqrt(delta^2 + lambda^2)) * dt >= 0.1.
    """
    phase_step = float(
        np.max(np.hypot(curve.delta, curve.lam)) * np.max(np.diff(curve.times))
    )
    if phase_step >= MAX_PHASE_STEP:
        raise StepTooCoarse(
            f"phase advance per step is {phase_step:.3g}, need < {MAX_PHASE_STEP}"
        )
    amplitudes = np.array(psi0.amplitudes)
    trajectory = [psi0]
    for step in _step_propagators(curve):
        amplitudes = step @ amplitudes
        trajectory.append(TwoLevelState(amplitudes))
    return TwoLevelPropagation(final=trajectory[-1], trajectory=tuple(trajectory))


def transport_fidelities(curve: ControlCurve) -> tuple:
    """Return |<psi-(tf)|U|psi-(0)>|^2 and |<psi+(tf)|U|psi+(0)>|^2."""
    start = eigensystem_2l(curve.controls_at(0))
    end = eigensystem_2l(curve.controls_at(-1))
    lower = propagate_2l(curve, start.psi_minus).final
    upper = propagate_2l(curve, start.psi_plus).final
    return (
        abs(end.psi_minus.overlap(lower)) ** 2,
        abs(end.psi_plus.overlap(upper)) ** 2,
    )


def two_level_populations(
    curve: ControlCurve, trajectory: Sequence[TwoLevelState]
) -> np.ndarray:
    """Populations of the instantaneous lower and upper states along a trajectory."""
    populations = np.empty((len(trajectory), 2))
    for index, state in enumerate(trajectory):
        system = eigensystem_2l(curve.controls_at(index))
        populations[index, 0] = abs(system.psi_minus.overlap(state)) ** 2
        populations[index, 1] = abs(system.psi_plus.overlap(state)) ** 2
    return populations


def commutator_boundary_residual(
    curve: ControlCurve, poly: AnglePolynomials, omega_ref: float = OMEGA_REF
) -> tuple:
    """Normalized Frobenius norms of [H, I] at t=0 and t=tf.

    The norms are divided by hbar^2 * Omega0 * omega0, with omega0 = delta(0).
    """
    ends = angles(poly, np.array([0.0, poly.tf]))
    scale = HBAR**2 * omega_ref * curve.delta[0]
    residuals = []
    for position, index in enumerate((0, -1)):
        hamiltonian = hamiltonian_2l(curve.controls_at(index))
        invariant = invariant_matrix(
            ends.theta[position], ends.phi[position], omega_ref
        )
        commutator = hamiltonian @ invariant - invariant @ hamiltonian
        residuals.append(float(np.linalg.norm(commutator, "fro") / scale))
    return tuple(residuals)
