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

"""Data model shared by the design, mapping and simulation stages.

Defines the immutable value types that flow between the two-level designer,
the coordinate-space solver, the schedule mapper and the propagator, together
with the physical constants and the base error hierarchy. All quantities are
SI: seconds, metres, kilograms, joules and angular frequencies in rad/s.
"""

import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Any, Mapping

import numpy as np
from scipy.constants import h as PLANCK
from scipy.constants import hbar as HBAR

RB87_MASS = 1.44316060e-25
NORM_TOL = 1e-10
CURVE_KINDS = (
    "invariant-designed",
    "fast-adiabatic",
    "linear-ramp-derived",
    "time-reversed",
    "bias-flip",
)

__all__ = [
    "HBAR",
    "PLANCK",
    "RB87_MASS",
    "ControlCurve",
    "DemuxForgeError",
    "DesignParams",
    "AnglePolynomials",
    "EigenSolution",
    "LRBasis",
    "MappingConfig",
    "PhysicalSchedule",
    "PotentialParams",
    "PropagationResult",
    "SpatialGrid",
    "TwoLevelControls",
    "TwoLevelState",
    "ValidationError",
    "WaveFunction",
    "compute_hash",
]


class DemuxForgeError(RuntimeError):
    """Base class for every error raised by demuxforge."""


class ValidationError(DemuxForgeError, ValueError):
    """Raised when a value object is built from inconsistent inputs."""


def _frozen_array(values, dtype=float) -> np.ndarray:
    array = np.array(values, dtype=dtype)
    array.setflags(write=False)
    return array


def _require(condition: bool, message: str):
    if not condition:
        raise ValidationError(message)


@dataclass(frozen=True)
class TwoLevelControls:
    """Instantaneous two-level controls: tunneling rate and bias, both in rad/s."""

    delta: float
    lam: float

    def __post_init__(self):
        _require(
            math.isfinite(self.delta) and math.isfinite(self.lam),
            f"controls must be finite, got delta={self.delta}, lambda={self.lam}",
        )


@dataclass(frozen=True)
class DesignParams:
    """Inputs of an invariant-based demultiplexer design.

    Attributes:
        omega0: Initial trap angular frequency (rad/s), equal to delta(0).
        lambda_f: Final bias (rad/s).
        dlambda0: Initial bias slope (rad/s^2); must be nonzero.
        tf: Protocol duration (s).
        n_samples: Number of uniform time samples of the output curves.
        theta_final: Polar angle of the invariant at tf, either 0 or pi.
            Zero keeps each channel on its own branch; pi swaps them.
    """

    omega0: float
    lambda_f: float
    dlambda0: float
    tf: float
    n_samples: int = 2001
    theta_final: float = 0.0

    def __post_init__(self):
        _require(self.omega0 > 0, f"omega0 must be positive, got {self.omega0}")
        _require(self.tf > 0, f"tf must be positive, got {self.tf}")
        _require(
            self.n_samples >= 2, f"n_samples must be at least 2, got {self.n_samples}"
        )
        _require(
            self.dlambda0 != 0 and math.isfinite(self.dlambda0),
            "dlambda0 must be finite and nonzero",
        )
        _require(math.isfinite(self.lambda_f), "lambda_f must be finite")
        _require(
            self.theta_final in (0.0, math.pi),
            f"theta_final must be 0 or pi, got {self.theta_final}",
        )


@dataclass(frozen=True, eq=False)
class AnglePolynomials:
    """Monomial coefficients of theta(t) (degree 5) and phi(t) (degree 4)."""

    a: np.ndarray
    b: np.ndarray
    tf: float

    def __post_init__(self):
        object.__setattr__(self, "a", _frozen_array(self.a))
        object.__setattr__(self, "b", _frozen_array(self.b))
        _require(self.a.shape == (6,), "theta needs 6 coefficients")
        _require(self.b.shape == (5,), "phi needs 5 coefficients")
        _require(self.tf > 0, "tf must be positive")


@dataclass(frozen=True, eq=False)
class ControlCurve:
    """Time-sampled ideal two-level controls.

    Attributes:
        times: Strictly increasing sample times starting at 0 (s).
        delta: Tunneling rate per sample (rad/s).
        lam: Bias per sample (rad/s).
        meta: Provenance tag, one of ``CURVE_KINDS``.
    """

    times: np.ndarray
    delta: np.ndarray
    lam: np.ndarray
    meta: str = "invariant-designed"

    def __post_init__(self):
        for name in ("times", "delta", "lam"):
            object.__setattr__(self, name, _frozen_array(getattr(self, name)))
        _require(self.times.ndim == 1 and self.times.size >= 2, "need 2+ samples")
        _require(
            self.delta.shape == self.times.shape == self.lam.shape,
            "times, delta and lambda must have the same length",
        )
        _require(self.times[0] == 0.0, "curves start at t=0")
        _require(bool(np.all(np.diff(self.times) > 0)), "times must increase")
        _require(
            bool(np.all(np.isfinite(self.delta)) and np.all(np.isfinite(self.lam))),
            "controls must be finite",
        )
        _require(self.meta in CURVE_KINDS, f"unknown curve kind '{self.meta}'")

    def __len__(self):
        return self.times.size

    def __repr__(self):
        return (
            f"ControlCurve(meta={self.meta}, n_samples={len(self)}, tf={self.tf}, "
            f"delta0={self.delta[0]}, lambda_f={self.lam[-1]})"
        )

    @property
    def tf(self) -> float:
        """Final time of the curve."""
        return float(self.times[-1])

    @property
    def has_negative_delta(self) -> bool:
        """Whether the tunneling rate dips below zero anywhere."""
        return bool(np.any(self.delta < 0))

    def controls_at(self, index: int) -> TwoLevelControls:
        """Return the controls of one sample."""
        return TwoLevelControls(float(self.delta[index]), float(self.lam[index]))


@dataclass(frozen=True, eq=False)
class TwoLevelState:
    """Amplitudes in the ordered bare basis (|R>, |L>)."""

    amplitudes: np.ndarray

    def __post_init__(self):
        object.__setattr__(
            self, "amplitudes", _frozen_array(self.amplitudes, dtype=complex)
        )
        _require(self.amplitudes.shape == (2,), "two-level states have 2 amplitudes")
        norm = float(np.sum(np.abs(self.amplitudes) ** 2))
        _require(abs(norm - 1.0) < NORM_TOL, f"state is not normalized: {norm}")

    @classmethod
    def right(cls) -> "TwoLevelState":
        """Return |R>."""
        return cls(np.array([1.0, 0.0]))

    @classmethod
    def left(cls) -> "TwoLevelState":
        """Return |L>."""
        return cls(np.array([0.0, 1.0]))

    @property
    def c_r(self) -> complex:
        return complex(self.amplitudes[0])

    @property
    def c_l(self) -> complex:
        return complex(self.amplitudes[1])

    def overlap(self, other: "TwoLevelState") -> complex:
        """Return <self|other>."""
        return complex(np.vdot(self.amplitudes, other.amplitudes))


@dataclass(frozen=True)
class SpatialGrid:
    """Uniform 1D grid of ``n_points`` points on [x_min, x_max] (m)."""

    x_min: float
    x_max: float
    n_points: int

    def __post_init__(self):
        _require(self.x_min < self.x_max, "x_min must be below x_max")
        _require(self.n_points >= 64, f"need at least 64 points, got {self.n_points}")

    @property
    def spacing(self) -> float:
        return (self.x_max - self.x_min) / (self.n_points - 1)

    @property
    def points(self) -> np.ndarray:
        return np.linspace(self.x_min, self.x_max, self.n_points)

    def inner(self, u: np.ndarray, v: np.ndarray) -> complex:
        """Grid inner product h * sum(conj(u) * v)."""
        return complex(self.spacing * np.vdot(u, v))

    def to_dict(self) -> dict:
        return {
            "x_min_m": self.x_min,
            "x_max_m": self.x_max,
            "n_points": self.n_points,
        }


@dataclass(frozen=True)
class PotentialParams:
    """Instantaneous parameters of the harmonic-plus-lattice trap.

    Attributes:
        mass: Particle mass (kg).
        omega: Harmonic trap angular frequency (rad/s).
        v0: Lattice depth (J).
        dx_shift: Lattice displacement from the trap centre (m).
        d_l: Lattice constant (m).
    """

    mass: float
    omega: float
    v0: float
    dx_shift: float
    d_l: float

    def __post_init__(self):
        _require(self.mass > 0, "mass must be positive")
        _require(self.omega >= 0, "omega must be non-negative")
        _require(self.v0 >= 0, "V0 must be non-negative")
        _require(self.d_l > 0, "lattice constant must be positive")
        _require(math.isfinite(self.dx_shift), "dx_shift must be finite")


@dataclass(frozen=True, eq=False)
class EigenSolution:
    """Lowest eigenpairs of a grid Hamiltonian.

    ``states`` has one column per level, real and normalized under the grid
    inner product.
    """

    grid: SpatialGrid
    energies: np.ndarray
    states: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "energies", _frozen_array(self.energies))
        object.__setattr__(self, "states", _frozen_array(self.states))
        _require(
            self.states.shape == (self.grid.n_points, self.energies.size),
            "one state column per energy",
        )

    @property
    def levels(self) -> int:
        return int(self.energies.size)


@dataclass(frozen=True, eq=False)
class LRBasis:
    """Localized basis of a double well and the level-midpoint shift.

    Attributes:
        g: Ground state of the symmetric (dx_shift=0) problem.
        e: First excited state of the symmetric problem.
        left: (g - e)/sqrt(2).
        right: (g + e)/sqrt(2).
        shift: (E_minus + E_plus)/2 of the full problem (J).
        e_minus: Lowest level of the full problem (J).
        e_plus: Second level of the full problem (J).
        gap_symmetric: E1 - E0 of the symmetric problem (J).
    """

    g: np.ndarray
    e: np.ndarray
    left: np.ndarray
    right: np.ndarray
    shift: float
    e_minus: float
    e_plus: float
    gap_symmetric: float


@dataclass(frozen=True)
class MappingConfig:
    """Fixed trap parameters, bounds and tolerances of a schedule mapping.

    Attributes:
        grid: Spatial grid for the eigenproblems.
        d_l: Lattice constant (m).
        dx_shift: Fixed lattice displacement (m).
        v0_max: Upper bound of the lattice depth (J).
        omega_bounds: (lower, upper) trap angular frequency (rad/s).
        cost_tol: Acceptance threshold of the cost F (rad^2/s^2).
        max_evals: Cost evaluations allowed per sample.
        mass: Particle mass (kg).
        simplex_tol: Spread threshold of the simplex; defaults to cost_tol/1000.
    """

    grid: SpatialGrid
    d_l: float
    dx_shift: float
    v0_max: float
    omega_bounds: tuple
    cost_tol: float
    max_evals: int = 400
    mass: float = RB87_MASS
    simplex_tol: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "omega_bounds", tuple(self.omega_bounds))
        _require(self.v0_max > 0, "v0_max must be positive")
        _require(
            len(self.omega_bounds) == 2
            and 0 < self.omega_bounds[0] < self.omega_bounds[1],
            f"omega bounds must be ordered and positive, got {self.omega_bounds}",
        )
        _require(self.cost_tol > 0, "cost_tol must be positive")
        _require(self.max_evals > 0, "max_evals must be positive")
        _require(self.d_l > 0, "lattice constant must be positive")
        _require(self.mass > 0, "mass must be positive")

    @property
    def spread_tol(self) -> float:
        if self.simplex_tol is not None:
            return self.simplex_tol
        return self.cost_tol * 1e-3

    def in_bounds(self, v0: float, omega: float) -> bool:
        low, high = self.omega_bounds
        return 0.0 <= v0 <= self.v0_max and low <= omega <= high


@dataclass(frozen=True, eq=False)
class PhysicalSchedule:  # pylint: disable=too-many-instance-attributes
    """Time-sampled trap parameters realizing a ControlCurve.

    ``dx_shift`` is stored per sample; it only varies along a bias flip.
    ``residuals`` holds the cost F at each accepted sample, NaN for schedules
    that were not produced by the mapper.
    """

    times: np.ndarray
    v0: np.ndarray
    omega: np.ndarray
    dx_shift: np.ndarray
    residuals: np.ndarray
    saturated: np.ndarray
    d_l: float
    mass: float = RB87_MASS

    def __post_init__(self):
        for name in ("times", "v0", "omega", "residuals"):
            object.__setattr__(self, name, _frozen_array(getattr(self, name)))
        dx = np.broadcast_to(np.asarray(self.dx_shift, dtype=float), self.times.shape)
        object.__setattr__(self, "dx_shift", _frozen_array(dx))
        object.__setattr__(
            self, "saturated", _frozen_array(self.saturated, dtype=bool)
        )
        shape = self.times.shape
        _require(self.times.ndim == 1 and self.times.size >= 2, "need 2+ samples")
        for name in ("v0", "omega", "residuals", "saturated"):
            _require(getattr(self, name).shape == shape, f"{name} length mismatch")
        _require(bool(np.all(np.diff(self.times) > 0)), "times must increase")
        _require(bool(np.all(self.v0 >= 0)), "V0 must be non-negative")
        _require(bool(np.all(self.omega >= 0)), "omega must be non-negative")
        _require(self.d_l > 0 and self.mass > 0, "d_l and mass must be positive")

    def __len__(self):
        return self.times.size

    def __repr__(self):
        return (
            f"PhysicalSchedule(n_samples={len(self)}, tf={self.tf}, "
            f"v0_final={self.v0[-1]}, omega_final={self.omega[-1]}, "
            f"saturated={int(np.count_nonzero(self.saturated))})"
        )

    @property
    def tf(self) -> float:
        return float(self.times[-1])

    @property
    def has_moving_lattice(self) -> bool:
        """Whether the lattice displacement changes along the schedule."""
        return bool(np.ptp(self.dx_shift) > 0)

    def params_at(self, index: int) -> PotentialParams:
        """Return the trap parameters of one sample."""
        return PotentialParams(
            mass=self.mass,
            omega=float(self.omega[index]),
            v0=float(self.v0[index]),
            dx_shift=float(self.dx_shift[index]),
            d_l=self.d_l,
        )


@dataclass(frozen=True, eq=False)
class WaveFunction:
    """Complex amplitudes on a spatial grid, normalized under h*sum|psi|^2."""

    grid: SpatialGrid
    amplitudes: np.ndarray

    def __post_init__(self):
        object.__setattr__(
            self, "amplitudes", _frozen_array(self.amplitudes, dtype=complex)
        )
        _require(
            self.amplitudes.shape == (self.grid.n_points,),
            "one amplitude per grid point",
        )
        _require(abs(self.norm() - 1.0) < 1e-8, f"norm is {self.norm()}, not 1")

    @classmethod
    def normalized(cls, grid: SpatialGrid, amplitudes) -> "WaveFunction":
        """Build a wavefunction after rescaling ``amplitudes`` to unit norm."""
        values = np.asarray(amplitudes, dtype=complex)
        norm = grid.spacing * np.vdot(values, values).real
        return cls(grid, values / math.sqrt(norm))

    def norm(self) -> float:
        return float(self.grid.spacing * np.sum(np.abs(self.amplitudes) ** 2))

    def fidelity(self, other: "WaveFunction") -> float:
        """Return |<self|other>|^2."""
        return abs(self.grid.inner(self.amplitudes, other.amplitudes)) ** 2


@dataclass(frozen=True, eq=False)
class PropagationResult:  # pylint: disable=too-many-instance-attributes
    """Outcome of one wavefunction propagation.

    Attributes:
        times: Diagnostic sample times (s).
        populations: Instantaneous-level populations, one row per time.
        final_state: Wavefunction at tf.
        fidelity_targets: Named overlaps |<target|psi(tf)>|^2.
        energy_mean: <H>(t) on the diagnostic times (J).
        energy_std: Energy standard deviation on the diagnostic times (J).
        position_mean: <x>(t) on the diagnostic times (m).
        norm_drift: Largest |norm - 1| seen on the diagnostic times.
        dt: Time step actually used (s).
        aa_min_time: Anandan-Aharonov minimal time (s), inf when the
            energy spread vanishes.
        convergence: dt-halving report, empty unless verification ran.
    """

    times: np.ndarray
    populations: np.ndarray
    final_state: WaveFunction
    fidelity_targets: Mapping[str, float]
    energy_mean: np.ndarray
    energy_std: np.ndarray
    position_mean: np.ndarray
    norm_drift: float
    dt: float
    aa_min_time: float = math.nan
    convergence: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        for name in ("times", "populations", "energy_mean", "energy_std"):
            object.__setattr__(self, name, _frozen_array(getattr(self, name)))
        object.__setattr__(self, "position_mean", _frozen_array(self.position_mean))
        object.__setattr__(self, "fidelity_targets", dict(self.fidelity_targets))

    @property
    def tf(self) -> float:
        return float(self.times[-1])

    @property
    def aa_bound_finite(self) -> bool:
        return math.isfinite(self.aa_min_time)


def compute_hash(payload: Mapping[str, Any]) -> str:
    """Compute a SHA-256 digest of a JSON-compatible mapping.

    Keys are sorted so that equal configurations hash equally regardless of
    the order they were written in.

    Examples:
        >>> compute_hash({"tf_s": 0.25, "case": "A"}) == compute_hash(
        ...     {"case": "A", "tf_s": 0.25}
        ... )
        True
        >>> len(compute_hash({}))
        64
    """
    data = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(data.encode()).hexdigest()
