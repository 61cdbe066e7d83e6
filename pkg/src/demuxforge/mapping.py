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

"""Mapping of ideal two-level controls onto trap parameters.

For each time sample the lattice depth V0 and trap frequency w are chosen
by minimizing F = (delta_id - delta)^2 + (lambda_id - lambda)^2 with a
Nelder-Mead simplex, warm-started from the previous sample. The lattice
constant and displacement stay fixed.
"""

import logging
import math
from typing import Callable, NamedTuple, Sequence

import numpy as np
from scipy.interpolate import PchipInterpolator

from . import spectral
from .model import (
    PLANCK,
    ControlCurve,
    DemuxForgeError,
    MappingConfig,
    PhysicalSchedule,
    PotentialParams,
    SpatialGrid,
    TwoLevelControls,
    ValidationError,
)

logger = logging.getLogger(__name__)

# Optimizer coordinates: V0 in units of h*1Hz, w in units of 2*pi*1Hz.
V0_UNIT = PLANCK
OMEGA_UNIT = 2 * math.pi
DEFAULT_SIMPLEX_SCALE = (2.0, 0.2)
MIN_SCALE_FRACTION = 0.25
SATURATION_MARGIN = 1e-6
JUMP_LIMIT = 10.0

REFLECTION = 1.0
EXPANSION = 2.0
CONTRACTION = 0.5
SHRINK = 0.5


class UnmappableSample(DemuxForgeError):
    """Raised when a sample cannot reach the cost tolerance and is not saturated."""

    def __init__(self, index: int, time: float, residual: float, cost_tol: float):
        super().__init__(
            f"sample {index} (t={time:.6g} s) stalls at F={residual:.4g}, "
            f"tolerance {cost_tol:.4g}"
        )
        self.index = index
        self.time = time
        self.residual = residual


class NelderMeadResult(NamedTuple):
    """Best point found by the simplex search.

    ``max_evals_exceeded`` is set when the evaluation budget ran out before
    the value spread dropped below the tolerance; the point is then the best
    seen so far.
    """

    argmin: np.ndarray
    value: float
    evals: int
    max_evals_exceeded: bool


class SampleFit(NamedTuple):
    """Accepted optimum of one schedule sample."""

    v0: float
    omega: float
    residual: float
    saturated: bool


def nelder_mead(
    objective: Callable[[np.ndarray], float],
    start: Sequence[float],
    scale: Sequence[float],
    tol: float = 1e-8,
    max_evals: int = 400,
) -> NelderMeadResult:
    """Minimize ``objective`` with the Nelder-Mead simplex method.

    The initial simplex is ``start`` plus one vertex per axis offset by
    ``scale``. Reflection, expansion, contraction and shrink use the
    coefficients 1, 2, 0.5 and 0.5. The search stops when the spread of
    vertex values drops below ``tol`` or when ``max_evals`` is reached.
    Points outside a feasible region should be given the value +inf.

    Args:
        objective: Function of a 1D array returning a float.
        start: Initial point.
        scale: Initial simplex step per coordinate.
        tol: Value-spread termination threshold.
        max_evals: Evaluation budget.

    Returns:
        Best point, its value, the evaluations used and the budget flag.

    Raises:
        ValidationError: If the objective is not finite on the initial simplex.

    Examples:
        >>> result = nelder_mead(
        ...     lambda x: (x[0] - 1) ** 2 + (x[1] - 2) ** 2, [0, 0], [0.5, 0.5],
        ...     tol=1e-14,
        ... )
        >>> [round(v, 5) for v in result.argmin]
        [1.0, 2.0]
    """
    evals = 0

    def evaluate(point):
        nonlocal evals
        evals += 1
        return float(objective(point))

    start = np.asarray(start, dtype=float)
    dim = start.size
    vertices = [start]
    for axis in range(dim):
        vertex = np.array(start)
        vertex[axis] += scale[axis]
        vertices.append(vertex)
    values = [evaluate(vertex) for vertex in vertices]
    if not all(math.isfinite(value) for value in values):
        raise ValidationError("objective is not finite on the initial simplex")

    exceeded = False
    while True:
        order = np.argsort(values, kind="stable")
        vertices = [vertices[i] for i in order]
        values = [values[i] for i in order]
        if values[-1] - values[0] < tol:
            break
        if evals >= max_evals:
            exceeded = True
            break

        centroid = np.mean(vertices[:-1], axis=0)
        worst = vertices[-1]

        reflected = centroid + REFLECTION * (centroid - worst)
        reflected_value = evaluate(reflected)
        if values[0] <= reflected_value < values[-2]:
            vertices[-1], values[-1] = reflected, reflected_value
            continue

        if reflected_value < values[0]:
            expanded = centroid + EXPANSION * (centroid - worst)
            expanded_value = evaluate(expanded)
            if expanded_value < reflected_value:
                vertices[-1], values[-1] = expanded, expanded_value
            else:
                vertices[-1], values[-1] = reflected, reflected_value
            continue

        if reflected_value < values[-1]:
            contracted = centroid + CONTRACTION * (reflected - centroid)
            contracted_value = evaluate(contracted)
            if contracted_value <= reflected_value:
                vertices[-1], values[-1] = contracted, contracted_value
                continue
        else:
            contracted = centroid + CONTRACTION * (worst - centroid)
            contracted_value = evaluate(contracted)
            if contracted_value < values[-1]:
                vertices[-1], values[-1] = contracted, contracted_value
                continue

        best = vertices[0]
        for index in range(1, dim + 1):
            vertices[index] = best + SHRINK * (vertices[index] - best)
            values[index] = evaluate(vertices[index])

    return NelderMeadResult(
        argmin=np.array(vertices[0]),
        value=float(values[0]),
        evals=evals,
        max_evals_exceeded=exceeded,
    )


def default_mapping_config(
    omega0: float,
    dx_shift: float,
    d_l: float = spectral.D_LATTICE,
    grid: SpatialGrid | None = None,
    **overrides,
) -> MappingConfig:
    """Mapping configuration with the default bounds for a trap of frequency w0.

    V0 is bounded by h*5 kHz, w by 2*pi*[5, 300] Hz and the cost tolerance
    is (1e-3 * w0)^2.
    """
    settings = {
        "grid": grid or spectral.default_grid(),
        "d_l": d_l,
        "dx_shift": dx_shift,
        "v0_max": PLANCK * 5000.0,
        "omega_bounds": (2 * math.pi * 5.0, 2 * math.pi * 300.0),
        "cost_tol": (1e-3 * omega0) ** 2,
    }
    settings.update(overrides)
    return MappingConfig(**settings)


def _trap(v0: float, omega: float, cfg: MappingConfig) -> PotentialParams:
    return PotentialParams(
        mass=cfg.mass, omega=omega, v0=v0, dx_shift=cfg.dx_shift, d_l=cfg.d_l
    )


def cost_F(  # pylint: disable=invalid-name
    v0: float, omega: float, target: TwoLevelControls, cfg: MappingConfig
) -> float:
    """Squared distance (rad^2/s^2) between target and extracted controls.

    Raises:
        ValidationError: If (v0, omega) is outside the configured bounds.
        GridTooNarrow, NonConverged, InconsistentExtraction: From the
            eigenproblem at this point.
    """
    if not cfg.in_bounds(v0, omega):
        raise ValidationError(f"point V0={v0:.4g} J, omega={omega:.4g} out of bounds")
    got = spectral.extract_controls(_trap(v0, omega, cfg), cfg.grid)
    return (target.delta - got.delta) ** 2 + (target.lam - got.lam) ** 2


def _objective(target: TwoLevelControls, cfg: MappingConfig):
    """Cost in optimizer coordinates, +inf outside the bounds or the grid."""

    def objective(point):
        v0, omega = point[0] * V0_UNIT, point[1] * OMEGA_UNIT
        if not cfg.in_bounds(v0, omega):
            return math.inf
        try:
            return cost_F(v0, omega, target, cfg)
        except (
            spectral.GridTooNarrow,
            spectral.NonConverged,
            spectral.InconsistentExtraction,
        ) as exc:
            logger.debug("Penalizing V0=%.6g omega=%.6g: %s", v0, omega, exc)
            return math.inf

    return objective


def _feasible_scale(start, scale, objective) -> np.ndarray:
    """Flip simplex steps that would leave the feasible region."""
    scale = np.array(scale, dtype=float)
    for axis in range(scale.size):
        trial = np.array(start)
        trial[axis] += scale[axis]
        if not math.isfinite(objective(trial)):
            scale[axis] = -scale[axis]
    return scale


def _is_saturated(
    point, target: TwoLevelControls, cfg: MappingConfig, residual: float
) -> bool:
    """Whether a sample misses the tolerance only because tunneling is too strong."""
    v0, omega = point[0] * V0_UNIT, point[1] * OMEGA_UNIT
    try:
        got = spectral.extract_controls(_trap(v0, omega, cfg), cfg.grid)
    except DemuxForgeError:
        return False
    floor = math.sqrt(cfg.cost_tol)
    pinned = v0 >= cfg.v0_max * (1 - SATURATION_MARGIN)
    return (
        residual > cfg.cost_tol
        and got.delta > target.delta
        and (pinned or got.delta < floor)
        and abs(got.lam - target.lam) <= floor
    )


def fit_sample(
    target: TwoLevelControls,
    cfg: MappingConfig,
    start: Sequence[float],
    scale: Sequence[float] = DEFAULT_SIMPLEX_SCALE,
    index: int = 0,
    time: float = 0.0,
) -> SampleFit:
    """Minimize the cost for one sample from ``start`` (optimizer coordinates).

    One restart with the default simplex is attempted before giving up.

    Raises:
        UnmappableSample: If the tolerance is missed and the sample is not
            saturated.
    """
    objective = _objective(target, cfg)
    point = np.asarray(start, dtype=float)
    for attempt, step in enumerate((scale, DEFAULT_SIMPLEX_SCALE)):
        result = nelder_mead(
            objective,
            point,
            _feasible_scale(point, step, objective),
            tol=cfg.spread_tol,
            max_evals=cfg.max_evals,
        )
        if result.max_evals_exceeded:
            logger.debug("Sample %d hit max_evals on attempt %d", index, attempt)
        point = result.argmin
        if result.value <= cfg.cost_tol:
            return SampleFit(
                v0=point[0] * V0_UNIT,
                omega=point[1] * OMEGA_UNIT,
                residual=result.value,
                saturated=False,
            )
    if _is_saturated(point, target, cfg, result.value):
        logger.warning(
            "Sample %d (t=%.6g s) saturated at F=%.4g", index, time, result.value
        )
        return SampleFit(
            v0=point[0] * V0_UNIT,
            omega=point[1] * OMEGA_UNIT,
            residual=result.value,
            saturated=True,
        )
    raise UnmappableSample(index, time, result.value, cfg.cost_tol)


def _sample_indices(n: int, stride: int) -> list:
    indices = list(range(0, n, stride))
    if indices[-1] != n - 1:
        indices.append(n - 1)
    return indices


def map_schedule(
    curve: ControlCurve,
    cfg: MappingConfig,
    stride: int = 1,
    progress: Callable[[int], None] | None = None,
) -> PhysicalSchedule:
    """Map a control curve onto lattice depth and trap frequency samples.

    Samples are optimized sequentially, each warm-started from the previous
    optimum with a simplex sized by the last step. Sample 0 is the harmonic
    trap (V0=0, w=w0) and is not optimized. With ``stride`` > 1 only every
    stride-th sample is optimized; the others are filled by monotone cubic
    interpolation and then verified, and re-optimized when they miss the
    tolerance.

    Args:
        curve: Ideal controls with delta(0) = w0 and lambda(0) = 0.
        cfg: Mapping configuration.
        stride: Optimize every stride-th sample.
        progress: Called with the number of samples completed since the
            last call.

    Returns:
        The schedule with per-sample residuals and saturation flags.

    Raises:
        ValidationError: If the curve does not start from a harmonic trap
            within the frequency bounds.
        UnmappableSample: If a sample cannot be mapped.
    """
    if stride < 1:
        raise ValidationError(f"stride must be at least 1, got {stride}")
    omega0 = float(curve.delta[0])
    if curve.lam[0] != 0 or not cfg.in_bounds(0.0, omega0):
        raise ValidationError("curve must start at lambda=0 with delta(0)=w0 in bounds")
    progress = progress or (lambda _: None)

    n = len(curve)
    v0 = np.zeros(n)
    omega = np.full(n, omega0)
    residuals = np.zeros(n)
    saturated = np.zeros(n, dtype=bool)
    residuals[0] = cost_F(0.0, omega0, curve.controls_at(0), cfg)
    progress(1)

    indices = _sample_indices(n, stride)
    previous = np.array([0.0, omega0 / OMEGA_UNIT])
    step = np.array(DEFAULT_SIMPLEX_SCALE)
    minimum_step = MIN_SCALE_FRACTION * step
    for last_index, index in zip(indices, indices[1:]):
        fit = fit_sample(
            curve.controls_at(index),
            cfg,
            previous,
            np.maximum(np.abs(step), minimum_step),
            index=index,
            time=float(curve.times[index]),
        )
        point = np.array([fit.v0 / V0_UNIT, fit.omega / OMEGA_UNIT])
        step, previous = point - previous, point
        v0[index], omega[index] = fit.v0, fit.omega
        residuals[index], saturated[index] = fit.residual, fit.saturated
        logger.debug(
            "Sample %d: V0=%.6g J omega=%.6g rad/s F=%.3g",
            index,
            fit.v0,
            fit.omega,
            fit.residual,
        )
        progress(index - last_index)

    if stride > 1:
        _fill_between(curve, cfg, indices, v0, omega, residuals, saturated)

    logger.info(
        "Mapped %d samples, max residual %.3g, %d saturated",
        n,
        float(residuals.max()),
        int(saturated.sum()),
    )
    return PhysicalSchedule(
        times=curve.times,
        v0=v0,
        omega=omega,
        dx_shift=cfg.dx_shift,
        residuals=residuals,
        saturated=saturated,
        d_l=cfg.d_l,
        mass=cfg.mass,
    )


def _fill_between(  # pylint: disable=too-many-arguments,too-many-positional-arguments
    curve, cfg, indices, v0, omega, residuals, saturated
):
    """Interpolate skipped samples, then verify and repair them in place."""
    mapped = np.array(indices)
    v0_fit = PchipInterpolator(curve.times[mapped], v0[mapped])
    omega_fit = PchipInterpolator(curve.times[mapped], omega[mapped])
    skipped = np.setdiff1d(np.arange(len(curve)), mapped)
    v0[skipped] = np.clip(v0_fit(curve.times[skipped]), 0.0, cfg.v0_max)
    omega[skipped] = np.clip(omega_fit(curve.times[skipped]), *cfg.omega_bounds)

    repaired = 0
    for index in skipped:
        target = curve.controls_at(index)
        point = np.array([v0[index] / V0_UNIT, omega[index] / OMEGA_UNIT])
        residual = _objective(target, cfg)(point)
        if residual <= cfg.cost_tol:
            residuals[index] = residual
            continue
        fit = fit_sample(
            target,
            cfg,
            point,
            MIN_SCALE_FRACTION * np.array(DEFAULT_SIMPLEX_SCALE),
            index=int(index),
            time=float(curve.times[index]),
        )
        v0[index], omega[index] = fit.v0, fit.omega
        residuals[index], saturated[index] = fit.residual, fit.saturated
        repaired += 1
    logger.info(
        "Verified %d interpolated samples, re-optimized %d", skipped.size, repaired
    )


def schedule_controls(schedule: PhysicalSchedule, grid: SpatialGrid) -> tuple:
    """Extract delta and lambda at every sample of a schedule."""
    delta = np.empty(len(schedule))
    lam = np.empty(len(schedule))
    for index in range(len(schedule)):
        got = spectral.extract_controls(schedule.params_at(index), grid)
        delta[index], lam[index] = got.delta, got.lam
    return delta, lam


def round_trip_error(
    schedule: PhysicalSchedule, curve: ControlCurve, grid: SpatialGrid
) -> float:
    """Largest control error (rad/s) over the non-saturated samples."""
    delta, lam = schedule_controls(schedule, grid)
    error = np.hypot(delta - curve.delta, lam - curve.lam)
    keep = ~schedule.saturated
    return float(error[keep].max()) if keep.any() else 0.0


def continuity_report(schedule: PhysicalSchedule, curve: ControlCurve) -> dict:
    """Compare per-sample schedule jumps with the local change of the controls.

    Each step change of V0 and w is measured in units of its median step and
    compared with the step change of (delta, lambda) in units of its own
    median step. Saturated samples are skipped.
    """
    control_step = np.hypot(np.diff(curve.delta), np.diff(curve.lam))
    keep = ~(schedule.saturated[1:] | schedule.saturated[:-1])
    report = {}
    for name, values in (("v0", schedule.v0), ("omega", schedule.omega)):
        step = np.abs(np.diff(values))
        ratio = _relative_steps(step[keep]) / np.maximum(
            _relative_steps(control_step[keep]), 1.0
        )
        report[f"{name}_max_jump_ratio"] = float(ratio.max()) if ratio.size else 0.0
    report["smooth"] = all(
        value <= JUMP_LIMIT for key, value in report.items() if key.endswith("ratio")
    )
    return report


def _relative_steps(step: np.ndarray) -> np.ndarray:
    if step.size == 0:
        return step
    typical = float(np.median(step))
    floor = typical if typical > 0 else float(step.max()) or 1.0
    return step / floor
