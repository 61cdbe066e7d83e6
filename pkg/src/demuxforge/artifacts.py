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

"""CSV and JSON artifacts.

Numbers are written with 17 significant digits and files end lines with
"\\n", so identical inputs produce byte-identical files. Non-finite floats
become ``null`` in JSON; callers keep a flag next to any value that may be
infinite.
"""

import csv
import json
import logging
import math
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from .model import (
    ControlCurve,
    EigenSolution,
    PhysicalSchedule,
    PropagationResult,
    ValidationError,
    WaveFunction,
)

logger = logging.getLogger(__name__)

CURVE_COLUMNS = ("t", "delta", "lambda")
SCHEDULE_COLUMNS = ("t", "V0", "omega", "residual", "saturated")


def format_number(value) -> str:
    """Format a number reproducibly.

    Examples:
        >>> format_number(0.1)
        '0.10000000000000001'
        >>> format_number(True)
        '1'
    """
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    return format(float(value), ".17g")


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    """Write rows of numbers under a header line."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([format_number(value) for value in row])
    logger.debug("Wrote %s", path)
    return path


def read_csv(path: Path, required: Sequence[str]) -> dict:
    """Read a numeric CSV into one float array per column.

    Raises:
        OSError: If the file cannot be opened.
        ValidationError: If a required column is missing or a cell is not a
            number.
    """
    with Path(path).open(newline="", encoding="utf-8") as handle:
        reader = csv.DictReader(handle)
        missing = set(required) - set(reader.fieldnames or ())
        if missing:
            raise ValidationError(f"{path} lacks columns {sorted(missing)}")
        try:
            rows = [{key: float(value) for key, value in row.items()} for row in reader]
        except (TypeError, ValueError) as exc:
            raise ValidationError(f"{path} has a non-numeric cell: {exc}") from exc
    if not rows:
        raise ValidationError(f"{path} has no data rows")
    return {key: np.array([row[key] for row in rows]) for key in rows[0]}


def _jsonable(value: Any) -> Any:
    if isinstance(value, dict):
        return {str(key): _jsonable(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(item) for item in value]
    if isinstance(value, np.ndarray):
        return _jsonable(value.tolist())
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        return float(value) if math.isfinite(value) else None
    return value


def write_json(path: Path, payload: Any) -> Path:
    """Write ``payload`` as sorted, indented JSON."""
    path = Path(path)
    text = json.dumps(_jsonable(payload), sort_keys=True, indent=2, allow_nan=False)
    path.write_text(text + "\n", encoding="utf-8")
    logger.debug("Wrote %s", path)
    return path


def read_json(path: Path) -> Any:
    return json.loads(Path(path).read_text(encoding="utf-8"))


def write_curve(path: Path, curve: ControlCurve) -> Path:
    """Write a control curve as ``t,delta,lambda``."""
    return write_csv(path, CURVE_COLUMNS, zip(curve.times, curve.delta, curve.lam))


def read_curve(path: Path, meta: str = "invariant-designed") -> ControlCurve:
    columns = read_csv(path, CURVE_COLUMNS)
    return ControlCurve(
        times=columns["t"], delta=columns["delta"], lam=columns["lambda"], meta=meta
    )


def _sidecar(path: Path) -> Path:
    return Path(path).with_suffix(".json")


def write_schedule(path: Path, schedule: PhysicalSchedule) -> Path:
    """Write a schedule CSV and a JSON sidecar with its fixed parameters.

    The ``dx_shift`` column is present only when the lattice moves.
    """
    header = list(SCHEDULE_COLUMNS)
    columns = [
        schedule.times,
        schedule.v0,
        schedule.omega,
        schedule.residuals,
        schedule.saturated,
    ]
    if schedule.has_moving_lattice:
        header.append("dx_shift")
        columns.append(schedule.dx_shift)
    write_csv(path, header, zip(*columns))
    fixed = {"d_l_m": schedule.d_l, "mass_kg": schedule.mass}
    if not schedule.has_moving_lattice:
        fixed["dx_shift_m"] = float(schedule.dx_shift[0])
    write_json(_sidecar(path), fixed)
    return Path(path)


def read_schedule(path: Path) -> PhysicalSchedule:
    """Read a schedule written by ``write_schedule``."""
    columns = read_csv(path, SCHEDULE_COLUMNS)
    fixed = read_json(_sidecar(path))
    dx_shift = columns.get("dx_shift", fixed.get("dx_shift_m"))
    if dx_shift is None:
        raise ValidationError(f"{path} has no lattice displacement")
    return PhysicalSchedule(
        times=columns["t"],
        v0=columns["V0"],
        omega=columns["omega"],
        dx_shift=dx_shift,
        residuals=columns["residual"],
        saturated=columns["saturated"].astype(bool),
        d_l=fixed["d_l_m"],
        mass=fixed["mass_kg"],
    )


def write_populations(path: Path, result: PropagationResult) -> Path:
    """Write ``t,P0,P1,...`` on the diagnostic times."""
    levels = result.populations.shape[1]
    header = ["t"] + [f"P{level}" for level in range(levels)]
    rows = (
        [time, *populations]
        for time, populations in zip(result.times, result.populations)
    )
    return write_csv(path, header, rows)


def write_wavefunction(path: Path, state: WaveFunction) -> Path:
    """Write ``x,re,im`` of a wavefunction."""
    return write_csv(
        path,
        ("x", "re", "im"),
        zip(state.grid.points, state.amplitudes.real, state.amplitudes.imag),
    )


def write_eigen(path: Path, solution: EigenSolution) -> Path:
    """Write ``x,phi0,phi1,...`` and the energies (J) in a JSON sidecar."""
    header = ["x"] + [f"phi{level}" for level in range(solution.levels)]
    rows = ([x, *states] for x, states in zip(solution.grid.points, solution.states))
    write_csv(path, header, rows)
    write_json(_sidecar(path), {"energies_j": solution.energies})
    return Path(path)
