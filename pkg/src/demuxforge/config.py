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

"""JSON run configuration.

Field names carry their SI unit (``tf_s``, ``dx_shift_m``). Trap frequencies
and lattice depths may be given in Hz (``omega0_hz``, ``v0_max_hz`` meaning
V0/h) and are converted once here; everything downstream is SI.
"""

import dataclasses
import json
import logging
import math
import os
from importlib import resources
from pathlib import Path
from typing import Any, Mapping

from . import dynamics, mapping, spectral
from .model import (
    PLANCK,
    RB87_MASS,
    DemuxForgeError,
    DesignParams,
    SpatialGrid,
    compute_hash,
)
from .protocols import ProtocolSpec

logger = logging.getLogger(__name__)

BUNDLED_CASES = ("caseA", "caseB")
_REQUIRED = object()
_KEYS = {
    "": (
        "case",
        "omega0_hz",
        "lambda_f_rad_per_s",
        "dlambda0_rad_per_s2",
        "tf_s",
        "n_samples",
        "theta_final_rad",
        "mass_kg",
        "dx_shift_m",
        "d_l_m",
        "grid",
        "mapping",
        "dynamics",
        "protocol",
        "thresholds",
    ),
    "grid": ("x_min_m", "x_max_m", "n_points"),
    "mapping": (
        "v0_max_hz",
        "omega_min_hz",
        "omega_max_hz",
        "max_evals",
        "stride",
        "cost_tol_rad2_per_s2",
    ),
    "dynamics": ("dt_s", "n_diagnostics", "levels", "verify_dt"),
    "protocol": ("kind", "bias_flip_duration_s", "baseline", "baseline_tf_s"),
}


class ConfigError(DemuxForgeError):
    """Raised when a run configuration cannot be read or is invalid."""


@dataclasses.dataclass(frozen=True)
class RunConfig:
    """A validated run configuration.

    Attributes:
        case: Case name, the file stem for configs read from disk.
        spec: Design, mapping, dynamics and protocol settings.
        raw: The parsed JSON document, used for provenance hashing.
    """

    case: str
    spec: ProtocolSpec
    raw: Mapping[str, Any]

    @property
    def design(self) -> DesignParams:
        return self.spec.design

    @property
    def config_hash(self) -> str:
        return compute_hash(self.raw)


def _section(data: Mapping, name: str) -> Mapping:
    value = data.get(name, {})
    if not isinstance(value, Mapping):
        raise ConfigError(f"'{name}' must be an object")
    return value


def _check_keys(data: Mapping, section: str) -> None:
    unknown = sorted(set(data) - set(_KEYS[section]))
    if unknown:
        prefix = f"{section}." if section else ""
        names = ", ".join(f"'{prefix}{key}'" for key in unknown)
        raise ConfigError(f"unknown configuration key(s) {names}")


def _number(data: Mapping, key: str, default=_REQUIRED, prefix: str = "") -> Any:
    if key not in data or data[key] is None:
        if default is _REQUIRED:
            raise ConfigError(f"missing required key '{prefix}{key}'")
        return default
    value = data[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"'{prefix}{key}' must be a number, got {value!r}")
    if not math.isfinite(value):
        raise ConfigError(f"'{prefix}{key}' must be finite")
    return value


def _integer(data: Mapping, key: str, default: int, prefix: str = "") -> int:
    value = _number(data, key, default, prefix)
    if int(value) != value:
        raise ConfigError(f"'{prefix}{key}' must be an integer, got {value!r}")
    return int(value)


def _theta_final(value: float) -> float:
    if value == 0:
        return 0.0
    if abs(value - math.pi) < 1e-9:
        return math.pi
    raise ConfigError(f"'theta_final_rad' must be 0 or pi, got {value}")


def parse_run_config(data: Mapping[str, Any], case: str = "custom") -> RunConfig:
    """Build a RunConfig from a parsed JSON document.

    Keys outside the documented layout are rejected. The top-level
    ``case`` key is a free-form label; the run is named after the file stem
    or the bundled case.

    Raises:
        ConfigError: If a key is missing, mistyped, unknown or violates an invariant.
    """
    if not isinstance(data, Mapping):
        raise ConfigError("configuration must be a JSON object")
    grid_data = _section(data, "grid")
    map_data = _section(data, "mapping")
    dyn_data = _section(data, "dynamics")
    protocol = _section(data, "protocol")
    thresholds = _section(data, "thresholds")
    _check_keys(data, "")
    for name, section in (
        ("grid", grid_data),
        ("mapping", map_data),
        ("dynamics", dyn_data),
        ("protocol", protocol),
    ):
        _check_keys(section, name)

    try:
        omega0 = 2 * math.pi * _number(data, "omega0_hz")
        design = DesignParams(
            omega0=omega0,
            lambda_f=float(_number(data, "lambda_f_rad_per_s")),
            dlambda0=float(_number(data, "dlambda0_rad_per_s2")),
            tf=float(_number(data, "tf_s")),
            n_samples=_integer(data, "n_samples", 2001),
            theta_final=_theta_final(_number(data, "theta_final_rad", 0.0)),
        )
        default = spectral.default_grid()
        grid = SpatialGrid(
            x_min=float(_number(grid_data, "x_min_m", default.x_min, "grid.")),
            x_max=float(_number(grid_data, "x_max_m", default.x_max, "grid.")),
            n_points=_integer(grid_data, "n_points", default.n_points, "grid."),
        )
        overrides = {
            "mass": float(_number(data, "mass_kg", RB87_MASS)),
            "max_evals": _integer(map_data, "max_evals", 400, "mapping."),
        }
        if "v0_max_hz" in map_data:
            overrides["v0_max"] = PLANCK * _number(map_data, "v0_max_hz")
        if "omega_min_hz" in map_data or "omega_max_hz" in map_data:
            overrides["omega_bounds"] = (
                2 * math.pi * _number(map_data, "omega_min_hz", 5.0, "mapping."),
                2 * math.pi * _number(map_data, "omega_max_hz", 300.0, "mapping."),
            )
        if map_data.get("cost_tol_rad2_per_s2") is not None:
            overrides["cost_tol"] = _number(map_data, "cost_tol_rad2_per_s2")
        mapping_cfg = mapping.default_mapping_config(
            omega0,
            dx_shift=float(_number(data, "dx_shift_m")),
            d_l=float(_number(data, "d_l_m", spectral.D_LATTICE)),
            grid=grid,
            **overrides,
        )
        baseline_tf = _number(protocol, "baseline_tf_s", None, "protocol.")
        spec = ProtocolSpec(
            kind=str(protocol.get("kind", "demux")),
            design=design,
            mapping=mapping_cfg,
            bias_flip_duration=float(
                _number(protocol, "bias_flip_duration_s", 0.01, "protocol.")
            ),
            thresholds={key: float(value) for key, value in thresholds.items()},
            dt=float(_number(dyn_data, "dt_s", dynamics.DEFAULT_DT, "dynamics.")),
            n_diagnostics=_integer(
                dyn_data, "n_diagnostics", dynamics.DIAGNOSTIC_SAMPLES, "dynamics."
            ),
            levels=_integer(dyn_data, "levels", spectral.DEFAULT_LEVELS, "dynamics."),
            stride=_integer(map_data, "stride", 1, "mapping."),
            baseline=bool(protocol.get("baseline", False)),
            baseline_tf=None if baseline_tf is None else float(baseline_tf),
            verify_dt=bool(dyn_data.get("verify_dt", False)),
        )
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc
    return RunConfig(case=case, spec=spec, raw=dict(data))


def load_run_config(source: str | os.PathLike) -> RunConfig:
    """Load a configuration file, or a bundled case by name.

    Args:
        source: Path to a JSON file, or one of ``BUNDLED_CASES``.

    Raises:
        ConfigError: If the file is missing, empty, not JSON or invalid.
    """
    if str(source) in BUNDLED_CASES:
        case = str(source)
        text = (resources.files("demuxforge") / "cases" / f"{case}.json").read_text()
    else:
        path = Path(source)
        case = path.stem
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read configuration {path}: {exc}") from exc
    if not text.strip():
        raise ConfigError(f"configuration {source} is empty")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"configuration {source} is not valid JSON: {exc}") from exc
    config = parse_run_config(data, case=case)
    logger.info("Loaded configuration %s (%s)", case, config.config_hash[:12])
    return config


def prepare_output_dir(path: str | os.PathLike) -> Path:
    """Create the output directory if needed and check that it is writable."""
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {out}: {exc}") from exc
    if not os.access(out, os.W_OK):
        raise ConfigError(f"output directory {out} is not writable")
    return out
