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

"""Design and verification of fast two-mode demultiplexers.

This module provides the ``demuxforge`` command line. Each subcommand reads a
JSON run configuration (or a bundled case), runs one pipeline stage and
writes CSV/JSON artifacts into the output directory. Exit codes: 0 when every
check passes, 2 for invalid configuration or input, 3 when a design, mapping
or simulation check fails, 1 for unexpected errors.
"""

import dataclasses
import logging
import sys
from logging.handlers import RotatingFileHandler
from pathlib import Path

import click
import click_spinner
import numpy as np

from . import artifacts, mapping, model2l, protocols
from .config import ConfigError, load_run_config, prepare_output_dir
from .model import DemuxForgeError, ValidationError

EXIT_ERROR = 1
EXIT_INVALID = 2
EXIT_CHECK_FAILED = 3
LOG_FILE = "demuxforge.log"


def _progress_item_label(item) -> str:
    """Render the current item inside Click progress bars.

    Examples:
        >>> _progress_item_label(("baseline/ground", object()))
        'baseline/ground'
        >>> _progress_item_label(None)
        ''
    """
    if item is None:
        return ""
    if isinstance(item, tuple) and item:
        return str(item[0])
    return str(item)


def _configure_logging(out_dir: Path, log_level: str):
    logging.basicConfig(
        level=getattr(logging, log_level.upper()),
        format="%(asctime)s - %(name)s - %(levelname)s - [%(threadName)s] - %(message)s",
        handlers=[
            RotatingFileHandler(
                out_dir / LOG_FILE, maxBytes=10 * 1024 * 1024, backupCount=5
            ),
        ],
        force=True,
    )


def _run_stage(name: str, action, config_source: str, out: str, log_level: str):
    """Load the configuration, run ``action`` and map the outcome to an exit code.

    ``action`` receives the RunConfig and the output directory and returns
    whether its checks passed.
    """
    try:
        out_dir = prepare_output_dir(out)
    except ConfigError as exc:
        click.echo(f"Invalid output directory: {exc}", err=True)
        sys.exit(EXIT_INVALID)
    _configure_logging(out_dir, log_level)
    logger = logging.getLogger(__name__)
    logger.info("Starting %s with configuration %s", name, config_source)

    try:
        run_config = load_run_config(config_source)
        click.echo(f"Running {name} for {run_config.case}...")
        passed = action(run_config, out_dir)
    except (ConfigError, ValidationError, OSError) as exc:
        logger.error("Invalid input: %s", str(exc))
        click.echo(f"Invalid input: {exc}", err=True)
        sys.exit(EXIT_INVALID)
    except DemuxForgeError as exc:
        logger.error("%s failed: %s", name, str(exc))
        click.echo(f"{name} failed: {exc}", err=True)
        sys.exit(EXIT_CHECK_FAILED)
    except Exception as e:  # pylint: disable=broad-exception-caught
        logger.error("An unexpected error occurred: %s", str(e))
        logger.debug("Exception details:", exc_info=True)
        click.echo("Application encountered an error and will exit.", err=True)
        sys.exit(EXIT_ERROR)
    finally:
        logger.info("%s terminated.", name)

    if not passed:
        logger.error("%s checks failed", name)
        click.echo(f"{name} checks failed, see {out_dir}", err=True)
        sys.exit(EXIT_CHECK_FAILED)
    click.echo(f"{name} has completed; artifacts in {out_dir}")


def _stage_options(func):
    """Options shared by every subcommand."""
    func = click.option(
        "--out",
        required=True,
        type=click.Path(file_okay=False),
        help="Output directory for artifacts and the log file.",
    )(func)
    return click.option(
        "--config",
        "config_source",
        required=True,
        help="Run configuration JSON file, or a bundled case (caseA, caseB).",
    )(func)


def _stride_option(func):
    return click.option(
        "--stride",
        type=click.IntRange(min=1),
        default=None,
        help="Optimize every N-th sample; the rest are interpolated and verified.",
    )(func)


def _dynamics_options(func):
    func = click.option(
        "--verify-dt",
        is_flag=True,
        default=False,
        help="Halve dt until final fidelities change by less than 1e-7.",
    )(func)
    return click.option(
        "--threads",
        type=click.IntRange(min=1),
        default=2,
        envvar="DEMUXFORGE_THREADS",
        show_default=True,
        help="Maximum number of concurrent propagation jobs.",
    )(func)


def _with_stride(run_config, stride: int | None):
    if stride is None:
        return run_config.spec
    return dataclasses.replace(run_config.spec, stride=stride)


def _mapped_schedule(spec, schedule_path: str | None):
    """Read the schedule file, or design and map one inline."""
    if schedule_path:
        return artifacts.read_schedule(Path(schedule_path))
    click.echo("No schedule given; designing and mapping inline...")
    with click.progressbar(
        length=spec.design.n_samples, label="Mapping samples"
    ) as progress:
        design = protocols.design_demux(spec, progress=progress.update)
    return design.schedule


def _write_trajectories(report, out_dir: Path):
    with click.progressbar(
        list(report.trajectories.items()),
        label="Writing trajectories",
        item_show_func=_progress_item_label,
    ) as progress_iter:
        for key, result in progress_iter:
            stem = key.replace("/", "_")
            artifacts.write_populations(out_dir / f"populations_{stem}.csv", result)
            artifacts.write_wavefunction(
                out_dir / f"final_state_{stem}.csv", result.final_state
            )


@click.group()
@click.option(
    "--log-level",
    default="INFO",
    envvar="DEMUXFORGE_LOG_LEVEL",
    type=click.Choice(
        ["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"], case_sensitive=False
    ),
    help="Set the logging level.",
)
@click.pass_context
def cli(ctx, log_level: str):
    """Design, map and verify fast demultiplexing protocols."""
    ctx.obj = {"log_level": log_level}


@cli.command("design")
@_stage_options
@click.pass_context
def cmd_design(ctx, config_source: str, out: str):
    """Design the two-level control curve and run the design checks."""

    def action(run_config, out_dir: Path) -> bool:
        params = run_config.design
        with click_spinner.spinner():
            design = protocols.design_curve_checks(params)
        artifacts.write_curve(out_dir / "curve.csv", design.curve)

        lower = model2l.eigensystem_2l(design.curve.controls_at(0)).psi_minus
        trajectory = model2l.propagate_2l(design.curve, lower).trajectory
        populations = model2l.two_level_populations(design.curve, trajectory)
        artifacts.write_csv(
            out_dir / "two_level_populations.csv",
            ("t", "P_minus", "P_plus"),
            zip(design.curve.times, populations[:, 0], populations[:, 1]),
        )

        report = {
            "checks": design.checks.to_dict(),
            "angles": {"theta": design.poly.a, "phi": design.poly.b},
            "provenance": {"config_hash": run_config.config_hash},
        }
        if params.lambda_f > 0:
            fast = model2l.fast_adiabatic_curve(
                params.omega0, params.lambda_f, params.tf, params.n_samples
            )
            artifacts.write_curve(out_dir / "fast_adiabatic.csv", fast.curve)
            report["fast_adiabatic"] = {
                "c": fast.c,
                "non_adiabatic": fast.non_adiabatic,
            }
        artifacts.write_json(out_dir / "design_checks.json", report)

        click.echo(
            "Transport fidelities: "
            + ", ".join(f"{value:.10f}" for value in design.checks.transport_fidelities)
        )
        return design.checks.passed

    _run_stage("design", action, config_source, out, ctx.obj["log_level"])


@cli.command("map")
@_stage_options
@_stride_option
@click.option(
    "--curve",
    "curve_path",
    type=click.Path(exists=True, dir_okay=False),
    default=None,
    help="Control curve CSV from 'design'; designed inline when omitted.",
)
@click.pass_context
def cmd_map(ctx, config_source: str, out: str, stride: int | None, curve_path: str):
    """Map the control curve onto lattice depth and trap frequency."""

    def action(run_config, out_dir: Path) -> bool:
        spec = _with_stride(run_config, stride)
        if curve_path:
            curve = artifacts.read_curve(Path(curve_path))
        else:
            curve = protocols.design_curve_checks(spec.design).curve
        with click.progressbar(length=len(curve), label="Mapping samples") as progress:
            schedule = mapping.map_schedule(
                curve, spec.mapping, stride=spec.stride, progress=progress.update
            )
        artifacts.write_schedule(out_dir / "schedule.csv", schedule)

        click.echo("Checking the round trip...")
        with click_spinner.spinner():
            round_trip = mapping.round_trip_error(schedule, curve, spec.grid)
        accepted = ~schedule.saturated
        worst = float(schedule.residuals[accepted].max()) if accepted.any() else 0.0
        passed = worst <= spec.mapping.cost_tol
        artifacts.write_json(
            out_dir / "mapping_report.json",
            {
                "max_residual": worst,
                "cost_tol": spec.mapping.cost_tol,
                "saturated_samples": int(np.count_nonzero(schedule.saturated)),
                "round_trip_error_rad_per_s": round_trip,
                "continuity": mapping.continuity_report(schedule, curve),
                "passed": passed,
                "provenance": {"config_hash": run_config.config_hash},
            },
        )
        return passed

    _run_stage("map", action, config_source, out, ctx.obj["log_level"])


@cli.command("simulate")
@_stage_options
@_stride_option
@_dynamics_options
@click.option(
    "--schedule",
    "schedule_path",
    type=click.Path(exists=True, dir_okay=False),
    default=None,
    help="Schedule CSV from 'map'; designed and mapped inline when omitted.",
)
@click.pass_context
def cmd_simulate(  # pylint: disable=too-many-arguments,too-many-positional-arguments
    ctx,
    config_source: str,
    out: str,
    stride: int | None,
    threads: int,
    verify_dt: bool,
    schedule_path: str,
):
    """Propagate both channels (and the baseline) through the schedule."""

    def action(run_config, out_dir: Path) -> bool:
        spec = _with_stride(run_config, stride)
        if spec.kind == "population_inversion":
            spec = dataclasses.replace(spec, kind="demux")
        spec = dataclasses.replace(spec, verify_dt=spec.verify_dt or verify_dt)
        schedule = _mapped_schedule(spec, schedule_path)
        click.echo(f"Propagating {spec.kind} with up to {threads} thread(s)...")
        with click_spinner.spinner():
            report = protocols.run_protocol(spec, schedule, threads=threads)
        _write_trajectories(report, out_dir)
        artifacts.write_json(out_dir / "summary.json", report.to_dict())
        click.echo(f"Overall fidelity: {report.overall_fidelity:.6f}")
        return report.passed

    _run_stage("simulate", action, config_source, out, ctx.obj["log_level"])


@cli.command("invert")
@_stage_options
@_stride_option
@_dynamics_options
@click.option(
    "--schedule",
    "schedule_path",
    type=click.Path(exists=True, dir_okay=False),
    default=None,
    help="Demux schedule CSV from 'map'; designed and mapped inline when omitted.",
)
@click.pass_context
def cmd_invert(  # pylint: disable=too-many-arguments,too-many-positional-arguments
    ctx,
    config_source: str,
    out: str,
    stride: int | None,
    threads: int,
    verify_dt: bool,
    schedule_path: str,
):
    """Run the three-stage population inversion."""

    def action(run_config, out_dir: Path) -> bool:
        spec = dataclasses.replace(
            _with_stride(run_config, stride),
            kind="population_inversion",
        )
        spec = dataclasses.replace(spec, verify_dt=spec.verify_dt or verify_dt)
        schedule = _mapped_schedule(spec, schedule_path)
        click.echo(f"Running the inversion with up to {threads} thread(s)...")
        with click_spinner.spinner():
            report = protocols.population_inversion(spec, schedule, threads=threads)
        _write_trajectories(report, out_dir)
        artifacts.write_json(out_dir / "report.json", report.to_dict())
        click.echo(f"Inversion fidelity: {report.overall_fidelity:.6f}")
        return report.passed

    _run_stage("invert", action, config_source, out, ctx.obj["log_level"])
