"""Tests for the CLI module."""

import json
import math
import tempfile
import unittest
from importlib import resources
from pathlib import Path
from unittest.mock import patch

import numpy as np
import pytest
from click.testing import CliRunner

from demuxforge import _progress_item_label, cli
from demuxforge.artifacts import write_curve, write_schedule
from demuxforge.model import (
    PLANCK,
    RB87_MASS,
    ControlCurve,
    DemuxForgeError,
    PhysicalSchedule,
)
from demuxforge.protocols import ProtocolReport

OMEGA0 = 2 * math.pi * 78


def _schedule(n=5):
    return PhysicalSchedule(
        times=np.linspace(0.0, 0.25, n),
        v0=PLANCK * np.linspace(0.0, 3000.0, n),
        omega=np.full(n, OMEGA0),
        dx_shift=1e-7,
        residuals=np.zeros(n),
        saturated=np.zeros(n, dtype=bool),
        d_l=5.18e-6,
        mass=RB87_MASS,
    )


def _report(passed=True, kind="demux"):
    return ProtocolReport(
        kind=kind,
        stages={"ground": {"passed": passed, "fidelity": 0.9999}},
        overall_fidelity=0.9999 if passed else 0.5,
        passed=passed,
        provenance={"config_hash": "abc"},
    )


@patch("demuxforge.logging.basicConfig")
class TestCli(unittest.TestCase):
    """Tests for the Click CLI entry point."""

    def setUp(self):
        self._tmp = tempfile.TemporaryDirectory()
        self.tmp = Path(self._tmp.name)
        self.out = self.tmp / "out"
        self.runner = CliRunner()

    def tearDown(self):
        self._tmp.cleanup()

    def _invoke(self, *args, env=None):
        return self.runner.invoke(cli, list(args), env=env, catch_exceptions=False)

    def _schedule_file(self):
        return str(write_schedule(self.tmp / "schedule.csv", _schedule()))

    def test_design_writes_artifacts(self, _mock_basic_config):
        """design on case A passes and writes the curves and checks."""
        result = self._invoke("design", "--config", "caseA", "--out", str(self.out))
        self.assertEqual(result.exit_code, 0, result.output)
        for name in (
            "curve.csv",
            "two_level_populations.csv",
            "fast_adiabatic.csv",
            "design_checks.json",
        ):
            self.assertTrue((self.out / name).is_file(), name)
        report = json.loads((self.out / "design_checks.json").read_text())
        self.assertIn("config_hash", report["provenance"])

    def test_design_is_deterministic(self, _mock_basic_config):
        """Two design runs write byte-identical artifacts."""
        first, second = self.tmp / "first", self.tmp / "second"
        for out in (first, second):
            result = self._invoke("design", "--config", "caseA", "--out", str(out))
            self.assertEqual(result.exit_code, 0, result.output)
        for name in (
            "curve.csv",
            "two_level_populations.csv",
            "fast_adiabatic.csv",
            "design_checks.json",
        ):
            self.assertEqual(
                (first / name).read_bytes(), (second / name).read_bytes(), name
            )

    @pytest.mark.slow
    @pytest.mark.integration
    def test_map_is_deterministic(self, _mock_basic_config):
        """Two map runs of a coarse case A curve write identical schedules."""
        config = json.loads(
            (resources.files("demuxforge") / "cases" / "caseA.json").read_text()
        )
        config["n_samples"] = 41
        path = self.tmp / "coarse.json"
        path.write_text(json.dumps(config), encoding="utf-8")
        first, second = self.tmp / "first", self.tmp / "second"
        codes = []
        for out in (first, second):
            codes.append(
                self._invoke("map", "--config", str(path), "--out", str(out)).exit_code
            )
        self.assertEqual(codes[0], codes[1])
        for name in ("schedule.csv", "schedule.json", "mapping_report.json"):
            self.assertEqual(
                (first / name).read_bytes(), (second / name).read_bytes(), name
            )

    def test_invalid_configuration(self, _mock_basic_config):
        """A non-positive duration exits with code 2."""
        config = {
            "omega0_hz": 78.0,
            "lambda_f_rad_per_s": 10.0,
            "dlambda0_rad_per_s2": 10.0,
            "tf_s": 0.0,
            "dx_shift_m": 1e-7,
        }
        path = self.tmp / "bad.json"
        path.write_text(json.dumps(config), encoding="utf-8")
        result = self._invoke("design", "--config", str(path), "--out", str(self.out))
        self.assertEqual(result.exit_code, 2)

    def test_missing_configuration(self, _mock_basic_config):
        """A configuration that does not exist exits with code 2."""
        result = self._invoke(
            "design", "--config", str(self.tmp / "absent.json"), "--out", str(self.out)
        )
        self.assertEqual(result.exit_code, 2)

    def test_missing_curve_file(self, _mock_basic_config):
        """map rejects a curve path that does not exist."""
        result = self.runner.invoke(
            cli,
            [
                "map",
                "--config",
                "caseA",
                "--out",
                str(self.out),
                "--curve",
                str(self.tmp / "absent.csv"),
            ],
        )
        self.assertEqual(result.exit_code, 2)

    def test_output_directory_blocked(self, _mock_basic_config):
        """An output path below a file exits with code 2."""
        blocker = self.tmp / "file"
        blocker.write_text("x", encoding="utf-8")
        result = self._invoke(
            "design", "--config", "caseA", "--out", str(blocker / "out")
        )
        self.assertEqual(result.exit_code, 2)

    @patch("demuxforge.mapping.continuity_report", return_value={"max_ratio": 1.0})
    @patch("demuxforge.mapping.round_trip_error", return_value=1e-3)
    @patch("demuxforge.mapping.map_schedule", return_value=_schedule())
    def test_map_passes_stride(
        self, mock_map, _mock_round_trip, _mock_continuity, _mock_basic_config
    ):
        """--stride overrides the configured stride."""
        times = np.linspace(0.0, 0.25, 5)
        curve = write_curve(
            self.tmp / "curve.csv",
            ControlCurve(times, np.full(5, OMEGA0), np.linspace(0.0, 10.0, 5)),
        )
        result = self._invoke(
            "map",
            "--config",
            "caseA",
            "--out",
            str(self.out),
            "--curve",
            str(curve),
            "--stride",
            "4",
        )
        self.assertEqual(result.exit_code, 0, result.output)
        self.assertEqual(mock_map.call_args.kwargs["stride"], 4)
        self.assertTrue((self.out / "schedule.csv").is_file())
        report = json.loads((self.out / "mapping_report.json").read_text())
        self.assertTrue(report["passed"])
        self.assertEqual(report["saturated_samples"], 0)

    @patch("demuxforge.protocols.run_protocol", return_value=_report())
    def test_simulate_passes(self, mock_run, _mock_basic_config):
        """A passing report exits with 0 and threads come from the environment."""
        result = self._invoke(
            "simulate",
            "--config",
            "caseA",
            "--out",
            str(self.out),
            "--schedule",
            self._schedule_file(),
            env={"DEMUXFORGE_THREADS": "3"},
        )
        self.assertEqual(result.exit_code, 0, result.output)
        self.assertEqual(mock_run.call_args.kwargs["threads"], 3)
        summary = json.loads((self.out / "summary.json").read_text())
        self.assertTrue(summary["passed"])
        self.assertEqual(summary["kind"], "demux")

    @patch("demuxforge.protocols.run_protocol", return_value=_report(passed=False))
    def test_simulate_check_failure(self, _mock_run, _mock_basic_config):
        """A failing report exits with code 3."""
        result = self._invoke(
            "simulate",
            "--config",
            "caseA",
            "--out",
            str(self.out),
            "--schedule",
            self._schedule_file(),
        )
        self.assertEqual(result.exit_code, 3)
        self.assertTrue((self.out / "summary.json").is_file())

    @patch(
        "demuxforge.protocols.run_protocol",
        side_effect=DemuxForgeError("tunneling not suppressed"),
    )
    def test_simulate_domain_error(self, _mock_run, _mock_basic_config):
        """Domain errors exit with code 3."""
        result = self._invoke(
            "simulate",
            "--config",
            "caseA",
            "--out",
            str(self.out),
            "--schedule",
            self._schedule_file(),
        )
        self.assertEqual(result.exit_code, 3)

    @patch("demuxforge.protocols.run_protocol", side_effect=RuntimeError("boom"))
    def test_simulate_unexpected_error(self, _mock_run, _mock_basic_config):
        """Unexpected errors exit with code 1."""
        result = self._invoke(
            "simulate",
            "--config",
            "caseA",
            "--out",
            str(self.out),
            "--schedule",
            self._schedule_file(),
        )
        self.assertEqual(result.exit_code, 1)

    @patch(
        "demuxforge.protocols.population_inversion",
        return_value=_report(kind="population_inversion"),
    )
    def test_invert(self, mock_inversion, _mock_basic_config):
        """invert writes its report and forces the inversion protocol."""
        result = self._invoke(
            "invert",
            "--config",
            "caseA",
            "--out",
            str(self.out),
            "--schedule",
            self._schedule_file(),
            "--threads",
            "2",
        )
        self.assertEqual(result.exit_code, 0, result.output)
        spec = mock_inversion.call_args.args[0]
        self.assertEqual(spec.kind, "population_inversion")
        report = json.loads((self.out / "report.json").read_text())
        self.assertEqual(report["kind"], "population_inversion")


class TestProgressLabel(unittest.TestCase):
    """Tests for _progress_item_label."""

    def test_labels(self):
        """Tuples show their first element and None shows nothing."""
        self.assertEqual(_progress_item_label(("demux/ground", None)), "demux/ground")
        self.assertEqual(_progress_item_label("mux"), "mux")
        self.assertEqual(_progress_item_label(None), "")


if __name__ == "__main__":
    unittest.main()
