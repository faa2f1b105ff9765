"""
Tests for the mirrorflow command line
"""

import io
import logging
import shutil
import tempfile
import unittest
from pathlib import Path
from unittest.mock import patch

from mirrorflow import __version__
from mirrorflow.cli import (
    EXIT_CERTIFICATE, EXIT_CONFIG, EXIT_OK, EXIT_SOLVER, build_parser, main, setup_logging,
)
from mirrorflow.config import ExperimentConfig
from mirrorflow.core import artifacts

SMALL_CONFIG = """
problem.tau = 0.5
grid.nx = [15]
grid.nt = 10
grid.horizon = 0.5
flow.S = 0.5
"""


class TestCli(unittest.TestCase):
    """Test cases for the run, validate and version commands"""

    def setUp(self):
        """Set up test fixtures"""
        self.temp_dir = Path(tempfile.mkdtemp())
        self.config_path = self.temp_dir / "small.cfg"
        self.config_path.write_text(SMALL_CONFIG)

    def tearDown(self):
        """Clean up test fixtures"""
        root = logging.getLogger()
        for handler in list(root.handlers):
            handler.close()
            root.removeHandler(handler)
        shutil.rmtree(self.temp_dir, ignore_errors=True)

    def invoke(self, *argv):
        with patch("sys.stdout", new_callable=io.StringIO) as stdout:
            code = main(list(argv))
        return code, stdout.getvalue()

    def test_version(self):
        """Test the version command"""
        code, output = self.invoke("version")
        self.assertEqual(code, EXIT_OK)
        self.assertEqual(output.strip(), f"mirrorflow {__version__}")

    def test_validate_preset(self):
        """Test validating a bundled preset by name"""
        code, output = self.invoke("validate", "--config", "lq_ball_1d_tau0", "--show")
        self.assertEqual(code, EXIT_OK)
        self.assertIn("certificates.lambda = 0.0", output)

    def test_validate_bad_file(self):
        """Test that invalid configurations exit with code 2 and list the errors"""
        bad = self.temp_dir / "bad.cfg"
        bad.write_text("flow.eta0 = -1\nflow.probe = [0.0, 9.0]\n")
        code, output = self.invoke("validate", "--config", str(bad))
        self.assertEqual(code, EXIT_CONFIG)
        self.assertIn("flow.eta0", output)
        self.assertIn("flow.probe", output)

    def test_missing_config(self):
        """Test that an unknown preset name is a configuration error"""
        code, _ = self.invoke("validate", "--config", "nowhere")
        self.assertEqual(code, EXIT_CONFIG)

    def test_seed_out_of_range(self):
        """Test that --seed must be an unsigned 64-bit integer"""
        code, output = self.invoke("run", "--config", str(self.config_path), "--seed", "-1")
        self.assertEqual(code, EXIT_CONFIG)
        self.assertIn("--seed", output)

    def test_run_writes_artifacts(self):
        """Test a small run with --out and --seed overrides"""
        out = self.temp_dir / "out"
        code, output = self.invoke("run", "--config", str(self.config_path), "--out", str(out), "--seed", "7")
        self.assertIn(code, (EXIT_OK, EXIT_CERTIFICATE))
        self.assertTrue((out / artifacts.CERTIFICATES_FILE).exists())
        self.assertTrue((out / "run.log").exists())
        self.assertEqual(artifacts.read_json(out / artifacts.MANIFEST_FILE)["seed"], 7)
        self.assertIn("monotone_decrease", output)

    def test_solver_error_exit_code(self):
        """Test that solver failures exit with code 3"""
        self.config_path.write_text(SMALL_CONFIG + "hjb.tolerance = 1e-300\nhjb.max_rounds = 1\n")
        code, output = self.invoke("run", "--config", str(self.config_path), "--out", str(self.temp_dir / "out"))
        self.assertEqual(code, EXIT_SOLVER)
        self.assertIn("hjb", output)

    def test_parser_requires_command(self):
        """Test that a subcommand is mandatory"""
        with patch("sys.stderr", new_callable=io.StringIO):
            with self.assertRaises(SystemExit):
                build_parser().parse_args([])

    def test_debug_logging_touches_only_the_root_logger(self):
        """Test that DEBUG setup sets the root level and leaves named loggers alone"""
        before = dict(logging.Logger.manager.loggerDict)
        with patch.dict("os.environ", {"MIRRORFLOW_LOG_LEVEL": "DEBUG"}):
            setup_logging(ExperimentConfig())
        self.assertEqual(logging.getLogger().level, logging.DEBUG)
        self.assertEqual(set(logging.Logger.manager.loggerDict) - set(before), set())


if __name__ == "__main__":
    unittest.main()
