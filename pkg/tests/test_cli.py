"""Tests for the command-line interface."""

import json
from pathlib import Path
from unittest.mock import patch

import pytest

from bundlechoice import __version__
from bundlechoice.cli import create_parser, main
from bundlechoice.config import DgpConfig
from bundlechoice.dgp import simulate
from bundlechoice.panel_io import load_panel_csv, write_panel_csv

CLEAN_ENV = {"BUNDLECHOICE_THREADS": "", "BUNDLECHOICE_OUTPUT_DIR": "", "BUNDLECHOICE_CACHE_DIR": ""}


@pytest.fixture(autouse=True)
def clean_environment():
    """Keep .env files and exported variables out of the tests."""
    with patch.dict("os.environ", CLEAN_ENV), patch("bundlechoice.config.load_dotenv"):
        yield


@pytest.fixture
def panel_csv(tmp_path: Path) -> Path:
    """A simulated panel on disk."""
    return write_panel_csv(simulate(DgpConfig(n=200, seed=4)), tmp_path / "panel.csv")


def write_instance(path: Path, p_t: list) -> Path:
    """A one-pair instance with a falling index for good A."""
    data = {
        "pairs": [
            {
                "P_s": [0.25, 0.4, 0.25, 0.1],
                "P_t": p_t,
                "x_s": [[-1.0], [0.0]],
                "x_t": [[0.0], [0.0]],
                "z": [1.0],
            }
        ],
        "theta": {"beta": [1.0], "gamma": [0.0]},
    }
    path.write_text(json.dumps(data), encoding="utf-8")
    return path


class TestParser:
    """Tests for argument parsing."""

    def test_version(self, capsys: pytest.CaptureFixture) -> None:
        """--version prints the package version."""
        with pytest.raises(SystemExit) as exc_info:
            create_parser().parse_args(["--version"])
        assert exc_info.value.code == 0
        assert __version__ in capsys.readouterr().out

    def test_command_required(self) -> None:
        """A subcommand is required."""
        with pytest.raises(SystemExit):
            create_parser().parse_args([])

    def test_montecarlo_options(self) -> None:
        """--b and --t map to replications and t_len."""
        args = create_parser().parse_args(
            ["montecarlo", "--b", "10", "--t", "3", "--estimators", "two-step", "msm"]
        )
        assert args.replications == 10
        assert args.t_len == 3
        assert args.estimators == ["two-step", "msm"]

    def test_data_required(self) -> None:
        """Commands on a panel need --data."""
        with pytest.raises(SystemExit):
            create_parser().parse_args(["estimate"])


class TestCommands:
    """Tests for the subcommands."""

    def test_simulate(self, tmp_path: Path) -> None:
        """simulate writes a panel CSV."""
        out = tmp_path / "sim.csv"
        code = main(["simulate", "--n", "30", "--t", "3", "--seed", "2", "--out", str(out), "-q"])
        assert code == 0
        panel = load_panel_csv(out)
        assert (panel.n, panel.t_len) == (30, 3)

    def test_estimate_fe_logit(self, panel_csv: Path, tmp_path: Path) -> None:
        """estimate writes a JSON report."""
        out = tmp_path / "estimate.json"
        code = main(["estimate", "--method", "fe-logit", "--data", str(panel_csv), "--out", str(out), "-q"])
        assert code == 0
        report = json.loads(out.read_text(encoding="utf-8"))
        assert report["method"] == "fe-logit"
        assert abs(report["theta"]["beta"][0]) == 1.0

    def test_missing_data_file(self, tmp_path: Path) -> None:
        """A missing panel is reported with exit code 1."""
        code = main(["estimate", "--method", "fe-logit", "--data", str(tmp_path / "absent.csv"), "-q"])
        assert code == 1

    def test_bad_grid(self, panel_csv: Path, tmp_path: Path) -> None:
        """A malformed grid is an input error."""
        code = main(["set", "--data", str(panel_csv), "--grid", "oops", "-o", str(tmp_path), "-q"])
        assert code == 1

    def test_rationalize_feasible(self, tmp_path: Path, capsys: pytest.CaptureFixture) -> None:
        """Equal marginals are rationalizable."""
        instance = write_instance(tmp_path / "ok.json", [0.25, 0.4, 0.25, 0.1])
        out = tmp_path / "report.json"
        code = main(["rationalize", "--instance", str(instance), "--out", str(out), "-q"])
        assert code == 0
        assert "rationalizable" in capsys.readouterr().out
        assert json.loads(out.read_text(encoding="utf-8"))["rationalizable"] is True

    def test_rationalize_infeasible(self, tmp_path: Path, capsys: pytest.CaptureFixture) -> None:
        """The first failing pair is named."""
        instance = write_instance(tmp_path / "bad.json", [0.25, 0.2, 0.25, 0.3])
        code = main(["rationalize", "--instance", str(instance), "-o", str(tmp_path), "-q"])
        assert code == 0
        assert "not rationalizable: first infeasible pair 0" in capsys.readouterr().out
        assert (tmp_path / "rationalize.json").exists()

    def test_montecarlo(self, tmp_path: Path) -> None:
        """A small experiment writes the metrics tables and the cache."""
        code = main(
            [
                "montecarlo",
                "--n", "200",
                "--b", "2",
                "--estimators", "fe-logit",
                "-o", str(tmp_path),
                "--no-progress",
                "-q",
            ]
        )
        assert code == 0
        assert (tmp_path / "metrics.csv").exists()
        assert (tmp_path / "metrics.json").exists()
        assert (tmp_path / ".replication_cache.json").exists()

    def test_clear_cache(self, tmp_path: Path) -> None:
        """--clear-cache exits cleanly with or without a cache."""
        code = main(["montecarlo", "--clear-cache", "-o", str(tmp_path), "-q"])
        assert code == 0

    def test_invalid_configuration(self, tmp_path: Path) -> None:
        """Invalid values are reported as input errors."""
        code = main(["simulate", "--n", "10", "--t", "1", "-o", str(tmp_path), "-q"])
        assert code == 1
