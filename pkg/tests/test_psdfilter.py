import argparse

import numpy as np
import pytest

from lib.experiments import load_config
from lib.psd_core import GaussianPsdModel
from lib.serialization import save_model
from psdfilter import EXIT_CONFIG, EXIT_NUMERIC, EXIT_OK, ExperimentRunner, build_parser, main, parse_seeds


def test_parse_seeds():
    """Test comma lists and inclusive ranges."""
    assert parse_seeds("0,2,5") == [0, 2, 5]
    assert parse_seeds("1-3") == [1, 2, 3]
    with pytest.raises(argparse.ArgumentTypeError):
        parse_seeds("a,b")


def test_runner_registers_commands(config_file, capsys):
    """Test the command table and help output."""
    runner = ExperimentRunner(load_config(str(config_file())))
    assert runner.command_names == ["learn", "filter", "stability", "bench", "help"]
    assert runner.execute_command("HELP ")
    assert "Available commands" in capsys.readouterr().out
    assert not runner.execute_command("dance")


def test_main_filter_succeeds(config_file, tmp_path):
    """Test a full filter run from the command line with overrides."""
    out = tmp_path / "cli"
    code = main(["filter", "--config", str(config_file()), "--out", str(out), "--seeds", "0-1", "--grid", "24"])
    assert code == EXIT_OK
    assert (out / "filter_psd_seed1.csv").exists()
    assert (out / "filter_grid_seed0.csv").exists()


def test_main_records_wall_time(config_file, tmp_path):
    """Test that wall times are written only when requested."""
    out = tmp_path / "timed"
    assert main(["filter", "-c", str(config_file(methods=["psd"])), "-o", str(out), "--record-wall-time"]) == EXIT_OK
    lines = (out / "filter_psd_seed0.csv").read_text().splitlines()
    assert any(int(line.rsplit(",", 1)[1]) > 0 for line in lines[3:])


def test_main_invalid_config_exits_2(config_file):
    """Test that configuration errors map to exit code 2."""
    assert main(["filter", "--config", str(config_file(steps=0))]) == EXIT_CONFIG


def test_main_missing_config_exits_2(tmp_path):
    """Test that an absent config file maps to exit code 2."""
    assert main(["learn", "--config", str(tmp_path / "nope.json")]) == EXIT_CONFIG


def test_main_numeric_failure_exits_3(config_file, tmp_path):
    """Test that a zero-evidence filter step maps to exit code 3."""
    zero = GaussianPsdModel(
        anchors=np.zeros((2, 2)), precision=[1.0, 1.0], weights=np.zeros((2, 2)), groups=(("u", 1), ("x", 1))
    )
    obs = GaussianPsdModel(
        anchors=np.zeros((1, 2)), precision=[1.0, 1.0], weights=np.ones((1, 1)), groups=(("x", 1), ("y", 1))
    )
    save_model(zero, tmp_path / "q.json")
    save_model(obs, tmp_path / "g.json")
    path = config_file(methods=["psd"], models={"transition": "q.json", "observation": "g.json"})
    assert main(["filter", "--config", str(path)]) == EXIT_NUMERIC


def test_main_help_needs_no_config(capsys):
    """Test that help prints the command table without an experiment file."""
    assert main(["help"]) == EXIT_OK
    out = capsys.readouterr().out
    for name in ExperimentRunner().command_names:
        assert name in out


def test_main_command_without_config_exits_2():
    """Test that every other command still requires --config."""
    assert main(["filter"]) == EXIT_CONFIG


def test_parser_choices_follow_registered_commands():
    """Test that the parser accepts exactly the registered command names."""
    parser = build_parser(ExperimentRunner().command_names)
    assert parser.parse_args(["bench"]).command == "bench"
    with pytest.raises(SystemExit):
        parser.parse_args(["dance"])
