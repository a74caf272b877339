"""Config parsing, CLI entry points and exit codes."""

import csv
import os

import pytest

from chadapt import cli
from chadapt.errors import ConfigError


def write_config(tmp_path, text, name="run.cfg"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def test_parse_config_file(tmp_path):
    path = write_config(tmp_path, """
# a comment line
problem = constant_one
adapt.tau0 = 1e-4    # trailing comment
out = results
""")
    options = cli.parse_config_file(path)
    assert options == {"problem": "constant_one",
                       "adapt.tau0": "1e-4", "out": "results"}


def test_parse_config_rejects_bad_lines(tmp_path):
    path = write_config(tmp_path, "problem constant_one\n")
    with pytest.raises(ConfigError) as err:
        cli.parse_config_file(path)
    assert ":1:" in str(err.value)


def test_parse_config_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        cli.parse_config_file(str(tmp_path / "nope.cfg"))


def test_build_run_preset_with_overrides(tmp_path):
    options = {"problem": "example1_desk", "adapt.tol_t": "0.5",
               "adapt.tol_t_min": "0.1", "estimator": "residual",
               "mesh.nx": "8"}
    problem, config, out = cli.build_run(options)
    assert problem.eps == 0.08
    assert problem.resolution == (8, 8)
    assert config.tol_t == 0.5
    assert config.estimator == "residual"
    # preset defaults survive where not overridden
    assert config.tau0 == 5e-8


def test_build_run_custom_expression():
    options = {"expr": "tanh(x / eps)", "eps": "0.1",
               "domain": "0 1 0 1", "mesh.nx": "4"}
    problem, config, out = cli.build_run(options)
    assert problem.name == "custom"
    assert problem.domain == (0.0, 1.0, 0.0, 1.0)


def test_build_run_errors():
    with pytest.raises(ConfigError):
        cli.build_run({})                                  # no problem/expr
    with pytest.raises(ConfigError):
        cli.build_run({"expr": "x"})                       # missing eps
    with pytest.raises(ConfigError):
        cli.build_run({"problem": "constant_one", "adapt.bogus": "1"})
    with pytest.raises(ConfigError):
        cli.build_run({"expr": "x", "eps": "0.1", "domain": "0 1 0"})


def test_build_run_fixed_flags():
    options = {"problem": "constant_one", "fixed_mesh": "yes",
               "fixed_tau": "2e-5"}
    problem, config, out = cli.build_run(options)
    assert config.space_adapt is False
    assert config.time_adapt is False
    assert config.tau0 == 2e-5


def test_run_constant_one_single_row(tmp_path, capsys):
    cfg = write_config(tmp_path, "problem = constant_one\n")
    out_dir = tmp_path / "out"
    code = cli.main(["run", cfg, "--out", str(out_dir)])
    assert code == 0
    with open(out_dir / "history.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert len(rows) == 2          # header plus one accepted step
    captured = capsys.readouterr().out
    assert "accepted steps: 1" in captured
    assert "stop reason: energy_plateau" in captured


def test_run_writes_snapshots(tmp_path):
    cfg = write_config(tmp_path,
                       "problem = constant_one\nsnapshot_every = 1\n")
    out_dir = tmp_path / "out"
    code = cli.main(["run", cfg, "--out", str(out_dir)])
    assert code == 0
    assert any(name.endswith(".vtk") for name in os.listdir(out_dir))


def test_run_determinism(tmp_path):
    cfg = write_config(tmp_path, "problem = constant_one\nseed = 7\n")
    out1, out2 = tmp_path / "o1", tmp_path / "o2"
    assert cli.main(["run", cfg, "--out", str(out1)]) == 0
    assert cli.main(["run", cfg, "--out", str(out2)]) == 0
    h1 = (out1 / "history.csv").read_bytes()
    h2 = (out2 / "history.csv").read_bytes()
    assert h1 == h2


def test_bad_config_exit_code(tmp_path, capsys):
    cfg = write_config(tmp_path, "problem = not_a_problem\n")
    assert cli.main(["run", cfg]) == cli.EXIT_CONFIG
    assert "config error" in capsys.readouterr().err


def test_missing_config_exit_code(tmp_path):
    assert cli.main(["run", str(tmp_path / "nope.cfg")]) == cli.EXIT_CONFIG


def test_unknown_verify_suite(capsys):
    assert cli.main(["verify", "nonsense"]) == cli.EXIT_CONFIG


def test_verify_oracles(capsys):
    assert cli.main(["verify", "oracles"]) == 0
    out = capsys.readouterr().out
    assert "[PASS]" in out
    assert "checks passed" in out


def test_fixed_tau_flag_overrides_config(tmp_path):
    cfg = write_config(tmp_path,
                       "problem = constant_one\nfixed_tau = 1e-3\n")
    problem, config, out = cli.build_run(cli.parse_config_file(cfg),
                                         {"fixed_tau": 5e-4})
    assert config.tau0 == 5e-4
    assert config.time_adapt is False
