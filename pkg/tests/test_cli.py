import json
import subprocess
import sys

import pytest
from filelock import FileLock

from ergodic_w2.harness.cli import DEFAULT_OUTPUT, OUTPUT_ENV, run_cli


def test_check_writes_report(tmp_path, capsys):
    assert run_cli(["check", "--model", "bounded_sigma", "--n-pairs", "2000", "--out", str(tmp_path)]) == 0
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["confluence"]["alpha_hat"] > 0 and "hajek" in report
    assert json.loads(capsys.readouterr().out)["violation"] is False


def test_simulate_outputs(tmp_path):
    assert run_cli(["simulate", "--model", "ou", "--horizon", "1", "--dt", "0.01", "--out", str(tmp_path)]) == 0
    for name in ("trajectory.csv", "measure.csv", "report.json"):
        assert (tmp_path / name).exists()
    assert len((tmp_path / "trajectory.csv").read_text().splitlines()) == 102


def test_outputs_are_byte_identical(tmp_path):
    args = ["rates", "--model", "ou", "--t", "1,2,4,8", "--reps", "3", "--n-ref", "200"]
    assert run_cli(args + ["--out", str(tmp_path / "a")]) == 0
    assert run_cli(args + ["--out", str(tmp_path / "b")]) == 0
    for name in ("rates.csv", "fit.json", "report.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_config_file_and_env_output(tmp_path, monkeypatch):
    cfg = tmp_path / "run.toml"
    cfg.write_text('[model]\nkind = "cubic"\n[simulate]\nhorizon = 0.5\nburn_in = 5.0\n')
    monkeypatch.setenv(OUTPUT_ENV, str(tmp_path / "env_out"))
    assert run_cli(["simulate", "--config", str(cfg)]) == 0
    assert json.loads((tmp_path / "env_out" / "report.json").read_text())["model"]["name"] == "cubic"


def test_default_output_directory(tmp_path, monkeypatch):
    monkeypatch.delenv(OUTPUT_ENV, raising=False)
    monkeypatch.chdir(tmp_path)
    assert run_cli(["averaging", "--kind", "cesaro", "--T", "100"]) == 0
    assert (tmp_path / DEFAULT_OUTPUT / "averaging.csv").exists()


def test_concentration_and_averaging(tmp_path):
    assert run_cli(["concentration", "--reps", "1000", "--out", str(tmp_path / "c")]) == 0
    assert run_cli(["concentration", "--kind", "polynomial", "--z", "state_linear", "--reps", "1000", "--t", "2",
                    "--ell", "1,2", "--out", str(tmp_path / "p")]) == 0
    assert run_cli(["averaging", "--g", "power:0.5", "--u", "power:-0.25", "--lower", "1",
                    "--out", str(tmp_path / "k")]) == 0
    assert json.loads((tmp_path / "k" / "report.json").read_text())["kind"] == "kronecker"


def test_aspath(tmp_path):
    assert run_cli(["aspath", "--model", "ou", "--horizon", "40", "--checkpoints", "5,10,20,40", "--settle-t", "5",
                    "--n-ref", "500", "--out", str(tmp_path)]) == 0
    assert (tmp_path / "aspath.csv").read_text().startswith("t,statistic,envelope_ratio,running_max")


def test_selftest(tmp_path):
    assert run_cli(["selftest", "--out", str(tmp_path)]) == 0
    assert json.loads((tmp_path / "selftest.json").read_text())["passed"] is True


@pytest.mark.parametrize("argv", [
    ["check", "--model", "nope"],
    ["simulate", "--dt", "-1"],
    ["rates", "--t", "1,2,4"],
    ["simulate", "--A", "[[1,"],
    ["check", "--config", "does_not_exist.toml"],
])
def test_configuration_errors_exit_2(tmp_path, argv, capsys):
    assert run_cli(argv + ["--out", str(tmp_path)]) == 2
    assert "error" in capsys.readouterr().err


def test_argparse_errors_exit_2(tmp_path):
    assert run_cli(["frobnicate"]) == 2
    assert run_cli(["rates", "--t", "a,b"]) == 2


def test_unstable_step_exits_2(tmp_path):
    # dt * alpha = 1.6 breaks the explicit-scheme stability guard
    assert run_cli(["simulate", "--model", "ou", "--dt", "0.4", "--theta", "2", "--horizon", "1",
                    "--x0", "0", "--out", str(tmp_path)]) == 2


def test_busy_output_directory(tmp_path):
    with FileLock(str(tmp_path / ".ergodic_w2.lock")):
        assert run_cli(["selftest", "--out", str(tmp_path)]) == 2


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "ergodic_w2", "averaging", "--T", "100", "--out", str(tmp_path)],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
