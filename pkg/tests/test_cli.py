"""Command-line interface: exit codes, artifacts, and determinism."""

import json

from damsec.cli import main

from test_experiments import CONFIG_TEXT


def _write_config(tmp_path, out_name="results"):
    path = tmp_path / "exp.yaml"
    path.write_text(CONFIG_TEXT.format(out=tmp_path / out_name))
    return path


class TestExitCodes:
    def test_missing_config_is_config_error(self, tmp_path, capsys):
        code = main(["sse-sweep", "--config", str(tmp_path / "absent.yaml")])
        assert code == 1
        assert "absent.yaml" in capsys.readouterr().err

    def test_unknown_flag(self, capsys):
        assert main(["sse-sweep", "--bogus"]) == 1

    def test_unknown_command(self, capsys):
        assert main(["frobnicate"]) == 1

    def test_validate_passes(self, capsys):
        code = main(["--seed", "0", "validate", "--symbols", "20000",
                     "--tol", "0.1"])
        out = capsys.readouterr().out
        assert code == 0
        assert "PASS" in out and "FAIL" not in out


class TestSweepCommands:
    def test_sse_sweep_artifacts_and_determinism(self, tmp_path, capsys):
        cfg = _write_config(tmp_path)
        out = tmp_path / "results"
        assert main(["sse-sweep", "--config", str(cfg)]) == 0
        csv_path = out / "sse_vs_power.csv"
        first = csv_path.read_bytes()
        assert first.decode().splitlines()[0] == \
            "scheme,power_dbm,metric,value,trials,stderr"
        assert (out / "manifest.json").exists()
        assert main(["sse-sweep", "--config", str(cfg)]) == 0
        assert csv_path.read_bytes() == first

    def test_crb_sweep_artifacts(self, tmp_path, capsys):
        cfg = _write_config(tmp_path)
        assert main(["crb-sweep", "--config", str(cfg), "--trials", "3"]) == 0
        lines = (tmp_path / "results" / "crb_rmse_vs_power.csv").read_text()
        assert "crb_n16" in lines and "crb_n32" in lines and "rmse" in lines

    def test_out_override(self, tmp_path, capsys):
        cfg = _write_config(tmp_path)
        alt = tmp_path / "elsewhere"
        assert main(["crb-sweep", "--config", str(cfg), "--trials", "2",
                     "--out", str(alt)]) == 0
        assert (alt / "crb_rmse_vs_power.csv").exists()


class TestSolve:
    def test_solution_artifacts(self, tmp_path, capsys):
        cfg = _write_config(tmp_path)
        assert main(["--seed", "5", "solve", "--config", str(cfg)]) == 0
        out = tmp_path / "results"
        summary = json.loads((out / "solution.json").read_text())
        assert summary["iterations"] >= 1
        hist = summary["objective_history"]
        assert all(b >= a - 1e-9 for a, b in zip(hist, hist[1:]))
        assert summary["total_power_w"] <= 1.0 * (1 + 1e-6)
        trace = (out / "sca_trace.csv").read_text().splitlines()
        assert trace[0] == "iteration,gamma"
