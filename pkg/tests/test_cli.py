"""Subcomandos de punta a punta: archivos, manifiestos y códigos de salida"""

import json
import os
import subprocess
import sys
from pathlib import Path

import pandas as pd
import pytest

from qpump.cli import main
from qpump.core.error_handler import EXIT_INPUT, EXIT_OK
from qpump.utils.io import manifest_path, sibling_path


REPO_ROOT = Path(__file__).resolve().parents[1]


def _error_record(stderr: str) -> dict:
    for line in stderr.splitlines():
        try:
            record = json.loads(line)
        except ValueError:
            continue
        if isinstance(record, dict) and record.get("error"):
            return record
    raise AssertionError(f"no error record in stderr: {stderr!r}")


class TestSweepFlux:
    def test_writes_table_and_manifest(self, tmp_path):
        out = tmp_path / "flux.csv"
        assert main(["sweep-flux", "--out", str(out)]) == EXIT_OK
        table = pd.read_csv(out)
        assert list(table.columns) == ["f", "omega_ghz", "t1qp_us", "clamped"]
        at_zero = table.loc[table["f"].abs() < 1e-12, "t1qp_us"]
        assert at_zero.iloc[0] == pytest.approx(23.0, rel=1e-12)
        # Grilla simétrica: la columna también lo es
        values = table["t1qp_us"].to_numpy()
        assert values == pytest.approx(values[::-1], rel=1e-12)

        manifest = json.loads(manifest_path(out).read_text(encoding="utf-8"))
        assert manifest["command"] == "sweep-flux"
        assert len(manifest["config_digest"]) == 64

    def test_uniform_distribution_override(self, tmp_path):
        out = tmp_path / "flux.csv"
        assert main(["sweep-flux", "--distribution", "uniform", "--out", str(out)]) == EXIT_OK
        manifest = json.loads(manifest_path(out).read_text(encoding="utf-8"))
        assert manifest["extra"]["qp_distribution"] == "uniform"


class TestConfigErrors:
    def test_missing_config_exits_two(self, tmp_path, capsys):
        code = main(["sweep-flux", "--config", str(tmp_path / "nope.json")])
        assert code == EXIT_INPUT
        record = _error_record(capsys.readouterr().err)
        assert "config not found" in record["message"]
        assert record["type"] == "config_error"

    def test_invalid_override_exits_two(self, tmp_path, capsys):
        code = main(["simulate-decay", "--trials", "0", "--out", str(tmp_path / "x.csv")])
        assert code == EXIT_INPUT
        assert "n_trials" in _error_record(capsys.readouterr().err)["message"]

    def test_invalid_value_in_file(self, write_config, capsys):
        path = write_config({"sim": {"decay": {"n_avg": 2.5, "t1qp": 0, "t1r": 55.0}}})
        assert main(["simulate-decay", "--config", str(path), "--mode", "analytic"]) == EXIT_INPUT
        assert "sim.decay.t1qp" in _error_record(capsys.readouterr().err)["message"]


class TestSimulateAndFit:
    def test_analytic_trace_fits_back(self, tmp_path):
        trace = tmp_path / "decay.csv"
        assert main(["simulate-decay", "--mode", "analytic", "--out", str(trace)]) == EXIT_OK
        fit_out = tmp_path / "fit.json"
        assert main(["fit", "--trace", str(trace), "--free-t1r", "--out", str(fit_out)]) == EXIT_OK
        document = json.loads(fit_out.read_text(encoding="utf-8"))
        assert document["params"]["n_avg"] == pytest.approx(2.5, rel=0.01)
        assert document["params"]["t1qp"] == pytest.approx(23.0, rel=0.01)
        assert document["params"]["t1r"] == pytest.approx(55.0, rel=0.01)
        assert document["free_parameters"] == ["n_avg", "t1qp", "t1r"]
        assert document["converged"]

    def test_fit_pins_t1r_from_config(self, tmp_path):
        trace = tmp_path / "decay.csv"
        main(["simulate-decay", "--mode", "analytic", "--out", str(trace)])
        fit_out = tmp_path / "fit.json"
        assert main(["fit", "--trace", str(trace), "--out", str(fit_out)]) == EXIT_OK
        document = json.loads(fit_out.read_text(encoding="utf-8"))
        assert document["params"]["t1r"] == 55.0
        assert "t1r" not in document["stderr"]

    def test_fit_empty_file_exits_two(self, tmp_path, capsys):
        empty = tmp_path / "empty.csv"
        empty.write_text("", encoding="utf-8")
        assert main(["fit", "--trace", str(empty)]) == EXIT_INPUT
        assert _error_record(capsys.readouterr().err)["type"] == "input_error"

    def test_fix_and_free_are_exclusive(self, tmp_path):
        with pytest.raises(SystemExit) as excinfo:
            main(["fit", "--trace", str(tmp_path / "t.csv"), "--fix-t1r", "50", "--free-t1r"])
        assert excinfo.value.code == 2

    @pytest.mark.slow
    def test_montecarlo_output_is_reproducible(self, tmp_path):
        args = ["simulate-decay", "--trials", "600", "--seed", "17"]
        serial, parallel, again = tmp_path / "a.csv", tmp_path / "b.csv", tmp_path / "c.csv"
        assert main(args + ["--workers", "1", "--out", str(serial)]) == EXIT_OK
        assert main(args + ["--workers", "2", "--out", str(parallel)]) == EXIT_OK
        assert main(args + ["--workers", "1", "--out", str(again)]) == EXIT_OK
        assert serial.read_bytes() == parallel.read_bytes() == again.read_bytes()

        manifest = json.loads(manifest_path(serial).read_text(encoding="utf-8"))
        assert manifest["seed"] == 17
        assert manifest["config"]["sim"]["n_trials"] == 600


class TestSimulatePump:
    def test_single_pulse_count(self, tmp_path):
        out = tmp_path / "pump.csv"
        assert main(["simulate-pump", "--pulse-counts", "0", "--trials", "200", "--out", str(out)]) == EXIT_OK
        table = pd.read_csv(out)
        assert len(table) == 1
        assert table["N"].tolist() == [0]
        traces = pd.read_csv(sibling_path(out, "traces"))
        assert set(traces["n_pulses"]) == {0}
        assert len(traces) == 30


class TestSweepTemperature:
    def test_low_temperature_plateau(self, tmp_path):
        out = tmp_path / "temp.csv"
        assert main(["sweep-temperature", "--out", str(out)]) == EXIT_OK
        table = pd.read_csv(out)
        low = table[table["temp_K"] <= 0.1]
        assert ((low["t1_us"] - 55.0).abs() / 55.0 < 0.01).all()
        assert table["t1_us"].iloc[-1] < table["t1_us"].iloc[0]

    def test_single_temperature(self, tmp_path, write_config):
        path = write_config({"sim": {"thermal": {"temperatures": [0.05]}}})
        out = tmp_path / "temp.csv"
        assert main(["sweep-temperature", "--config", str(path), "--simulate-fit", "--out", str(out)]) == EXIT_OK
        table = pd.read_csv(out)
        assert len(table) == 1
        assert "t1_fit_us" in table.columns


class TestLaunchers:
    @pytest.mark.parametrize("launcher", [["-m", "qpump"], ["run.py"]])
    def test_runs_from_repository_root(self, launcher, tmp_path):
        out = tmp_path / "flux.csv"
        env = {**os.environ, "PYTHONPATH": str(REPO_ROOT / "src")}
        completed = subprocess.run(
            [sys.executable, *launcher, "sweep-flux", "--out", str(out)],
            cwd=REPO_ROOT,
            env=env,
            capture_output=True,
            text=True,
            timeout=120,
        )
        assert completed.returncode == EXIT_OK, completed.stderr
        assert out.is_file()
