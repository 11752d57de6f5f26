"""Lectura de trazas CSV, escritura determinista y rutas del manifiesto"""

import json

import pandas as pd
import pytest

from qpump.core.error_handler import InputError
from qpump.models.schemas import DecayTrace
from qpump.utils.io import (
    RunManifest,
    frame_to_csv,
    manifest_path,
    read_trace,
    sibling_path,
    trace_to_frame,
    write_csv,
    write_manifest,
)


def _write(tmp_path, text, name="trace.csv"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


class TestReadTrace:
    def test_full_columns(self, tmp_path):
        path = _write(
            tmp_path,
            "delay_us,population,stderr,n_trials\n0,1.0,0.0,100\n5,0.6,0.05,100\n10,0.4,0.05,100\n",
        )
        trace = read_trace(path)
        assert trace.delays == (0.0, 5.0, 10.0)
        assert trace.populations == (1.0, 0.6, 0.4)
        assert trace.stderr == (0.0, 0.05, 0.05)
        assert trace.n_trials == 100

    def test_optional_columns(self, tmp_path):
        trace = read_trace(_write(tmp_path, "delay_us,population\n0,1\n5,0.5\n"))
        assert trace.stderr == ()
        assert trace.n_trials == 0

    def test_zero_stderr_means_unweighted(self, tmp_path):
        trace = read_trace(_write(tmp_path, "delay_us,population,stderr\n0,1,0\n5,0.5,0\n"))
        assert trace.sigma is None

    def test_missing_file(self, tmp_path):
        with pytest.raises(InputError, match="not found"):
            read_trace(tmp_path / "absent.csv")

    def test_empty_file(self, tmp_path):
        with pytest.raises(InputError, match="empty"):
            read_trace(_write(tmp_path, ""))

    def test_header_only(self, tmp_path):
        with pytest.raises(InputError, match="no data rows"):
            read_trace(_write(tmp_path, "delay_us,population\n"))

    def test_missing_column(self, tmp_path):
        with pytest.raises(InputError, match="population"):
            read_trace(_write(tmp_path, "delay_us,p\n0,1\n"))

    def test_malformed_value_names_line(self, tmp_path):
        path = _write(tmp_path, "delay_us,population\n0,1.0\n5,abc\n10,0.3\n")
        with pytest.raises(InputError, match="line 3"):
            read_trace(path)

    def test_population_out_of_range(self, tmp_path):
        path = _write(tmp_path, "delay_us,population\n0,1.0\n5,0.5\n10,1.2\n")
        with pytest.raises(InputError, match="line 4: population"):
            read_trace(path)

    def test_negative_stderr(self, tmp_path):
        path = _write(tmp_path, "delay_us,population,stderr\n0,1.0,0\n5,0.5,-0.1\n")
        with pytest.raises(InputError, match="line 3: stderr"):
            read_trace(path)

    def test_unsorted_delays(self, tmp_path):
        with pytest.raises(InputError, match="invalid trace"):
            read_trace(_write(tmp_path, "delay_us,population\n5,0.5\n0,1.0\n"))


class TestWriters:
    def test_trace_frame_columns(self):
        frame = trace_to_frame(DecayTrace(delays=(0.0, 5.0), populations=(1.0, 0.5), n_trials=10))
        assert list(frame.columns) == ["delay_us", "population", "stderr", "n_trials"]
        assert frame["stderr"].tolist() == [0.0, 0.0]

    def test_csv_is_deterministic(self, tmp_path):
        frame = pd.DataFrame({"a": [0.1, 1 / 3], "b": [1, 2]})
        first = write_csv(frame, tmp_path / "a.csv").read_bytes()
        second = write_csv(frame, tmp_path / "b.csv").read_bytes()
        assert first == second
        assert b"\r\n" not in first

    def test_floats_round_trip_exactly(self):
        frame = pd.DataFrame({"x": [1 / 3, 2.0 / 7.0]})
        text = frame_to_csv(frame)
        assert float(text.splitlines()[1]) == 1 / 3

    def test_csv_to_stdout(self, capsys):
        assert write_csv(pd.DataFrame({"a": [1]}), None) is None
        assert capsys.readouterr().out == "a\n1\n"

    def test_creates_parent_directories(self, tmp_path):
        path = write_csv(pd.DataFrame({"a": [1]}), tmp_path / "nested" / "out.csv")
        assert path.exists()


class TestManifest:
    def test_paths(self):
        assert manifest_path("runs/pump.csv").name == "pump.csv.manifest.json"
        assert sibling_path("runs/pump.csv", "traces").name == "pump_traces.csv"

    def test_written_next_to_output(self, tmp_path):
        out = tmp_path / "decay.csv"
        manifest = RunManifest(command="simulate-decay", config_digest="ab" * 32, seed=7, warnings=["w"])
        path = write_manifest(manifest, out)
        assert path == manifest_path(out)
        document = json.loads(path.read_text(encoding="utf-8"))
        assert document["seed"] == 7
        assert document["config_digest"] == "ab" * 32
        assert document["warnings"] == ["w"]
        assert "tool_version" in document

    def test_skipped_without_output(self):
        assert write_manifest(RunManifest(command="fit", config_digest="0"), None) is None
