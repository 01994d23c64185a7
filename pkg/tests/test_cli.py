"""
Tests for the command-line interface

Tests cover:
- Exit code contract
- CSV shape and number formatting
- Output directory handling
- JSON log lines on stderr
"""

import csv
import io
import json
import logging
import math

import pytest

from app.main import fmt, main, parse_event
from app.utils.exceptions import DomainError


@pytest.fixture(autouse=True)
def restore_root_logging():
    """main() installs its own handler on the root logger"""
    root = logging.getLogger()
    handlers, level = list(root.handlers), root.level
    yield
    root.handlers = handlers
    root.setLevel(level)


def _rows(text: str):
    return list(csv.reader(io.StringIO("\n".join(line for line in text.splitlines() if not line.startswith("#")))))


class TestHelpers:

    def test_fmt_twelve_digits(self):
        assert fmt(1 / 3) == "0.333333333333"
        assert fmt(math.inf) == "inf"

    def test_parse_event(self):
        event = parse_event("1:0:0.1:1.0")
        assert (event.load, event.p_before, event.p_after, event.time) == (1, 0.0, 0.1, 1.0)

    def test_parse_event_malformed(self):
        with pytest.raises(DomainError):
            parse_event("1:0:0.1")


class TestCommands:

    def test_check_ok(self, two_bus_file, capsys):
        assert main(["check", str(two_bus_file())]) == 0
        assert capsys.readouterr().out.strip() == "ok"

    def test_check_reports_violations(self, two_bus_file, capsys):
        path = two_bus_file()
        path.write_text(path.read_text().replace("v_tr = 0.66", "v_tr = 0.9"))
        assert main(["check", str(path)]) == 1
        assert "voltage_ordering" in capsys.readouterr().out

    def test_certify_certified(self, two_bus_file, capsys):
        assert main(["certify", str(two_bus_file(capacitance=1.0))]) == 0
        assert "verdict: certified" in capsys.readouterr().out

    def test_certify_fails(self, two_bus_file, capsys):
        assert main(["certify", str(two_bus_file(capacitance=0.1))]) == 1
        assert "verdict: fails" in capsys.readouterr().out

    def test_certify_infeasible_p_max(self, two_bus_file, capsys):
        """Large capacitors do not rescue a P_max above the loadability limit"""
        path = two_bus_file(capacitance=5.0)
        path.write_text(path.read_text().replace("v_min = 0.8", "v_min = 0.95"))
        assert main(["certify", str(path)]) == 1
        assert "verdict: fails" in capsys.readouterr().out

    def test_equilibrium(self, two_bus_file, capsys):
        assert main(["equilibrium", str(two_bus_file()), "--p-vector", "0.1"]) == 0
        rows = _rows(capsys.readouterr().out)
        assert rows[0] == ["quantity", "index", "value"]
        assert float(rows[2][2]) == pytest.approx(0.887298334621, abs=1e-12)

    def test_equilibrium_wrong_vector(self, two_bus_file, capsys):
        assert main(["equilibrium", str(two_bus_file()), "--p-vector", "0.1,0.2"]) == 2
        assert "error" in capsys.readouterr().err

    def test_nose(self, capsys):
        assert main(["nose", "--n", "5"]) == 0
        rows = _rows(capsys.readouterr().out)
        assert rows[0] == ["p", "v_high", "v_low"]
        assert len(rows) == 6
        assert rows[-1] == ["0.25", "0.5", "0.5"]

    def test_design_curves(self, capsys):
        """Transient column becomes unbounded near 0.47 P0"""
        assert main(["design-curves", "--vtr", "0.66", "--n", "50"]) == 0
        rows = _rows(capsys.readouterr().out)[1:]
        assert len(rows) == 50
        finite = [float(r[0]) for r in rows if r[2] != "inf"]
        assert any(r[2] == "inf" for r in rows)
        assert 0.45 < max(finite) < 0.47

    def test_design(self, capsys):
        code = main([
            "design", "--v0", "1", "--r-max", "1", "--tau-max", "1", "--vtr", "0.66",
            "--vmin", "0.8", "--p-max", "0.1", "--loads", "0.1,0.04",
        ])
        assert code == 0
        rows = _rows(capsys.readouterr().out)
        assert rows[0] == ["load", "p_max", "c_vtr", "c_transient", "c_necessary", "recommended"]
        assert float(rows[1][5]) == pytest.approx(2 * 0.307722, rel=1e-4)

    def test_design_uncertifiable(self, capsys):
        code = main([
            "design", "--v0", "1", "--r-max", "1", "--tau-max", "1", "--vtr", "0.66",
            "--vmin", "0.8", "--p-max", "0.13", "--loads", "0.1",
        ])
        assert code == 1

    def test_simulate_step(self, two_bus_file, capsys):
        """Certified two-bus step ends at V_high(0.1)"""
        path = two_bus_file(capacitance=0.62, p_nominal=0.0)
        assert main(["simulate", str(path), "--event", "1:0:0.1:1.0", "--t-end", "60"]) == 0
        rows = _rows(capsys.readouterr().out)
        assert rows[0] == ["time", "v_1", "i_0", "G", "P", "Pdot", "event"]
        assert float(rows[-1][1]) == pytest.approx(0.887298, abs=1e-5)
        assert sum(1 for r in rows[1:] if r[-1]) == 1

    def test_output_directory(self, two_bus_file, tmp_path, monkeypatch):
        from app import main as cli

        monkeypatch.setattr(cli.settings, "output_dir", str(tmp_path / "results"))
        assert main(["nose", "--n", "3", "--out", "nose.csv"]) == 0
        assert (tmp_path / "results" / "nose.csv").read_text().startswith("p,v_high,v_low")

    def test_missing_network(self, tmp_path, capsys):
        assert main(["certify", str(tmp_path / "none.net")]) == 2
        assert "parse_error" in capsys.readouterr().err

    def test_fuzz_certified(self, two_bus_file, capsys):
        assert main(["fuzz", str(two_bus_file(capacitance=1.0)), "--events", "3", "--seed", "4"]) == 0
        assert "# runs=3 violations=0" in capsys.readouterr().out

    def test_deterministic_output(self, capsys):
        main(["design-curves", "--n", "10"])
        first = capsys.readouterr().out
        main(["design-curves", "--n", "10"])
        assert capsys.readouterr().out == first


class TestLogging:

    def test_json_logs_on_stderr(self, capsys):
        """stdout stays pure CSV, stderr carries one JSON object per line"""
        assert main(["--json-logs", "--log-level", "INFO", "design-curves", "--n", "5"]) == 0
        captured = capsys.readouterr()
        assert captured.out.startswith("delta_p_over_p0,")
        records = [json.loads(line) for line in captured.err.splitlines() if line.strip()]
        assert records
        assert all(r["run_id"] for r in records)
        assert any("p_crit" in r["message"] for r in records)
