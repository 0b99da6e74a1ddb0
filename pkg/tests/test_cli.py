import csv
import json
import subprocess
import sys

import pytest

from gark.cli import main


def run_cli(argv):
    return main(argv)


class TestConverge:
    def test_writes_table_and_slopes(self, tmp_path, capsys):
        code = run_cli(["converge", "--problem", "calvo", "--nx", "8",
                        "--ny", "4", "--dt", "0.15", "--levels", "3",
                        "--ref-exponent", "5", "--out", str(tmp_path)])
        assert code == 0
        with open(tmp_path / "convergence.csv") as handle:
            rows = list(csv.DictReader(handle))
        assert len(rows) == 3
        assert float(rows[0]["dt"]) == 0.15
        assert float(rows[1]["forward_rel_l2"]) < float(
            rows[0]["forward_rel_l2"])
        slopes = json.loads((tmp_path / "convergence.json").read_text())
        assert 1.7 <= slopes["forward_slope"] <= 2.3
        assert 1.7 <= slopes["adjoint_slope"] <= 2.3
        assert "slope" in capsys.readouterr().out

    def test_reference_cache_reused(self, tmp_path):
        argv = ["converge", "--problem", "calvo", "--nx", "8", "--ny", "4",
                "--dt", "0.15", "--levels", "2", "--ref-exponent", "4",
                "--out", str(tmp_path)]
        assert run_cli(argv) == 0
        cache = list((tmp_path / "cache").glob("ref-*.npz"))
        assert len(cache) == 1
        stamp = cache[0].stat().st_mtime_ns
        first = (tmp_path / "convergence.csv").read_bytes()
        assert run_cli(argv) == 0
        assert cache[0].stat().st_mtime_ns == stamp
        assert (tmp_path / "convergence.csv").read_bytes() == first


class TestEstimate:
    def test_report_files(self, tmp_path, capsys):
        code = run_cli(["estimate", "--problem", "calvo", "--nx", "8",
                        "--ny", "4", "--dt", "0.15", "--out",
                        str(tmp_path)])
        assert code == 0
        report = json.loads((tmp_path / "report.json").read_text())
        assert report["kind"] == "error_report"
        assert len(report["e_spatial"]) == 2
        with open(tmp_path / "report.csv") as handle:
            rows = list(csv.reader(handle))
        assert rows[0][0] == "goal_num"
        out = capsys.readouterr().out
        assert "accuracy" in out

    def test_rerun_is_byte_identical(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            assert run_cli(["estimate", "--problem", "calvo", "--nx", "8",
                            "--ny", "4", "--dt", "0.15", "--out",
                            str(out)]) == 0
        assert (a / "report.json").read_bytes() \
            == (b / "report.json").read_bytes()
        assert (a / "report.csv").read_bytes() \
            == (b / "report.csv").read_bytes()


class TestRefine:
    def test_campaign_outputs(self, tmp_path, capsys):
        code = run_cli(["refine", "--problem", "calvo", "--nx", "8",
                        "--ny", "4", "--dt", "0.15", "--stages", "2",
                        "--out", str(tmp_path)])
        assert code == 0
        lines = (tmp_path / "campaign.jsonl").read_text().splitlines()
        assert len(lines) == 2
        assert (tmp_path / "grids" / "stage-0.json").exists()
        assert (tmp_path / "grids" / "stage-1.json").exists()
        assert capsys.readouterr().out.count("stage") == 2


class TestOracleCheck:
    def test_all_diagnostics_pass(self, capsys):
        assert run_cli(["oracle-check", "--seed", "3"]) == 0
        out = capsys.readouterr().out
        assert out.count("ok  ") == 5
        assert "FAIL" not in out


class TestPlumbing:
    def test_config_file_overrides_flags(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"dt": 0.075, "levels": 2}))
        out = tmp_path / "out"
        assert run_cli(["converge", "--problem", "calvo", "--nx", "8",
                        "--ny", "4", "--dt", "0.15", "--levels", "3",
                        "--ref-exponent", "4", "--out", str(out),
                        "--config", str(cfg)]) == 0
        with open(out / "convergence.csv") as handle:
            rows = list(csv.DictReader(handle))
        assert len(rows) == 2
        assert float(rows[0]["dt"]) == 0.075

    def test_unknown_config_key_rejected(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"step_size": 0.1}))
        with pytest.raises(SystemExit, match="step_size"):
            run_cli(["estimate", "--config", str(cfg)])

    def test_calvo_rejects_time_override(self, tmp_path):
        with pytest.raises(SystemExit, match="t-final"):
            run_cli(["estimate", "--problem", "calvo", "--nx", "8",
                     "--ny", "4", "--t-final", "2.0", "--out",
                     str(tmp_path)])

    def test_module_entry_point(self):
        proc = subprocess.run([sys.executable, "-m", "gark.cli", "--help"],
                              capture_output=True, text=True)
        assert proc.returncode == 0
        assert "converge" in proc.stdout
