import os

import pytest

from quasifrac.cli import EXIT_CONFIG, EXIT_OK, EXIT_SOLVER, main
from quasifrac.config import bundled_scenarios
from quasifrac.export import read_energy_csv


class TestValidate:
    def test_ok(self, small_scenario, capsys):
        assert main(["validate", str(small_scenario)]) == EXIT_OK
        assert "small_crack" in capsys.readouterr().out

    def test_bad_key(self, tmp_path, small_scenario, capsys):
        bad = tmp_path / "bad.cfg"
        bad.write_text(small_scenario.read_text().replace("E_GPa", "E_mm"))
        assert main(["validate", str(bad)]) == EXIT_CONFIG
        assert "material.E_mm" in capsys.readouterr().err

    def test_bundled_name(self, capsys):
        assert main(["validate", "straight_crack_desk"]) == EXIT_OK
        assert "straight_crack_desk.cfg: ok" in capsys.readouterr().out

    @pytest.mark.parametrize("name", bundled_scenarios())
    def test_every_bundled_scenario(self, name):
        assert main(["validate", name]) == EXIT_OK

    def test_missing_file(self, tmp_path):
        assert main(["validate", str(tmp_path / "none.cfg")]) == EXIT_CONFIG

    def test_usage_error(self):
        assert main(["frobnicate"]) == EXIT_CONFIG
        assert main([]) == EXIT_CONFIG


class TestRun:
    def test_writes_results(self, small_scenario, tmp_path, capsys):
        out = tmp_path / "res"
        assert main(["run", str(small_scenario), "--out", str(out), "--steps", "4", "--every", "2"]) == EXIT_OK
        data = read_energy_csv(out / "energy.csv")
        assert data["N"].tolist() == [1, 2, 3, 4]
        assert sorted(p.name for p in out.glob("nodes_*.csv")) == ["nodes_00002.csv", "nodes_00004.csv"]
        assert len(list(out.glob("*.vtk"))) == 2
        assert "completed" in capsys.readouterr().out

    def test_desk_straight_crack_five_steps(self, tmp_path):
        assert main(["run", "straight_crack_desk", "--out", str(tmp_path), "--steps", "5"]) == EXIT_OK
        assert read_energy_csv(tmp_path / "energy.csv")["N"].tolist() == [1, 2, 3, 4, 5]

    def test_rerun_replaces_energy(self, small_scenario, tmp_path):
        out = tmp_path / "res"
        for _ in range(2):
            assert main(["run", str(small_scenario), "--out", str(out), "--steps", "2"]) == EXIT_OK
        assert read_energy_csv(out / "energy.csv")["N"].tolist() == [1, 2]

    def test_default_output_directory(self, small_scenario, tmp_path, monkeypatch):
        monkeypatch.chdir(tmp_path)
        assert main(["run", str(small_scenario), "--steps", "1"]) == EXIT_OK
        assert (tmp_path / "out" / "energy.csv").exists()

    @pytest.mark.skipif(os.geteuid() == 0, reason="root ignores directory permissions")
    def test_unwritable_output(self, small_scenario, tmp_path):
        locked = tmp_path / "locked"
        locked.mkdir()
        locked.chmod(0o500)
        try:
            assert main(["run", str(small_scenario), "--out", str(locked / "x"), "--steps", "1"]) == EXIT_CONFIG
        finally:
            locked.chmod(0o700)

    def test_output_path_is_a_file(self, small_scenario, tmp_path, capsys):
        blocker = tmp_path / "file"
        blocker.write_text("")
        assert main(["run", str(small_scenario), "--out", str(blocker), "--steps", "1"]) == EXIT_CONFIG
        assert "not writable" in capsys.readouterr().err

    @pytest.mark.parametrize("flag", ["--steps", "--every"])
    def test_nonpositive_counts(self, small_scenario, tmp_path, flag):
        assert main(["run", str(small_scenario), "--out", str(tmp_path), flag, "0"]) == EXIT_CONFIG

    def test_solver_failure_exit_code(self, small_scenario, tmp_path):
        text = small_scenario.read_text() + "\n[newton]\nmax_iter = 1\nmax_substeps = 1\ntol = 1e-14\n"
        cfg = tmp_path / "strict.cfg"
        cfg.write_text(text)
        assert main(["run", str(cfg), "--out", str(tmp_path / "o"), "--steps", "1"]) == EXIT_SOLVER

    def test_thread_limit(self, small_scenario, tmp_path, monkeypatch):
        monkeypatch.setenv("QUASIFRAC_THREADS", "1")
        assert main(["run", str(small_scenario), "--out", str(tmp_path), "--steps", "1"]) == EXIT_OK
        monkeypatch.setenv("QUASIFRAC_THREADS", "many")
        assert main(["run", str(small_scenario), "--out", str(tmp_path), "--steps", "1"]) == EXIT_CONFIG


class TestOracle:
    def test_passes_on_small_scenario(self, small_scenario, tmp_path, capsys):
        assert main(["oracle", str(small_scenario), "--out", str(tmp_path), "--coarsen", "1"]) == EXIT_OK
        text = capsys.readouterr().out
        assert "FAIL" not in text and text.count("PASS") == 5
        rows = (tmp_path / "oracle.csv").read_text().splitlines()
        assert rows[0] == "check,max_rel_error,tolerance,passed" and len(rows) == 6

    def test_size_cap(self, small_scenario, tmp_path):
        assert main(["oracle", str(small_scenario), "--out", str(tmp_path), "--coarsen", "0.5"]) == EXIT_CONFIG

    def test_bad_coarsen(self, small_scenario, tmp_path):
        assert main(["oracle", str(small_scenario), "--out", str(tmp_path), "--coarsen", "-1"]) == EXIT_CONFIG
