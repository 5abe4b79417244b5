import numpy as np
import pytest

from quasifrac.config import parse_scenario
from quasifrac.export import (
    ENERGY_FIELDS,
    NODE_FIELDS,
    export_fields,
    read_energy_csv,
    read_node_csv,
    write_snapshot,
    write_vtk,
)
from quasifrac.solver import run_evolution
from conftest import SMALL_SCENARIO


@pytest.fixture(scope="module")
def record():
    cfg = parse_scenario(SMALL_SCENARIO)
    p = cfg.build()
    return run_evolution(p.nodes, p.graph, p.model, cfg.schedule, cfg.newton, steps=6)


class TestExport:
    def test_node_csv_round_trip(self, record, tmp_path):
        files = export_fields(record, 6, tmp_path)
        cols = read_node_csv(files.nodes)
        entry = record.steps[5]
        assert np.array_equal(cols["x"], record.nodes.positions[:, 0])
        assert np.array_equal(cols["ux"], entry.displacement[:, 0])
        assert np.array_equal(cols["uy"], entry.displacement[:, 1])
        assert np.array_equal(cols["damage"], record.damage_at(5))
        assert files.nodes.name == "nodes_00006.csv"

    def test_bond_csv(self, record, tmp_path):
        files = export_fields(record, 6, tmp_path)
        lines = files.bonds.read_text().splitlines()
        assert lines[0] == "k,l,intact"
        assert len(lines) - 1 == len(record.pairs)
        broken = sum(line.endswith(",0") for line in lines[1:])
        assert broken == record.steps[5].broken_total

    def test_energy_rows_append(self, record, tmp_path):
        for N in range(1, 7):
            export_fields(record, N, tmp_path, fields=False)
        data = read_energy_csv(tmp_path / "energy.csv")
        assert (tmp_path / "energy.csv").read_text().splitlines()[0] == ",".join(ENERGY_FIELDS)
        assert data["N"].tolist() == [1, 2, 3, 4, 5, 6]
        assert np.array_equal(data["E_N"], record.energies)
        assert data["intact_nodes"].tolist() == [e.intact_nodes for e in record.steps]
        assert data["broken_total"].tolist() == [e.broken_total for e in record.steps]
        assert data["newton_iters"].tolist() == [e.newton_iters for e in record.steps]
        assert not list(tmp_path.glob("nodes_*"))

    def test_vtk_layout(self, record, tmp_path):
        files = export_fields(record, 2, tmp_path)
        text = files.vtk.read_text().splitlines()
        n = len(record.nodes)
        assert text[0].startswith("# vtk DataFile")
        assert f"POINTS {n} double" in text
        assert f"CELLS {n} {2 * n}" in text
        assert "VECTORS displacement double" in text and "SCALARS damage double 1" in text

    def test_step_out_of_range(self, record, tmp_path):
        with pytest.raises(IndexError):
            export_fields(record, 0, tmp_path)
        with pytest.raises(IndexError):
            export_fields(record, 7, tmp_path)

    def test_snapshot_prefix(self, record, tmp_path):
        paths = write_snapshot(record, record.steps[0], tmp_path, prefix="terminal_")
        assert [p.name for p in paths] == ["terminal_nodes_00001.csv", "terminal_bonds_00001.csv",
                                           "terminal_fields_00001.vtk"]

    def test_needs_snapshots(self, tmp_path):
        cfg = parse_scenario(SMALL_SCENARIO)
        p = cfg.build()
        rec = run_evolution(p.nodes, p.graph, p.model, cfg.schedule, cfg.newton, steps=1, keep_snapshots=False)
        with pytest.raises(ValueError):
            export_fields(rec, 1, tmp_path)

    def test_bad_headers(self, tmp_path):
        (tmp_path / "a.csv").write_text("x,y\n1,2\n")
        with pytest.raises(ValueError):
            read_node_csv(tmp_path / "a.csv")
        with pytest.raises(ValueError):
            read_energy_csv(tmp_path / "a.csv")

    def test_write_vtk_standalone(self, tmp_path):
        X = np.array([[0.0, 0.0], [1.0, 0.5]])
        write_vtk(tmp_path / "f.vtk", X, np.zeros_like(X), np.array([0.0, 1.0]), title="two\npoints")
        lines = (tmp_path / "f.vtk").read_text().splitlines()
        assert lines[1] == "two points"
        assert lines[-1] == "1"
        assert NODE_FIELDS[0] == "x"
