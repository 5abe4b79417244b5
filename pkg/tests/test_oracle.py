import numpy as np
import pytest

from quasifrac.geometry import NodeSet, Rectangle, build_regular_grid
from quasifrac.oracle import (
    MAX_ORACLE_NODES,
    OracleReport,
    OracleSizeError,
    all_pairs_bonds,
    dense_residual,
    fd_tangent_check,
    format_reports,
    intact_matrix,
    random_state,
    reports_to_csv,
    run_oracle_suite,
)
from conftest import small_plate


class TestSuite:
    @pytest.mark.parametrize("seed", [0, 5])
    def test_passes_on_pristine_plate(self, plate, seed):
        reports = run_oracle_suite(*plate, seed=seed)
        assert len(reports) == 5
        assert all(r.passed for r in reports), format_reports(reports)

    def test_passes_with_broken_bonds(self, plate):
        nodes, graph, model = plate
        g = graph.copy()
        g.intact[::5] = False
        assert all(r.passed for r in run_oracle_suite(nodes, g, model))

    def test_detects_a_wrong_tangent(self, plate, monkeypatch):
        import quasifrac.operator as op

        real = op.assemble_tangent
        monkeypatch.setattr(op, "assemble_tangent", lambda *a, **k: 1.01 * real(*a, **k))
        nodes, graph, model = plate
        report = fd_tangent_check(np.zeros((len(nodes), 2)), graph, nodes, model, 3)
        assert not report.passed

    def test_bad_arguments(self, plate):
        nodes, graph, model = plate
        u = np.zeros((len(nodes), 2))
        with pytest.raises(ValueError):
            fd_tangent_check(u, graph, nodes, model, 0)
        with pytest.raises(ValueError):
            fd_tangent_check(u, graph, nodes, model, 1, delta=-1.0)


class TestDense:
    def test_size_cap(self):
        n = MAX_ORACLE_NODES + 1
        nodes = NodeSet(np.column_stack([np.arange(n, dtype=float), np.zeros(n)]), np.ones(n))
        with pytest.raises(OracleSizeError):
            all_pairs_bonds(nodes, 1.5)

    def test_neighbors_symmetric_and_strict(self):
        nodes = build_regular_grid(Rectangle(4.0, 4.0), 1.0)
        pairs = all_pairs_bonds(nodes, 1.0)
        # a horizon equal to the spacing includes the four axis neighbors
        assert all(k < l for k, l in pairs)
        deg = np.bincount(np.array(list(pairs)).ravel(), minlength=len(nodes))
        assert deg.max() == 4 and deg.min() == 2

    def test_intact_matrix(self, plate):
        _, graph, _ = plate
        M = intact_matrix(graph)
        assert np.array_equal(M, M.T) and M.sum() == 2 * np.count_nonzero(graph.intact)

    def test_dense_residual_zero_at_rest(self, plate):
        nodes, graph, model = plate
        assert np.all(dense_residual(np.zeros((len(nodes), 2)), nodes, intact_matrix(graph), model) == 0.0)

    def test_random_state_scale(self):
        nodes, _, model = small_plate()
        u = random_state(nodes, model, 0.5, 3)
        assert np.array_equal(u, random_state(nodes, model, 0.5, 3))
        assert np.std(u) == pytest.approx(0.5 * model.r_c, rel=0.2)


class TestReports:
    def test_csv_and_table(self):
        reports = [OracleReport("a", 1e-13, 1e-12), OracleReport("b", 2.0, 0.0)]
        rows = [r.split(",") for r in reports_to_csv(reports).splitlines()]
        assert rows[0] == ["check", "max_rel_error", "tolerance", "passed"]
        assert [float(x) for x in rows[1][1:3]] == [1e-13, 1e-12] and rows[1][3] == "1"
        assert rows[2] == ["b", "2", "0", "0"]
        table = format_reports(reports)
        assert table.splitlines()[1].endswith("PASS") and table.splitlines()[2].endswith("FAIL")
