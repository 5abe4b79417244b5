import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from quasifrac.geometry import NodeSet, Rectangle, build_regular_grid
from quasifrac.operator import assemble_residual
from quasifrac.oracle import intact_matrix, random_state
from quasifrac.postprocess import crack_tip, damage, damage_components, energy_density, intact_energy
from conftest import small_plate


class TestDamage:
    def test_pristine_is_zero(self, plate):
        _, graph, _ = plate
        assert np.all(damage(graph) == 0.0)

    def test_fully_broken_is_one(self, plate):
        _, graph, _ = plate
        g = graph.copy()
        g.intact[:] = False
        assert np.all(damage(g) == 1.0)

    @settings(max_examples=30, deadline=None)
    @given(st.floats(0.0, 1.0), st.integers(0, 2**31 - 1))
    def test_bounded(self, frac, seed):
        _, graph, _ = small_plate()
        g = graph.copy()
        g.intact &= np.random.default_rng(seed).random(len(g)) >= frac
        d = damage(g)
        assert np.all((d >= 0.0) & (d <= 1.0))

    def test_counts_each_end(self):
        from quasifrac.geometry import BondGraph

        g = BondGraph(np.array([[0, 1], [0, 2], [1, 2]]), np.array([False, True, True]), 1.0, 4)
        assert damage(g).tolist() == [0.5, 0.5, 0.0, 0.0]


class TestEnergy:
    def test_zero_at_rest(self, plate):
        nodes, graph, model = plate
        assert intact_energy(np.zeros((len(nodes), 2)), graph, nodes, model).energy == 0.0

    def test_derivative_is_minus_residual(self, plate):
        nodes, graph, model = plate
        u = random_state(nodes, model, 0.4, 2)
        w = np.random.default_rng(0).standard_normal(u.shape)
        w[~nodes.interior] = 0.0
        V = nodes.volumes

        def total(v):
            return float(np.sum(energy_density(v, graph, nodes, model) * V))

        h = 1e-7 * np.abs(u).max()
        fd = (total(u + h * w) - total(u - h * w)) / (2 * h)
        B = assemble_residual(u, graph, nodes, model, full=True).reshape(-1, 2)
        # B is the force density, so dE/du . w = -sum_k B_k . w_k V_k (each bond is counted from both ends)
        assert fd == pytest.approx(-np.sum(B * w * V[:, None]), rel=1e-6)

    @pytest.mark.parametrize("seed", range(3))
    def test_matches_dense_double_loop(self, plate, seed):
        nodes, graph, model = plate
        g = graph.copy()
        g.intact &= np.random.default_rng(seed).random(len(g)) > 0.05
        u = random_state(nodes, model, 0.6, seed)
        X, V = nodes.positions, nodes.volumes
        M = intact_matrix(g)
        keep = nodes.interior & (damage(g) == 0.0)
        assert keep.any()
        E = 0.0
        for k in np.flatnonzero(keep):
            for l in np.flatnonzero(M[k]):
                xi = X[l] - X[k]
                dist = np.linalg.norm(xi)
                S = (u[l] - u[k]) @ xi / dist**2
                W = model.normalization * model.J(dist) * model.g(np.sqrt(dist) * S) * V[l]
                E += W * V[k]
        fast = intact_energy(u, g, nodes, model)
        assert fast.energy == pytest.approx(E, rel=1e-12)
        assert fast.intact_nodes == np.count_nonzero(keep)

    def test_two_nodes_by_hand(self):
        from quasifrac.geometry import build_bond_graph
        from quasifrac.material import calibrate

        nodes = NodeSet(np.array([[0.0, 0.0], [1.0, 0.0]]), np.ones(2))
        model = calibrate(E=210.0, Gc=2700.0, horizon=2.0)
        graph = build_bond_graph(nodes, 2.0)
        u = np.array([[0.0, 0.0], [0.1 * model.r_c, 0.0]])
        # each node sees the bond once: 2 * g(r) / (eps^3 pi) with |xi| = 1, J = 1
        expected = 2.0 * model.g(0.1 * model.r_c) / (8.0 * np.pi)
        assert intact_energy(u, graph, nodes, model).energy == pytest.approx(expected, rel=1e-14)

    @settings(max_examples=20, deadline=None)
    @given(st.floats(-50.0, 50.0), st.floats(-50.0, 50.0))
    def test_rigid_translation_invariant(self, cx, cy):
        nodes, graph, model = small_plate()
        u = random_state(nodes, model, 0.4, 0)
        a = intact_energy(u, graph, nodes, model).energy
        b = intact_energy(u + np.array([cx, cy]), graph, nodes, model).energy
        assert b == pytest.approx(a, rel=1e-9)

    def test_damaged_and_collar_nodes_excluded(self, plate):
        nodes, graph, model = plate
        u = random_state(nodes, model, 0.3, 1)
        full = intact_energy(u, graph, nodes, model)
        assert full.intact_nodes == np.count_nonzero(nodes.interior)
        g = graph.copy()
        k = int(np.flatnonzero(nodes.interior)[0])
        g.intact[np.flatnonzero((g.pairs[:, 0] == k) | (g.pairs[:, 1] == k))[0]] = False
        part = intact_energy(u, g, nodes, model, load_step=4)
        assert part.intact_nodes < full.intact_nodes and part.load_step == 4


class TestCrackTip:
    @pytest.fixture
    def strip(self):
        nodes = build_regular_grid(Rectangle(10.0, 10.0), 1.0)
        X = nodes.positions
        d = np.where((np.abs(X[:, 1] - 5.5) < 0.1) & (X[:, 0] < 6), 0.6, 0.0)
        return nodes, d

    def test_rightmost_in_band(self, strip):
        nodes, d = strip
        tip = crack_tip(d, nodes, line_y=5.0, band=1.0)
        assert tip.position.tolist() == [5.5, 5.5]
        assert tip.deviation == pytest.approx(0.5)

    def test_leftward_direction(self, strip):
        nodes, d = strip
        assert crack_tip(d, nodes, line_y=5.0, band=1.0, direction=-1).position[0] == 0.5

    def test_none_without_damage(self, strip):
        nodes, d = strip
        assert crack_tip(np.zeros_like(d), nodes, line_y=5.0, band=1.0) is None
        assert crack_tip(d, nodes, line_y=0.0, band=1.0) is None

    @pytest.mark.parametrize("threshold", [0.0, 1.0, -0.5])
    def test_threshold_range(self, strip, threshold):
        nodes, d = strip
        with pytest.raises(ValueError):
            crack_tip(d, nodes, threshold, line_y=5.0, band=1.0)


class TestComponents:
    def test_two_separate_strips(self):
        nodes = build_regular_grid(Rectangle(20.0, 20.0), 1.0)
        X = nodes.positions
        d = np.zeros(len(nodes))
        d[(X[:, 1] == 5.5) & (X[:, 0] < 8)] = 0.5
        d[(X[:, 1] == 14.5) & (X[:, 0] > 12)] = 0.5
        count, labels = damage_components(d, nodes, 0.3, 1.5)
        assert count == 2
        assert np.all(labels[d < 0.3] == -1)

    def test_radius_bridges_gaps(self):
        nodes = NodeSet(np.array([[0.0, 0.0], [1.0, 0.0], [2.5, 0.0]]), np.ones(3))
        d = np.ones(3)
        assert damage_components(d, nodes, 0.3, 1.1)[0] == 2
        assert damage_components(d, nodes, 0.3, 1.6)[0] == 1

    def test_empty(self, plate):
        nodes, _, _ = plate
        count, labels = damage_components(np.zeros(len(nodes)), nodes, 0.3, 1.5)
        assert count == 0 and np.all(labels == -1)
