"""Damage, intact-material energy and crack-path measurements."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .geometry import BondGraph, NodeSet
from .material import MaterialModel
from .operator import bond_geometry, bond_strains, displacement_of


def damage(graph: BondGraph) -> np.ndarray:
    """``d = 1 - intact / reference`` bond counts per node; 0 for nodes without bonds."""
    ref = graph.reference_counts
    intact = graph.intact_counts()
    d = np.zeros(graph.n_nodes)
    has = ref > 0
    d[has] = 1.0 - intact[has] / ref[has]
    return d


@dataclass(frozen=True)
class EnergySample:
    load_step: int
    energy: float  # N mm per mm thickness
    intact_nodes: int


def energy_density(state, graph: BondGraph, nodes: NodeSet, model: MaterialModel) -> np.ndarray:
    """``W_k = sum_l |xi| * c J / |xi| * g(sqrt|xi| S) V_l`` over intact bonds, per node."""
    u = displacement_of(state)
    geom = bond_geometry(nodes, graph, model)
    m = graph.intact
    r = geom.sqrt_length[m] * bond_strains(u, geom)[m]
    # |xi| cancels against the 1/|xi| of the pair potential
    w = model.normalization * geom.weight[m] * model.g(r)
    V = nodes.volumes
    k, l = geom.k[m], geom.l[m]
    n = len(nodes)
    return np.bincount(k, w * V[l], minlength=n) + np.bincount(l, w * V[k], minlength=n)


def intact_energy(state, graph: BondGraph, nodes: NodeSet, model: MaterialModel, load_step: int = 0) -> EnergySample:
    """Stored energy over INTERIOR nodes with zero damage."""
    intact = nodes.interior & (damage(graph) == 0.0)
    W = energy_density(state, graph, nodes, model)
    E = float(np.sum(W[intact] * nodes.volumes[intact]))
    return EnergySample(load_step, E, int(np.count_nonzero(intact)))


@dataclass(frozen=True)
class CrackTip:
    position: np.ndarray
    deviation: float


def crack_tip(
    dmg: np.ndarray,
    nodes: NodeSet,
    threshold: float = 0.3,
    *,
    line_y: float,
    band: float,
    direction: int = +1,
) -> CrackTip | None:
    """Furthest damaged node along x inside ``|y - line_y| <= band``.

    ``direction=+1`` picks the rightmost node, ``-1`` the leftmost. The
    deviation is ``max |y - line_y|`` over every node with ``d >= threshold``.
    Returns ``None`` when no node reaches the threshold.
    """
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must lie in (0, 1)")
    hot = dmg >= threshold
    if not hot.any():
        return None
    X = nodes.positions
    dev = float(np.max(np.abs(X[hot, 1] - line_y)))
    in_band = hot & (np.abs(X[:, 1] - line_y) <= band)
    if not in_band.any():
        return None
    cand = np.flatnonzero(in_band)
    i = cand[np.argmax(direction * X[cand, 0])]
    return CrackTip(X[i].copy(), dev)


def damage_components(dmg: np.ndarray, nodes: NodeSet, threshold: float, radius: float) -> tuple[int, np.ndarray]:
    """Connected components of ``{d >= threshold}`` with links between nodes closer than ``radius``.

    Returns ``(count, labels)``; nodes below the threshold get label -1.
    """
    hot = np.flatnonzero(dmg >= threshold)
    labels = np.full(len(dmg), -1, dtype=np.int64)
    if len(hot) == 0:
        return 0, labels
    pairs = cKDTree(nodes.positions[hot]).query_pairs(radius, output_type="ndarray")
    adj = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(len(hot), len(hot)))
    count, lab = connected_components(adj, directed=False)
    labels[hot] = lab
    return int(count), labels
