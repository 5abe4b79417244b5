"""Discrete nonlocal force balance, its tangent, and the stability tensor.

All sums run over the intact bonds of a :class:`BondGraph`, one entry per
unordered pair, with one-point quadrature weight ``V_l``. For a bond
``b = (k, l)`` with ``xi = X_l - X_k``, ``d = |xi|``, ``e = xi / d``::

    S   = (u_l - u_k) . e / d
    r   = sqrt(d) S
    f_b = 2 c J(d) / sqrt(d) g'(r) e           c = 1 / (eps^(n+1) omega_n)

    B_k += f_b V_l          B_l -= f_b V_k

The tangent returned by :func:`assemble_tangent` is the exact derivative
``dB/du``; per bond it is built from the kernel

    sigma_b = c J(d) / d g''(r) e (x) e

as ``2 sigma_b`` (the factor 2 comes from differentiating ``f_b``).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .geometry import BondGraph, NodeSet
from .material import MaterialModel, influence


def displacement_of(state) -> np.ndarray:
    """Accept a ``SolveState``-like object or a raw ``(n_nodes, 2)`` array."""
    u = getattr(state, "displacement", state)
    u = np.asarray(u, dtype=float)
    if not np.all(np.isfinite(u)):
        raise FloatingPointError("displacement contains non-finite values")
    return u


@dataclass(frozen=True)
class BondGeometry:
    """Reference-configuration quantities for every bond in a graph."""

    k: np.ndarray
    l: np.ndarray
    length: np.ndarray
    sqrt_length: np.ndarray
    direction: np.ndarray
    weight: np.ndarray  # J(d)

    @classmethod
    def build(cls, nodes: NodeSet, graph: BondGraph, model: MaterialModel) -> "BondGeometry":
        k = graph.pairs[:, 0]
        l = graph.pairs[:, 1]
        xi = nodes.positions[l] - nodes.positions[k]
        d = np.linalg.norm(xi, axis=1)
        if np.any(d <= 0):
            raise ValueError("graph contains a zero-length bond")
        w = influence(np.clip(d / model.horizon, 0.0, 1.0), model.influence_kind)
        return cls(k, l, d, np.sqrt(d), xi / d[:, None] if len(d) else xi, np.asarray(w, dtype=float))


_GEOMETRY_CACHE_ATTR = "_bond_geometry_cache"


def bond_geometry(nodes: NodeSet, graph: BondGraph, model: MaterialModel) -> BondGeometry:
    cache = getattr(graph, _GEOMETRY_CACHE_ATTR, None)
    key = (model.horizon, model.influence_kind)
    if cache is None or cache[0] is not nodes or cache[1] is not graph.pairs or cache[2] != key:
        cache = (nodes, graph.pairs, key, BondGeometry.build(nodes, graph, model))
        setattr(graph, _GEOMETRY_CACHE_ATTR, cache)
    return cache[3]


def bond_strains(u: np.ndarray, geom: BondGeometry) -> np.ndarray:
    du = u[geom.l] - u[geom.k]
    return np.einsum("ij,ij->i", du, geom.direction) / geom.length


def scaled_strains(u, nodes: NodeSet, graph: BondGraph, model: MaterialModel) -> np.ndarray:
    """``sqrt(d) S`` for every bond in ``graph.pairs`` (intact or not)."""
    geom = bond_geometry(nodes, graph, model)
    return geom.sqrt_length * bond_strains(displacement_of(u), geom)


def interior_dofs(nodes: NodeSet) -> np.ndarray:
    idx = np.flatnonzero(nodes.interior)
    return np.column_stack([2 * idx, 2 * idx + 1]).ravel()


def assemble_residual(state, graph: BondGraph, nodes: NodeSet, model: MaterialModel, *, full: bool = False) -> np.ndarray:
    """Force density ``B`` as a flat vector ``[B_x^k, B_y^k, ...]``.

    Only INTERIOR rows are returned unless ``full`` is set, in which case
    every node's row is returned (collar rows included).
    """
    u = displacement_of(state)
    geom = bond_geometry(nodes, graph, model)
    m = graph.intact
    r = geom.sqrt_length[m] * bond_strains(u, geom)[m]
    mag = 2.0 * model.normalization * geom.weight[m] / geom.sqrt_length[m] * model.g_prime(r)
    f = mag[:, None] * geom.direction[m]
    V = nodes.volumes
    k, l = geom.k[m], geom.l[m]
    n = len(nodes)
    B = np.zeros((n, 2))
    for c in range(2):
        B[:, c] = np.bincount(k, f[:, c] * V[l], minlength=n) - np.bincount(l, f[:, c] * V[k], minlength=n)
    B = B.ravel()
    return B if full else B[interior_dofs(nodes)]


def _bond_blocks(u, graph, nodes, model):
    geom = bond_geometry(nodes, graph, model)
    m = graph.intact
    r = geom.sqrt_length[m] * bond_strains(u, geom)[m]
    coef = model.normalization * geom.weight[m] / geom.length[m] * model.g_2prime(r)
    e = geom.direction[m]
    blocks = coef[:, None, None] * e[:, :, None] * e[:, None, :]  # sigma_b
    return geom.k[m], geom.l[m], blocks


def assemble_tangent(state, graph: BondGraph, nodes: NodeSet, model: MaterialModel, *, eliminate: bool = True) -> sp.csr_matrix:
    """Exact Jacobian ``dB/du`` as a CSR matrix.

    With ``eliminate`` (default) only INTERIOR rows and columns are kept: the
    collar displacements are prescribed, so their columns carry no unknowns.
    """
    u = displacement_of(state)
    k, l, sig = _bond_blocks(u, graph, nodes, model)
    V = nodes.volumes
    n = len(nodes)
    M_kl = 2.0 * sig * V[l][:, None, None]
    M_lk = 2.0 * sig * V[k][:, None, None]
    rows, cols, vals = [], [], []
    ii, jj = np.meshgrid(np.arange(2), np.arange(2), indexing="ij")
    ii, jj = ii.ravel(), jj.ravel()
    for rn, cn, blk in ((k, l, M_kl), (k, k, -M_kl), (l, k, M_lk), (l, l, -M_lk)):
        rows.append((2 * rn[:, None] + ii[None, :]).ravel())
        cols.append((2 * cn[:, None] + jj[None, :]).ravel())
        vals.append(blk.reshape(len(rn), 4).ravel())
    rows = np.concatenate(rows) if rows else np.empty(0, dtype=np.int64)
    cols = np.concatenate(cols) if cols else np.empty(0, dtype=np.int64)
    vals = np.concatenate(vals) if vals else np.empty(0)
    if eliminate:
        dof_map = np.full(2 * n, -1, dtype=np.int64)
        dofs = interior_dofs(nodes)
        dof_map[dofs] = np.arange(len(dofs))
        rows, cols = dof_map[rows], dof_map[cols]
        keep = (rows >= 0) & (cols >= 0)
        size = len(dofs)
        K = sp.coo_matrix((vals[keep], (rows[keep], cols[keep])), shape=(size, size))
    else:
        K = sp.coo_matrix((vals, (rows, cols)), shape=(2 * n, 2 * n))
    K = K.tocsr()
    K.sum_duplicates()
    return K


@dataclass(frozen=True)
class StabilityTensorField:
    """Per-node 2x2 stability tensors and their eigenvalues (ascending)."""

    tensors: np.ndarray
    eigenvalues: np.ndarray

    @property
    def min_abs_eigenvalue(self) -> np.ndarray:
        return np.min(np.abs(self.eigenvalues), axis=1)


def symmetric_eigenvalues_2x2(A: np.ndarray) -> np.ndarray:
    a, b, d = A[:, 0, 0], 0.5 * (A[:, 0, 1] + A[:, 1, 0]), A[:, 1, 1]
    mean = 0.5 * (a + d)
    rad = np.hypot(0.5 * (a - d), b)
    return np.column_stack([mean - rad, mean + rad])


def stability_field(state, graph: BondGraph, nodes: NodeSet, model: MaterialModel) -> StabilityTensorField:
    """``A(X_k) = sum_l c J / d g''(sqrt(d) S) e (x) e V_l`` over intact bonds, for every node."""
    u = displacement_of(state)
    k, l, sig = _bond_blocks(u, graph, nodes, model)
    V = nodes.volumes
    n = len(nodes)
    A = np.zeros((n, 2, 2))
    for i in range(2):
        for j in range(2):
            A[:, i, j] = np.bincount(k, sig[:, i, j] * V[l], minlength=n) + np.bincount(l, sig[:, i, j] * V[k], minlength=n)
    A = 0.5 * (A + A.transpose(0, 2, 1))
    return StabilityTensorField(A, symmetric_eigenvalues_2x2(A))
