"""Brute-force reference implementations for cross-checking the fast paths.

Nothing here calls into :mod:`quasifrac.operator` or the bond-graph search:
the potential, the influence function and the force sum are transcribed
again from their formulas and evaluated by plain double loops over all node
pairs. The fast code is used only as the thing being checked.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

from .geometry import BondGraph, NodeSet
from .material import MaterialModel

#: Quadratic-cost routines refuse larger inputs.
MAX_ORACLE_NODES = 1000


class OracleSizeError(ValueError):
    pass


@dataclass(frozen=True)
class OracleReport:
    name: str
    max_rel_error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return bool(self.max_rel_error <= self.tolerance)


def _check_size(n: int):
    if n > MAX_ORACLE_NODES:
        raise OracleSizeError(f"{n} nodes exceeds the oracle cap of {MAX_ORACLE_NODES}")


def _J(s: float, kind: str) -> float:
    return 1.0 if kind == "constant" else 1.0 - s


def _dg(r: float, g_inf: float, beta: float) -> float:
    # d/dr [g_inf (1 - exp(-beta r^2))]
    return g_inf * 2.0 * beta * r * math.exp(-beta * r * r)


def intact_matrix(graph: BondGraph) -> np.ndarray:
    """Dense ``(n, n)`` symmetric flags: True where a bond exists and is intact."""
    n = graph.n_nodes
    M = np.zeros((n, n), dtype=bool)
    p = graph.pairs[graph.intact]
    M[p[:, 0], p[:, 1]] = True
    M[p[:, 1], p[:, 0]] = True
    return M


def dense_residual(state, nodes: NodeSet, intact: np.ndarray, model: MaterialModel) -> np.ndarray:
    """Force density at every node by a double loop over all ordered pairs.

    ``B_k = sum_{l != k} 2 / (eps^3 pi) J(|xi|/eps) / sqrt|xi| g'(sqrt|xi| S) e V_l``
    summed over pairs with ``|xi| <= eps`` and ``intact[k, l]``.

    Returns an ``(n, 2)`` array. Raises :class:`OracleSizeError` above
    :data:`MAX_ORACLE_NODES` nodes.
    """
    u = np.asarray(getattr(state, "displacement", state), dtype=float)
    X = nodes.positions
    n = len(X)
    _check_size(n)
    eps = float(model.horizon)
    if model.dimension != 2:
        raise ValueError("the dense oracle is two-dimensional")
    scale = 1.0 / (eps ** 3 * math.pi)
    kind = model.influence_kind.value
    g_inf, beta = float(model.g_inf), float(model.beta)
    reach = eps * (1.0 + 1e-12)
    V = [float(v) for v in nodes.volumes]
    xs = [(float(a), float(b)) for a, b in X]
    us = [(float(a), float(b)) for a, b in u]
    out = np.zeros((n, 2))
    for k in range(n):
        xk, yk = xs[k]
        uxk, uyk = us[k]
        bx = by = 0.0
        for l in range(n):
            if l == k or not intact[k, l]:
                continue
            dx, dy = xs[l][0] - xk, xs[l][1] - yk
            dist = math.hypot(dx, dy)
            if dist > reach:
                continue
            ex, ey = dx / dist, dy / dist
            S = ((us[l][0] - uxk) * ex + (us[l][1] - uyk) * ey) / dist
            root = math.sqrt(dist)
            mag = 2.0 * scale * _J(min(dist / eps, 1.0), kind) / root * _dg(root * S, g_inf, beta) * V[l]
            bx += mag * ex
            by += mag * ey
        out[k] = bx, by
    return out


def all_pairs_bonds(nodes: NodeSet, eps: float) -> set[tuple[int, int]]:
    """Every pair ``k < l`` with ``|X_l - X_k| <= eps``, by exhaustive comparison."""
    X = nodes.positions
    n = len(X)
    _check_size(n)
    reach = eps * (1.0 + 1e-12)
    out = set()
    for k in range(n):
        for l in range(k + 1, n):
            if math.hypot(X[l, 0] - X[k, 0], X[l, 1] - X[k, 1]) <= reach:
                out.add((k, l))
    return out


def brute_force_break_scan(state, nodes: NodeSet, intact: np.ndarray, model: MaterialModel) -> set[tuple[int, int]]:
    """Intact pairs whose ``sqrt|xi| S`` lies outside ``(-r_c, r_c)``, ``r_c = 1/sqrt(2 beta)``."""
    u = np.asarray(getattr(state, "displacement", state), dtype=float)
    X = nodes.positions
    n = len(X)
    _check_size(n)
    rc = 1.0 / math.sqrt(2.0 * model.beta)
    out = set()
    for k in range(n):
        for l in range(k + 1, n):
            if not intact[k, l]:
                continue
            dx, dy = X[l, 0] - X[k, 0], X[l, 1] - X[k, 1]
            dist = math.hypot(dx, dy)
            S = ((u[l, 0] - u[k, 0]) * dx + (u[l, 1] - u[k, 1]) * dy) / (dist * dist)
            r = math.sqrt(dist) * S
            if r > rc or r < -rc:
                out.add((k, l))
    return out


def fd_tangent_check(
    state,
    graph: BondGraph,
    nodes: NodeSet,
    model: MaterialModel,
    directions: int = 20,
    delta: float | None = None,
    *,
    tolerance: float = 1e-5,
    seed: int = 0,
    name: str = "tangent",
) -> OracleReport:
    """Compare ``K w`` with ``(B(u + delta w) - B(u - delta w)) / (2 delta)``.

    ``w`` are random unit vectors on the INTERIOR dofs (collar values are
    prescribed). The error for one direction is
    ``|K w - fd|_inf / |K w|_inf``; the report carries the maximum.

    Parameters
    ----------
    delta : float, optional
        Defaults to ``1e-7 * max(1, |u|_inf)``.
    """
    # imported here so the module-level code stays independent of the fast path
    from .operator import assemble_residual, assemble_tangent, interior_dofs

    if delta is not None and not delta > 0:
        raise ValueError("delta must be positive")
    if directions < 1:
        raise ValueError("directions must be at least 1")
    u = np.asarray(getattr(state, "displacement", state), dtype=float)
    if delta is None:
        delta = 1e-7 * max(1.0, float(np.max(np.abs(u))) if u.size else 0.0)
    dofs = interior_dofs(nodes)
    K = assemble_tangent(u, graph, nodes, model)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(directions):
        w = rng.standard_normal(len(dofs))
        w /= np.linalg.norm(w)
        up, um = u.copy().reshape(-1), u.copy().reshape(-1)
        up[dofs] += delta * w
        um[dofs] -= delta * w
        fd = (assemble_residual(up.reshape(-1, 2), graph, nodes, model)
              - assemble_residual(um.reshape(-1, 2), graph, nodes, model)) / (2.0 * delta)
        Kw = K @ w
        scale = float(np.max(np.abs(Kw)))
        err = float(np.max(np.abs(Kw - fd))) / scale if scale > 0 else float(np.max(np.abs(fd)))
        worst = max(worst, err)
    return OracleReport(name, worst, tolerance)


def random_state(nodes: NodeSet, model: MaterialModel, amplitude: float, seed: int = 0) -> np.ndarray:
    """Random displacement with typical scaled strain ``~ amplitude * r_c``."""
    h = math.sqrt(float(np.mean(nodes.volumes))) if len(nodes) else 1.0
    rng = np.random.default_rng(seed)
    return amplitude * model.r_c * math.sqrt(h) * rng.standard_normal((len(nodes), 2))


def run_oracle_suite(nodes: NodeSet, graph: BondGraph, model: MaterialModel, *, seed: int = 0) -> list[OracleReport]:
    """Neighbor search, residual, tangent and bond-breaking cross-checks on one problem.

    ``graph`` may carry broken (e.g. pre-notched) bonds; the neighbor check
    compares its full pair list, the others use its intact flags.
    """
    from .geometry import build_bond_graph
    from .operator import assemble_residual
    from .solver import break_bonds

    reports = []
    expected = all_pairs_bonds(nodes, model.horizon)
    fresh = build_bond_graph(nodes, model.horizon)
    got = set(map(tuple, fresh.pairs.tolist()))
    mismatch = len(expected ^ got)
    reports.append(OracleReport("neighbor search (mismatched pairs)", float(mismatch), 0.0))

    intact = intact_matrix(graph)
    worst = 0.0
    for i in range(3):
        u = random_state(nodes, model, 0.5, seed + i)
        ref = dense_residual(u, nodes, intact, model)
        fast = assemble_residual(u, graph, nodes, model, full=True).reshape(-1, 2)
        denom = float(np.linalg.norm(ref))
        worst = max(worst, float(np.linalg.norm(fast - ref)) / denom if denom > 0 else float(np.linalg.norm(fast)))
    reports.append(OracleReport("residual vs dense double loop", worst, 1e-12))

    reports.append(fd_tangent_check(np.zeros((len(nodes), 2)), graph, nodes, model, 20, seed=seed,
                                    name="tangent vs finite differences (u = 0)"))
    u = random_state(nodes, model, 0.5, seed + 7)
    reports.append(fd_tangent_check(u, graph, nodes, model, 20, seed=seed, name="tangent vs finite differences (random u)"))

    u = random_state(nodes, model, 1.0, seed + 11)
    scan = brute_force_break_scan(u, nodes, intact, model)
    g = graph.copy()
    break_bonds(u, g, nodes, model)
    fast_broken = set(map(tuple, graph.pairs[graph.intact & ~g.intact].tolist()))
    reports.append(OracleReport("bond breaking vs exhaustive scan (mismatched bonds)", float(len(scan ^ fast_broken)), 0.0))
    return reports


def format_reports(reports: list[OracleReport]) -> str:
    """Aligned text table with one row per check."""
    width = max((len(r.name) for r in reports), default=5)
    lines = [f"{'check':<{width}}  {'max rel error':>13}  {'tolerance':>9}  result"]
    for r in reports:
        lines.append(f"{r.name:<{width}}  {r.max_rel_error:>13.3e}  {r.tolerance:>9.1e}  {'PASS' if r.passed else 'FAIL'}")
    return "\n".join(lines)


def reports_to_csv(reports: list[OracleReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["check", "max_rel_error", "tolerance", "passed"])
    for r in reports:
        w.writerow([r.name, format(r.max_rel_error, ".17g"), format(r.tolerance, ".17g"), int(r.passed)])
    return buf.getvalue()
