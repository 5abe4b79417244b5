"""Displacement-controlled quasistatic evolution with bond breaking.

Each load step sets the collar displacement, solves the force balance by
relaxed Newton iteration, breaks every bond whose scaled strain left
``(r_e, r_c)``, and re-solves at the same load until no further bond
breaks. Failed steps (Newton divergence, linear-solver failure, or an
increase of intact-material energy during crack growth) are retried with
the pending increment halved.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np
from scipy.sparse import coo_matrix, identity
from scipy.sparse.csgraph import connected_components

from . import linsolve
from .geometry import INTERIOR, BondGraph, NodeSet
from .material import MaterialModel
from .operator import (
    StabilityTensorField,
    assemble_residual,
    assemble_tangent,
    interior_dofs,
    scaled_strains,
    stability_field,
)
from .postprocess import damage, intact_energy

logger = logging.getLogger(__name__)


@dataclass
class SolveState:
    displacement: np.ndarray
    load_step: int = 0
    applied: dict[str, np.ndarray] = field(default_factory=dict)

    def copy(self) -> "SolveState":
        return SolveState(self.displacement.copy(), self.load_step, {k: v.copy() for k, v in self.applied.items()})


@dataclass(frozen=True)
class CollarLoad:
    """Displacement ``(U0 + (N - 1) dU) * direction`` of one collar group at step N."""

    U0: float
    dU: float
    direction: tuple[float, float]

    def __post_init__(self):
        if self.dU < 0:
            raise ValueError("load increment must be non-negative")
        norm = float(np.hypot(*self.direction))
        if abs(norm - 1.0) > 1e-9:
            raise ValueError(f"direction {self.direction} is not a unit vector")

    def at(self, step: int) -> np.ndarray:
        return (self.U0 + (step - 1) * self.dU) * np.asarray(self.direction, dtype=float)


@dataclass(frozen=True)
class LoadSchedule:
    groups: Mapping[str, CollarLoad]
    steps: int

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be >= 1")

    def applied(self, step: int) -> dict[str, np.ndarray]:
        return {name: load.at(step) for name, load in self.groups.items()}


#: Initial guesses for a load step: the previous solution with the new collar
#: values, or that plus the linearized interior response to the collar increment.
PREDICTORS = ("collar", "tangent")


@dataclass(frozen=True)
class NewtonConfig:
    """Newton, sub-stepping and linear-solver controls.

    ``theta`` relaxes the increment ``W`` of ``-K_s W = B`` where ``K_s`` is
    the symmetric kernel ``sum sigma_ij V_l`` (half the exact Jacobian), so
    ``theta = 0.5`` is an exact Newton step and ``theta < 0.5`` is damped.

    ``predictor`` picks the initial guess of each load step (see
    :func:`predict`).
    """

    tol: float = 1e-5
    theta: float = 0.5
    max_newton: int = 30
    max_substeps: int = 10
    linsolve_method: str = "cg"
    linsolve_tol: float = 1e-10
    linsolve_max_iter: int | None = None
    check_energy: bool = True
    energy_rel_tol: float = 1e-8
    max_break_rounds: int = 500
    stability_rel_threshold: float = 1e-8
    stability_min_count: int = 5
    predictor: str = "collar"

    def __post_init__(self):
        if self.predictor not in PREDICTORS:
            raise ValueError(f"predictor must be one of {PREDICTORS}")
        if not (0.0 < self.theta <= 1.0):
            raise ValueError("theta must lie in (0, 1]")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_newton < 1 or self.max_substeps < 0:
            raise ValueError("iteration caps must be positive")


class NewtonFailure(RuntimeError):
    def __init__(self, message: str, trace: list[float]):
        super().__init__(message)
        self.trace = trace


class EnergyIncrease(RuntimeError):
    pass


class CascadeCollapse(NewtonFailure):
    """Newton failed while re-solving at a fixed load after bonds broke.

    Equilibrium existed at this load before the last bonds broke, so the
    structure lost its load-carrying capacity through crack growth alone.
    ``attempt`` holds the last converged state of the cascade.
    """

    def __init__(self, message: str, trace: list[float], attempt: "_Attempt"):
        super().__init__(message, trace)
        self.attempt = attempt


def apply_collar(u: np.ndarray, nodes: NodeSet, applied: Mapping[str, np.ndarray]) -> np.ndarray:
    u = np.array(u, dtype=float, copy=True)
    for name, vec in applied.items():
        u[nodes.tags == name] = vec
    return u


def floating_nodes(graph: BondGraph, nodes: NodeSet) -> np.ndarray:
    """INTERIOR nodes whose intact-bond component touches no collar node."""
    n = len(nodes)
    p = graph.pairs[graph.intact]
    adj = coo_matrix((np.ones(len(p)), (p[:, 0], p[:, 1])), shape=(n, n))
    _, lab = connected_components(adj, directed=False)
    anchored = np.zeros(lab.max() + 1 if n else 0, dtype=bool)
    anchored[lab[~nodes.interior]] = True
    return nodes.interior & ~anchored[lab]


def newton_step_loop(
    state: SolveState,
    graph: BondGraph,
    nodes: NodeSet,
    model: MaterialModel,
    cfg: NewtonConfig = NewtonConfig(),
) -> tuple[SolveState, list[float]]:
    """Drive ``sup |B|`` over INTERIOR dofs below ``cfg.tol``.

    ``state.displacement`` is the initial guess and must already carry the
    collar values. Returns the converged state and the residual trace (one
    entry before the first iteration, one after each).

    Raises
    ------
    NewtonFailure
        On iteration cap, divergence, or linear-solver failure.
    """
    u = np.array(state.displacement, dtype=float, copy=True)
    dofs = interior_dofs(nodes)
    free = ~floating_nodes(graph, nodes)[nodes.interior]
    active = np.repeat(free, 2)
    act_dofs = dofs[active]
    flat = u.reshape(-1)

    B = assemble_residual(u, graph, nodes, model)[active]
    trace = [float(np.max(np.abs(B))) if len(B) else 0.0]
    for _ in range(cfg.max_newton):
        if trace[-1] <= cfg.tol:
            break
        K = assemble_tangent(u, graph, nodes, model)[active][:, active]
        # tiny shift keeps rank-deficient nodes (single remaining bond) solvable
        shift = 1e-12 * float(np.max(np.abs(K.diagonal()))) if K.shape[0] else 0.0
        K = K - shift * identity(K.shape[0], format="csr")
        try:
            du, _ = linsolve.solve(K, B, tol=cfg.linsolve_tol, max_iter=cfg.linsolve_max_iter, method=cfg.linsolve_method)
        except linsolve.LinearSolveError as exc:
            raise NewtonFailure(f"linear solve failed: {exc}", trace) from None
        # -K du = B is the exact Newton system; the kernel system has W = 2 du
        flat[act_dofs] += cfg.theta * 2.0 * du
        B = assemble_residual(u, graph, nodes, model)[active]
        res = float(np.max(np.abs(B)))
        trace.append(res)
        if not np.isfinite(res) or res > 1e8 * max(trace[0], cfg.tol):
            raise NewtonFailure("Newton iteration diverged", trace)
    if trace[-1] > cfg.tol:
        raise NewtonFailure(f"no convergence in {cfg.max_newton} iterations (residual {trace[-1]:.3e})", trace)
    return SolveState(u, state.load_step, dict(state.applied)), trace


def predict(state: SolveState, graph: BondGraph, nodes: NodeSet, model: MaterialModel,
            applied: Mapping[str, np.ndarray], cfg: NewtonConfig = NewtonConfig()) -> np.ndarray:
    """Initial guess for equilibrium under the collar values ``applied``.

    ``"collar"`` keeps the interior of ``state`` and moves only the collar.
    ``"tangent"`` also adds the interior increment ``x`` solving
    ``K_II x = -K_IC dU_C`` with the tangent at ``state``, so bonds next to a
    loaded collar are not overstretched before the first Newton iteration.
    """
    u = apply_collar(state.displacement, nodes, applied)
    if cfg.predictor == "collar":
        return u
    dofs = interior_dofs(nodes)
    free = ~floating_nodes(graph, nodes)[nodes.interior]
    act_dofs = dofs[np.repeat(free, 2)]
    step = (u - state.displacement).reshape(-1)
    if not step.any() or not len(act_dofs):
        return u
    K = assemble_tangent(state, graph, nodes, model, eliminate=False).tocsr()
    rhs = K[act_dofs] @ step
    K_ii = K[act_dofs][:, act_dofs]
    shift = 1e-12 * float(np.max(np.abs(K_ii.diagonal())))
    try:
        x, _ = linsolve.solve(K_ii - shift * identity(len(act_dofs), format="csr"), rhs, tol=cfg.linsolve_tol,
                              max_iter=cfg.linsolve_max_iter, method=cfg.linsolve_method)
    except linsolve.LinearSolveError as exc:
        raise NewtonFailure(f"tangent predictor failed: {exc}", []) from None
    flat = u.reshape(-1)
    flat[act_dofs] += x
    return u


def break_bonds(state, graph: BondGraph, nodes: NodeSet, model: MaterialModel) -> int:
    """Mark intact bonds with ``sqrt(d) S`` outside ``(r_e, r_c)`` as broken; return how many."""
    r = scaled_strains(state, nodes, graph, model)
    newly = graph.intact & ((r > model.r_c) | (r < model.r_e))
    graph.intact[newly] = False
    return int(np.count_nonzero(newly))


def check_terminal(
    stability: StabilityTensorField,
    threshold: float,
    min_count: int,
    nodes: NodeSet | None = None,
) -> bool:
    """True iff at least ``min_count`` (INTERIOR) nodes have ``min |eig| < threshold``."""
    low = stability.min_abs_eigenvalue < threshold
    if nodes is not None:
        low &= nodes.interior
    return int(np.count_nonzero(low)) >= min_count


@dataclass
class StepRecord:
    N: int
    nominal_step: int
    fraction: float
    applied: dict[str, np.ndarray]
    energy: float
    intact_nodes: int
    broken_new: int
    broken_total: int
    newton_traces: list[list[float]]
    min_eigenvalue: float
    displacement: np.ndarray | None = None
    intact: np.ndarray | None = None

    @property
    def newton_iters(self) -> int:
        return max((len(t) - 1 for t in self.newton_traces), default=0)


@dataclass
class EvolutionRecord:
    steps: list[StepRecord] = field(default_factory=list)
    status: str = "running"
    message: str = ""
    pristine_min_eigenvalue: float = float("nan")
    substeps_used: int = 0
    reference_counts: np.ndarray | None = None
    pairs: np.ndarray | None = None
    nodes: NodeSet | None = None
    terminal_step: StepRecord | None = None

    @property
    def energies(self) -> np.ndarray:
        return np.array([s.energy for s in self.steps])

    def damage_at(self, i: int) -> np.ndarray:
        """Damage field of the ``i``-th recorded step (requires snapshots)."""
        return self.damage_of(self.steps[i])

    def damage_of(self, entry: StepRecord) -> np.ndarray:
        if entry.intact is None or self.pairs is None:
            raise ValueError("record was run without snapshots")
        ref = self.reference_counts
        kept = np.bincount(self.pairs[entry.intact].ravel(), minlength=len(ref))
        d = np.zeros(len(ref))
        d[ref > 0] = 1.0 - kept[ref > 0] / ref[ref > 0]
        return d


@dataclass
class _Attempt:
    state: SolveState
    graph: BondGraph
    traces: list[list[float]]
    broken_new: int
    energy: float
    intact_nodes: int


def _solve_at_load(state, graph, nodes, model, cfg, applied, step, E_prev, E_max):
    """Equilibrate at fixed collar load, breaking bonds until none break."""
    g = graph.copy()
    guess = SolveState(predict(state, g, nodes, model, applied, cfg), step, dict(applied))
    # a collar jump that moves a bond's scaled strain by more than r_c can land
    # it where g' vanishes, and Newton would stop at a spurious zero-force
    # state: shrink the increment instead
    r_prev = scaled_strains(state, nodes, g, model)
    r_new = scaled_strains(guess, nodes, g, model)
    jumped = g.intact & (np.abs(r_new - r_prev) > model.r_c)
    if jumped.any():
        raise NewtonFailure(f"load increment moves {int(jumped.sum())} bond strains by more than r_c", [])
    traces = []
    new_total = 0
    for rnd in range(cfg.max_break_rounds):
        try:
            guess, trace = newton_step_loop(guess, g, nodes, model, cfg)
        except NewtonFailure as exc:
            if rnd == 0:
                raise
            sample = intact_energy(guess, g, nodes, model, step)
            last = _Attempt(guess, g, traces, new_total, sample.energy, sample.intact_nodes)
            raise CascadeCollapse(
                f"equilibrium lost after {rnd} bond-breaking rounds at fixed load ({exc})", exc.trace, last
            ) from None
        traces.append(trace)
        n_new = break_bonds(guess, g, nodes, model)
        new_total += n_new
        if n_new == 0:
            break
    else:
        raise NewtonFailure("bond breaking did not settle at fixed load", traces[-1])
    sample = intact_energy(guess, g, nodes, model, step)
    if cfg.check_energy and new_total > 0 and E_prev is not None:
        ceiling = E_prev + cfg.energy_rel_tol * max(E_max, sample.energy)
        if sample.energy > ceiling:
            raise EnergyIncrease(f"intact energy rose from {E_prev:.6e} to {sample.energy:.6e} during crack growth")
    return _Attempt(guess, g, traces, new_total, sample.energy, sample.intact_nodes)


def _entry(N, step, frac, applied, attempt: _Attempt, keep: bool, min_eig: float) -> StepRecord:
    return StepRecord(
        N=N,
        nominal_step=step,
        fraction=frac,
        applied={k: v.copy() for k, v in applied.items()},
        energy=attempt.energy,
        intact_nodes=attempt.intact_nodes,
        broken_new=attempt.broken_new,
        broken_total=attempt.graph.n_broken,
        newton_traces=attempt.traces,
        min_eigenvalue=min_eig,
        displacement=attempt.state.displacement.copy() if keep else None,
        intact=attempt.graph.intact.copy() if keep else None,
    )


def run_evolution(
    nodes: NodeSet,
    graph: BondGraph,
    model: MaterialModel,
    schedule: LoadSchedule,
    cfg: NewtonConfig = NewtonConfig(),
    *,
    steps: int | None = None,
    keep_snapshots: bool = True,
    on_step: Callable[[StepRecord, SolveState, BondGraph], None] | None = None,
) -> EvolutionRecord:
    """Run the load schedule (or its first ``steps`` steps).

    ``graph`` is not modified; the evolving intact flags live on a copy.
    The returned record holds one entry per accepted equilibrium, including
    the extra entries produced by sub-stepping.
    """
    for name in schedule.groups:
        if name == INTERIOR or not np.any(nodes.tags == name):
            logger.warning("load group %r has no collar nodes", name)
    n_steps = schedule.steps if steps is None else min(steps, schedule.steps)
    graph = graph.copy()
    record = EvolutionRecord(reference_counts=graph.reference_counts.copy(), pairs=graph.pairs, nodes=nodes)
    state = SolveState(np.zeros((len(nodes), 2)), 0, {k: np.zeros(2) for k in schedule.groups})

    pristine = stability_field(state, graph, nodes, model)
    interior = nodes.interior
    record.pristine_min_eigenvalue = float(np.min(pristine.min_abs_eigenvalue[interior])) if interior.any() else 0.0
    threshold = cfg.stability_rel_threshold * record.pristine_min_eigenvalue

    E_prev: float | None = None
    E_max = 0.0
    counter = 0
    for step in range(1, n_steps + 1):
        start_applied = state.applied
        target = schedule.applied(step)
        done = 0.0
        pending = 1.0
        halvings = 0
        while done < 1.0:
            frac = min(1.0, done + pending)
            applied = {k: start_applied[k] + frac * (target[k] - start_applied[k]) for k in target}
            try:
                attempt = _solve_at_load(state, graph, nodes, model, cfg, applied, step, E_prev, E_max)
            except CascadeCollapse as exc:
                # halving cannot help: the load was fixed while the crack ran
                a = exc.attempt
                record.terminal_step = _entry(counter + 1, step, frac, applied, a, keep_snapshots, float("nan"))
                record.status = "terminal"
                record.message = f"step {step}: {exc}; unstable crack growth, terminal load step"
                logger.warning(record.message)
                return record
            except (NewtonFailure, EnergyIncrease) as exc:
                halvings += 1
                record.substeps_used += 1
                if halvings > cfg.max_substeps:
                    record.status = "failed"
                    cause = (
                        "The energy rise persists at the smallest increment"
                        if isinstance(exc, EnergyIncrease)
                        else "The tangent is likely singular (loss of stability)"
                    )
                    record.message = (
                        f"step {step}: {exc}; increment halved {cfg.max_substeps} times without success. "
                        f"{cause}: terminal load step."
                    )
                    logger.error(record.message)
                    return record
                pending *= 0.5
                logger.info("step %d: %s; retrying with %.4g of the increment", step, exc, pending)
                continue
            done = frac
            pending = 1.0 - done
            halvings = 0
            state, graph = attempt.state, attempt.graph
            counter += 1
            E_prev = attempt.energy
            E_max = max(E_max, attempt.energy)
            stab = stability_field(state, graph, nodes, model)
            min_eig = float(np.min(stab.min_abs_eigenvalue[interior])) if interior.any() else 0.0
            entry = _entry(counter, step, frac, applied, attempt, keep_snapshots, min_eig)
            state.applied = applied
            state.load_step = counter
            record.steps.append(entry)
            if on_step is not None:
                on_step(entry, state, graph)
            if check_terminal(stab, threshold, cfg.stability_min_count, nodes):
                record.status = "terminal"
                record.message = (
                    f"step {step}: stability tensor vanishes at >= {cfg.stability_min_count} interior nodes"
                )
                logger.warning(record.message)
                return record
    record.status = "completed"
    return record
