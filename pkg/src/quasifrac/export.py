"""Result files: node and bond CSVs, legacy ASCII VTK, and the energy trace.

All floats are written with 17 significant digits, which round-trips IEEE
doubles exactly.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .solver import EvolutionRecord, StepRecord

NODE_FIELDS = ("x", "y", "ux", "uy", "damage")
BOND_FIELDS = ("k", "l", "intact")
ENERGY_FIELDS = ("N", "E_N", "broken_new", "broken_total", "newton_iters", "intact_nodes")
ENERGY_FILE = "energy.csv"


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


@dataclass(frozen=True)
class ExportedFiles:
    nodes: Path | None
    bonds: Path | None
    vtk: Path | None
    energy: Path


def export_fields(record: EvolutionRecord, step: int, directory, *, fields: bool = True) -> ExportedFiles:
    """Write the results of recorded step ``step`` (1-based ``N``) into ``directory``.

    Parameters
    ----------
    record : EvolutionRecord
        Must have been run with snapshots.
    step : int
        Record index ``N``.
    directory : path
        Created if missing.
    fields : bool
        When False only the ``energy.csv`` row is appended.

    Raises
    ------
    OSError
        If the directory cannot be created or written.
    """
    if not 1 <= step <= len(record.steps):
        raise IndexError(f"step {step} not recorded (have {len(record.steps)})")
    entry = record.steps[step - 1]
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)

    node_path = bond_path = vtk_path = None
    if fields:
        node_path, bond_path, vtk_path = write_snapshot(record, entry, out)

    energy_path = out / ENERGY_FILE
    new = not energy_path.exists() or energy_path.stat().st_size == 0
    with open(energy_path, "a", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if new:
            w.writerow(ENERGY_FIELDS)
        w.writerow([entry.N, _fmt(entry.energy), entry.broken_new, entry.broken_total, entry.newton_iters, entry.intact_nodes])
    return ExportedFiles(node_path, bond_path, vtk_path, energy_path)


def write_snapshot(record: EvolutionRecord, entry: StepRecord, directory, prefix: str = "") -> tuple[Path, Path, Path]:
    """Node CSV, bond CSV and VTK file for one record entry (also usable for ``record.terminal_step``)."""
    if entry.displacement is None or entry.intact is None or record.nodes is None:
        raise ValueError("record was run without snapshots")
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    X = record.nodes.positions
    u = entry.displacement
    d = record.damage_of(entry)
    node_path = out / f"{prefix}nodes_{entry.N:05d}.csv"
    with open(node_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(NODE_FIELDS)
        for i in range(len(X)):
            w.writerow([_fmt(X[i, 0]), _fmt(X[i, 1]), _fmt(u[i, 0]), _fmt(u[i, 1]), _fmt(d[i])])
    bond_path = out / f"{prefix}bonds_{entry.N:05d}.csv"
    pairs = record.pairs if record.pairs is not None else np.empty((0, 2), dtype=np.int64)
    with open(bond_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(BOND_FIELDS)
        w.writerows(zip(pairs[:, 0].tolist(), pairs[:, 1].tolist(), entry.intact.astype(int).tolist()))
    vtk_path = out / f"{prefix}fields_{entry.N:05d}.vtk"
    write_vtk(vtk_path, X, u, d, title=f"{prefix}step {entry.N}")
    return node_path, bond_path, vtk_path


def write_vtk(path, positions: np.ndarray, displacement: np.ndarray, damage: np.ndarray, title: str = "fields") -> None:
    """Legacy ASCII unstructured grid of vertex cells with displacement and damage point data."""
    n = len(positions)
    lines = ["# vtk DataFile Version 3.0", title.replace("\n", " ")[:255], "ASCII", "DATASET UNSTRUCTURED_GRID"]
    lines.append(f"POINTS {n} double")
    lines.extend(f"{_fmt(x)} {_fmt(y)} 0" for x, y in positions)
    lines.append(f"CELLS {n} {2 * n}")
    lines.extend(f"1 {i}" for i in range(n))
    lines.append(f"CELL_TYPES {n}")
    lines.extend("1" for _ in range(n))
    lines.append(f"POINT_DATA {n}")
    lines.append("VECTORS displacement double")
    lines.extend(f"{_fmt(a)} {_fmt(b)} 0" for a, b in displacement)
    lines.append("SCALARS damage double 1")
    lines.append("LOOKUP_TABLE default")
    lines.extend(_fmt(v) for v in damage)
    Path(path).write_text("\n".join(lines) + "\n")


def read_node_csv(path) -> dict[str, np.ndarray]:
    """Columns of an exported node CSV as float arrays."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    if tuple(header) != NODE_FIELDS:
        raise ValueError(f"unexpected header {header}")
    data = np.array(body, dtype=float).reshape(-1, len(NODE_FIELDS))
    return {name: data[:, i] for i, name in enumerate(NODE_FIELDS)}


def read_energy_csv(path) -> dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if tuple(rows[0]) != ENERGY_FIELDS:
        raise ValueError(f"unexpected header {rows[0]}")
    data = np.array(rows[1:], dtype=float).reshape(-1, len(ENERGY_FIELDS))
    out = {name: data[:, i] for i, name in enumerate(ENERGY_FIELDS)}
    for name in ("N", "intact_nodes", "broken_new", "broken_total", "newton_iters"):
        out[name] = out[name].astype(np.int64)
    return out
