"""Scenario files: an INI key-value tree with unit-suffixed keys.

A scenario has these sections:

``[scenario]``
    ``name``, ``description``
``[geometry]``
    ``shape`` (``rectangle``, ``lshape`` or ``mesh``), ``width_mm``,
    ``height_mm``, ``cut_width_mm``, ``cut_height_mm``, ``corner``,
    ``mesh_path``, ``h_mm``, one of ``horizon_mm`` / ``horizon_ratio``,
    ``prenotch`` (``x0 y0 x1 y1`` segments separated by ``;``)
``[collar.<group>]``
    ``edge`` or ``box_mm``
``[load]``
    ``steps``; ``U0_mm``, ``dU_mm``, ``direction`` as defaults for every group
``[load.<group>]``
    ``U0_mm``, ``dU_mm``, ``direction``; a collar group without a section is clamped
``[material]``
    ``E_GPa`` or ``mu_GPa``, ``Gc_J_per_m2``, ``influence``, ``dimension``
``[newton]``, ``[linsolve]``, ``[output]``
    solver and export controls, all optional.

Quantities accept any unit suffix from :data:`UNITS`; values are converted to
{mm, N, MPa} on parsing. A known quantity with a foreign suffix (``E_mm``) is
a unit mismatch; any other unexpected key is rejected as unknown.
"""

from __future__ import annotations

import configparser
import logging
import math
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np

from .geometry import (
    BondGraph,
    CollarRegion,
    GeometryError,
    LShape,
    NodeFormatError,
    NodeSet,
    PrenotchSpec,
    Rectangle,
    apply_prenotch,
    build_bond_graph,
    build_regular_grid,
    load_point_cloud,
    tag_collar,
)
from .material import GPA_TO_MPA, J_PER_M2_TO_N_PER_MM, InfluenceKind, MaterialModel, calibrate
from .solver import PREDICTORS, CollarLoad, LoadSchedule, NewtonConfig

logger = logging.getLogger(__name__)

#: Accepted unit suffixes per physical dimension, as factors to {mm, N, MPa}.
UNITS = {
    "length": {"mm": 1.0, "m": 1.0e3, "cm": 10.0},
    "stress": {"GPa": GPA_TO_MPA, "MPa": 1.0},
    "fracture": {"J_per_m2": J_PER_M2_TO_N_PER_MM, "N_per_mm": 1.0},
}


class ScenarioError(ValueError):
    """Malformed scenario; ``key_path`` names the offending ``section.key``."""

    def __init__(self, key_path: str, message: str):
        super().__init__(f"{key_path}: {message}")
        self.key_path = key_path


@dataclass(frozen=True)
class CollarGroup:
    name: str
    edge: str | None = None
    box: tuple[float, float, float, float] | None = None


@dataclass(frozen=True)
class GeometryConfig:
    shape: str
    h: float
    horizon: float
    width: float = 0.0
    height: float = 0.0
    cut_width: float = 0.0
    cut_height: float = 0.0
    corner: str = "lower-right"
    mesh_path: Path | None = None
    prenotch: tuple = ()
    collars: tuple[CollarGroup, ...] = ()


@dataclass(frozen=True)
class MaterialConfig:
    Gc: float  # N/mm
    E: float | None = None  # MPa
    mu: float | None = None  # MPa
    influence: InfluenceKind = InfluenceKind.CONSTANT
    dimension: int = 2


@dataclass(frozen=True)
class OutputConfig:
    directory: Path = Path("out")
    every: int = 1


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    geometry: GeometryConfig
    material: MaterialConfig
    loads: dict[str, CollarLoad]
    steps: int
    newton: NewtonConfig = field(default_factory=NewtonConfig)
    output: OutputConfig = field(default_factory=OutputConfig)
    description: str = ""

    @property
    def schedule(self) -> LoadSchedule:
        return LoadSchedule(dict(self.loads), self.steps)

    def coarsened(self, factor: float) -> "ScenarioConfig":
        """Same scenario with ``h`` and the horizon scaled by ``factor``."""
        g = replace(self.geometry, h=self.geometry.h * factor, horizon=self.geometry.horizon * factor)
        return replace(self, geometry=g)

    def build(self) -> "Problem":
        return build_problem(self)


@dataclass
class Problem:
    """Everything the solver needs, built from a :class:`ScenarioConfig`."""

    config: ScenarioConfig
    nodes: NodeSet
    graph: BondGraph
    model: MaterialModel

    @property
    def schedule(self) -> LoadSchedule:
        return self.config.schedule


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------

_GEOMETRY_QUANTITIES = {
    "h": "length",
    "horizon": "length",
    "width": "length",
    "height": "length",
    "cut_width": "length",
    "cut_height": "length",
}
_GEOMETRY_PLAIN = {"shape", "corner", "mesh_path", "horizon_ratio", "prenotch"}
_MATERIAL_QUANTITIES = {"E": "stress", "mu": "stress", "Gc": "fracture"}
_MATERIAL_PLAIN = {"influence", "dimension"}
_LOAD_QUANTITIES = {"U0": "length", "dU": "length"}
_LOAD_PLAIN = {"direction"}
_NEWTON_KEYS = {
    "tol": ("tol", float),
    "theta": ("theta", float),
    "max_iter": ("max_newton", int),
    "max_substeps": ("max_substeps", int),
    "check_energy": ("check_energy", bool),
    "energy_rel_tol": ("energy_rel_tol", float),
    "max_break_rounds": ("max_break_rounds", int),
    "stability_rel_threshold": ("stability_rel_threshold", float),
    "stability_min_count": ("stability_min_count", int),
    "predictor": ("predictor", str),
}
_LINSOLVE_KEYS = {
    "method": ("linsolve_method", str),
    "tol": ("linsolve_tol", float),
    "max_iter": ("linsolve_max_iter", int),
}


class _Section:
    """Key access that records which keys were consumed."""

    def __init__(self, parser: configparser.ConfigParser, name: str):
        self.name = name
        self.items = dict(parser.items(name, raw=True)) if parser.has_section(name) else {}
        self.used: set[str] = set()

    def path(self, key: str) -> str:
        return f"{self.name}.{key}"

    def has(self, key: str) -> bool:
        return key in self.items

    def raw(self, key: str, default=None, *, required: bool = False):
        if key not in self.items:
            if required:
                raise ScenarioError(self.path(key), "missing required key")
            return default
        self.used.add(key)
        return self.items[key].strip()

    def number(self, key: str, cast=float, default=None, *, required: bool = False):
        text = self.raw(key, None, required=required)
        if text is None:
            return default
        if cast is bool:
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ScenarioError(self.path(key), f"expected a boolean, got {text!r}")
        try:
            val = cast(text)
        except ValueError:
            raise ScenarioError(self.path(key), f"expected {cast.__name__}, got {text!r}") from None
        if cast is float and not math.isfinite(val):
            raise ScenarioError(self.path(key), "value must be finite")
        return val

    def quantity(self, base: str, kind: str, *, required: bool = False, default=None):
        """Value of ``base_<unit>`` converted to internal units."""
        found = []
        for key in self.items:
            if key == base or key.startswith(base + "_"):
                suffix = key[len(base) + 1:]
                if suffix in UNITS[kind]:
                    found.append((key, UNITS[kind][suffix]))
                elif key != base and _looks_like_unit(suffix):
                    raise ScenarioError(
                        self.path(key),
                        f"unit mismatch: {base!r} is a {kind}, expected one of {sorted(UNITS[kind])}",
                    )
                elif key == base:
                    raise ScenarioError(self.path(key), f"missing unit suffix; use e.g. {base}_{next(iter(UNITS[kind]))}")
        if len(found) > 1:
            raise ScenarioError(self.path(found[1][0]), f"{base!r} given more than once")
        if not found:
            if required:
                raise ScenarioError(self.path(f"{base}_{next(iter(UNITS[kind]))}"), "missing required key")
            return default
        key, factor = found[0]
        return self.number(key) * factor

    def reject_unused(self):
        for key in self.items:
            if key not in self.used:
                raise ScenarioError(self.path(key), "unknown key")


def _looks_like_unit(suffix: str) -> bool:
    return any(suffix in units for units in UNITS.values())


def _floats(text: str, count: int, path: str) -> tuple[float, ...]:
    parts = text.replace(",", " ").split()
    try:
        vals = tuple(float(p) for p in parts)
    except ValueError:
        raise ScenarioError(path, f"expected {count} numbers, got {text!r}") from None
    if len(vals) != count or not all(math.isfinite(v) for v in vals):
        raise ScenarioError(path, f"expected {count} finite numbers, got {text!r}")
    return vals


def parse_scenario(source: str, *, base_dir: str | Path | None = None) -> ScenarioConfig:
    """Parse and validate scenario text.

    Parameters
    ----------
    source : str
        INI text.
    base_dir : path, optional
        Directory against which a relative ``mesh_path`` is resolved.

    Raises
    ------
    ScenarioError
        For syntax errors, missing or unknown keys, unit mismatches and
        invalid values; the message starts with the key path.
    """
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";", "#"), strict=True)
    parser.optionxform = str  # keys are case sensitive (E vs e)
    try:
        parser.read_string(source)
    except configparser.Error as exc:
        raise ScenarioError("<syntax>", str(exc).splitlines()[0]) from None

    known = {"scenario", "geometry", "load", "material", "newton", "linsolve", "output"}
    for sec in parser.sections():
        if sec not in known and not sec.startswith(("collar.", "load.")):
            raise ScenarioError(sec, "unknown section")

    meta = _Section(parser, "scenario")
    name = meta.raw("name", "scenario")
    description = meta.raw("description", "")
    meta.reject_unused()

    collars = _parse_collars(parser)
    geometry = _parse_geometry(parser, collars, base_dir)
    material = _parse_material(parser)
    loads, steps = _parse_loads(parser, {c.name for c in collars})
    newton = _parse_newton(parser)
    output = _parse_output(parser)
    return ScenarioConfig(name, geometry, material, loads, steps, newton, output, description)


def _parse_collars(parser) -> tuple[CollarGroup, ...]:
    out = []
    for sec_name in parser.sections():
        if not sec_name.startswith("collar."):
            continue
        group = sec_name[len("collar."):]
        sec = _Section(parser, sec_name)
        edge = sec.raw("edge")
        box_text = sec.raw("box_mm")
        for key in sec.items:
            if key.startswith("box_") and key != "box_mm":
                raise ScenarioError(sec.path(key), "unit mismatch: box must be given as box_mm")
        sec.reject_unused()
        box = _floats(box_text, 4, sec.path("box_mm")) if box_text is not None else None
        try:
            out.append(CollarGroup(group, edge, box))
            CollarRegion(group, edge=edge, box=box)
        except GeometryError as exc:
            raise ScenarioError(sec_name, str(exc)) from None
    if not out:
        raise ScenarioError("collar", "at least one [collar.<group>] section is required")
    return tuple(out)


def _parse_geometry(parser, collars, base_dir) -> GeometryConfig:
    if not parser.has_section("geometry"):
        raise ScenarioError("geometry", "missing required section")
    sec = _Section(parser, "geometry")
    for key in sec.items:
        base = next((b for b in _GEOMETRY_QUANTITIES if key == b or key.startswith(b + "_")), None)
        if base is None and key not in _GEOMETRY_PLAIN:
            raise ScenarioError(sec.path(key), "unknown key")
    shape = sec.raw("shape", required=True).lower()
    if shape not in ("rectangle", "lshape", "mesh"):
        raise ScenarioError(sec.path("shape"), f"unknown shape {shape!r}")
    h = sec.quantity("h", "length", required=True)
    if not h > 0:
        raise ScenarioError(sec.path("h_mm"), "mesh size must be positive")

    horizon = sec.quantity("horizon", "length")
    ratio = sec.number("horizon_ratio")
    if (horizon is None) == (ratio is None):
        raise ScenarioError(sec.path("horizon_mm"), "give exactly one of horizon_mm or horizon_ratio")
    if horizon is None:
        horizon = ratio * h
    if horizon < h:
        raise ScenarioError(sec.path("horizon_mm"), f"horizon {horizon} is smaller than the mesh size {h}")
    if horizon < 2 * h:
        logger.warning("horizon %.4g is less than twice the mesh size %.4g", horizon, h)

    dims = {}
    for key in ("width", "height", "cut_width", "cut_height"):
        val = sec.quantity(key, "length", default=0.0)
        if val < 0:
            raise ScenarioError(sec.path(key + "_mm"), "must be non-negative")
        dims[key] = val
    corner = sec.raw("corner", "lower-right")
    if corner not in ("lower-right", "lower-left", "upper-right", "upper-left"):
        raise ScenarioError(sec.path("corner"), f"unknown corner {corner!r}")
    mesh = sec.raw("mesh_path")
    mesh_path = None
    if mesh:
        mesh_path = Path(mesh)
        if not mesh_path.is_absolute() and base_dir is not None:
            mesh_path = Path(base_dir) / mesh_path
    if shape == "mesh" and mesh_path is None:
        raise ScenarioError(sec.path("mesh_path"), "missing required key for shape = mesh")
    if shape in ("rectangle", "lshape"):
        for key in ("width", "height"):
            if not dims[key] > 0:
                raise ScenarioError(sec.path(key + "_mm"), "missing required key")
    if shape == "lshape":
        for key, outer in (("cut_width", "width"), ("cut_height", "height")):
            if not 0 < dims[key] < dims[outer]:
                raise ScenarioError(sec.path(key + "_mm"), f"must lie strictly between 0 and {outer}")

    segments = []
    notch = sec.raw("prenotch", "")
    for part in filter(None, (p.strip() for p in notch.split(";"))):
        x0, y0, x1, y1 = _floats(part, 4, sec.path("prenotch"))
        segments.append(((x0, y0), (x1, y1)))
    try:
        PrenotchSpec(tuple(segments))
    except (GeometryError, ValueError) as exc:
        raise ScenarioError(sec.path("prenotch"), str(exc)) from None
    sec.reject_unused()
    return GeometryConfig(
        shape=shape, h=h, horizon=horizon, corner=corner, mesh_path=mesh_path,
        prenotch=tuple(segments), collars=collars, **dims,
    )


def _parse_material(parser) -> MaterialConfig:
    if not parser.has_section("material"):
        raise ScenarioError("material", "missing required section")
    sec = _Section(parser, "material")
    for key in sec.items:
        base = next((b for b in _MATERIAL_QUANTITIES if key == b or key.startswith(b + "_")), None)
        if base is None and key not in _MATERIAL_PLAIN:
            raise ScenarioError(sec.path(key), "unknown key")
    E = sec.quantity("E", "stress")
    mu = sec.quantity("mu", "stress")
    if (E is None) == (mu is None):
        raise ScenarioError(sec.path("E_GPa"), "give exactly one of E_GPa or mu_GPa")
    Gc = sec.quantity("Gc", "fracture", required=True)
    for key, val in (("E_GPa", E), ("mu_GPa", mu), ("Gc_J_per_m2", Gc)):
        if val is not None and not val > 0:
            raise ScenarioError(sec.path(key), "must be positive")
    try:
        influence = InfluenceKind(sec.raw("influence", "constant"))
    except ValueError:
        raise ScenarioError(sec.path("influence"), "expected 'constant' or 'linear'") from None
    dimension = sec.number("dimension", int, 2)
    if dimension != 2:
        raise ScenarioError(sec.path("dimension"), "only two-dimensional scenarios are supported")
    sec.reject_unused()
    return MaterialConfig(Gc=Gc, E=E, mu=mu, influence=influence, dimension=dimension)


def _parse_loads(parser, groups: set[str]) -> tuple[dict[str, CollarLoad], int]:
    sec = _Section(parser, "load")
    for key in sec.items:
        base = next((b for b in _LOAD_QUANTITIES if key == b or key.startswith(b + "_")), None)
        if base is None and key not in _LOAD_PLAIN | {"steps"}:
            raise ScenarioError(sec.path(key), "unknown key")
    steps = sec.number("steps", int, required=True)
    if steps < 1:
        raise ScenarioError(sec.path("steps"), "must be at least 1")
    defaults = {
        "U0": sec.quantity("U0", "length", default=0.0),
        "dU": sec.quantity("dU", "length", default=0.0),
        "direction": sec.raw("direction", "0 1"),
    }
    if defaults["dU"] < 0:
        raise ScenarioError(sec.path("dU_mm"), "load increment must be non-negative")
    sec.reject_unused()
    loads = {}
    for sec_name in parser.sections():
        if not sec_name.startswith("load."):
            continue
        group = sec_name[len("load."):]
        if group not in groups:
            raise ScenarioError(sec_name, f"load references undefined collar group {group!r}")
        loads[group] = _parse_group_load(_Section(parser, sec_name), defaults)
    for group in groups - set(loads):
        # collar groups without their own section are clamped
        loads[group] = CollarLoad(0.0, 0.0, (0.0, 1.0))
    return dict(sorted(loads.items())), steps


def _parse_group_load(ls: _Section, defaults: dict) -> CollarLoad:
    for key in ls.items:
        base = next((b for b in _LOAD_QUANTITIES if key == b or key.startswith(b + "_")), None)
        if base is None and key not in _LOAD_PLAIN:
            raise ScenarioError(ls.path(key), "unknown key")
    U0 = ls.quantity("U0", "length", default=defaults["U0"])
    dU = ls.quantity("dU", "length", default=defaults["dU"])
    if dU < 0:
        raise ScenarioError(ls.path("dU_mm"), "load increment must be non-negative")
    direction = _floats(ls.raw("direction", defaults["direction"]), 2, ls.path("direction"))
    norm = math.hypot(*direction)
    if norm == 0:
        raise ScenarioError(ls.path("direction"), "direction must be nonzero")
    ls.reject_unused()
    return CollarLoad(U0, dU, (direction[0] / norm, direction[1] / norm))


def _parse_newton(parser) -> NewtonConfig:
    kwargs = {}
    for sec_name, table in (("newton", _NEWTON_KEYS), ("linsolve", _LINSOLVE_KEYS)):
        sec = _Section(parser, sec_name)
        for key, (attr, cast) in table.items():
            if sec.has(key):
                kwargs[attr] = sec.raw(key) if cast is str else sec.number(key, cast)
        sec.reject_unused()
    if "linsolve_method" in kwargs and kwargs["linsolve_method"] not in ("cg", "direct", "auto"):
        raise ScenarioError("linsolve.method", "expected 'cg', 'direct' or 'auto'")
    if "predictor" in kwargs and kwargs["predictor"] not in PREDICTORS:
        raise ScenarioError("newton.predictor", f"expected one of {', '.join(PREDICTORS)}")
    try:
        return NewtonConfig(**kwargs)
    except ValueError as exc:
        raise ScenarioError("newton", str(exc)) from None


def _parse_output(parser) -> OutputConfig:
    sec = _Section(parser, "output")
    directory = Path(sec.raw("directory", "out"))
    every = sec.number("every", int, 1)
    if every < 1:
        raise ScenarioError(sec.path("every"), "must be at least 1")
    sec.reject_unused()
    return OutputConfig(directory, every)


def load_scenario(path: str | Path) -> ScenarioConfig:
    """Read and parse a scenario file; a relative ``mesh_path`` is taken from its directory."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ScenarioError(str(path), f"cannot read scenario: {exc.strerror or exc}") from None
    return parse_scenario(text, base_dir=path.parent)


def bundled_scenarios() -> list[str]:
    root = resources.files("quasifrac") / "scenarios"
    return sorted(p.name[:-4] for p in root.iterdir() if p.name.endswith(".cfg"))


def bundled_scenario_path(name: str) -> Path:
    path = Path(str(resources.files("quasifrac") / "scenarios" / f"{name}.cfg"))
    if not path.exists():
        raise FileNotFoundError(f"no bundled scenario {name!r}; available: {bundled_scenarios()}")
    return path


def load_bundled(name: str) -> ScenarioConfig:
    return load_scenario(bundled_scenario_path(name))


# ---------------------------------------------------------------------------
# Building
# ---------------------------------------------------------------------------


def build_nodes(cfg: ScenarioConfig) -> NodeSet:
    g = cfg.geometry
    if g.shape == "rectangle":
        nodes = build_regular_grid(Rectangle(g.width, g.height), g.h)
    elif g.shape == "lshape":
        nodes = None
        if g.mesh_path is not None and g.mesh_path.exists():
            nodes = _read_mesh(g.mesh_path)
        elif g.mesh_path is not None:
            logger.warning("mesh %s not found; falling back to a structured L-grid", g.mesh_path)
        if nodes is None:
            nodes = build_regular_grid(LShape(g.width, g.height, g.cut_width, g.cut_height, g.corner), g.h)
    else:
        nodes = _read_mesh(g.mesh_path)
    regions = [CollarRegion(c.name, edge=c.edge, box=c.box) for c in g.collars]
    return tag_collar(nodes, regions, g.horizon)


def _read_mesh(path: Path) -> NodeSet:
    try:
        with open(path, "rb") as fh:
            nodes = load_point_cloud(fh)
    except OSError as exc:
        raise ScenarioError("geometry.mesh_path", f"cannot read {path}: {exc.strerror or exc}") from None
    except NodeFormatError as exc:
        raise ScenarioError("geometry.mesh_path", f"{path}: {exc}") from None
    # tags in the file are replaced by the configured collar groups
    return nodes.with_tags(np.full(len(nodes), "INTERIOR", dtype=object))


def build_model(cfg: ScenarioConfig) -> MaterialModel:
    m = cfg.material
    kwargs = {"E": m.E / GPA_TO_MPA} if m.E is not None else {"mu": m.mu / GPA_TO_MPA}
    return calibrate(
        Gc=m.Gc / J_PER_M2_TO_N_PER_MM,
        horizon=cfg.geometry.horizon,
        dimension=m.dimension,
        influence_kind=m.influence,
        **kwargs,
    )


def build_problem(cfg: ScenarioConfig) -> Problem:
    nodes = build_nodes(cfg)
    graph = build_bond_graph(nodes, cfg.geometry.horizon)
    if cfg.geometry.prenotch:
        graph = apply_prenotch(graph, nodes, PrenotchSpec(cfg.geometry.prenotch))
    return Problem(cfg, nodes, graph, build_model(cfg))
