import numpy as np
import pytest

from quasifrac.geometry import CollarRegion, Rectangle, build_bond_graph, build_regular_grid, tag_collar
from quasifrac.material import calibrate

# results of the acceptance criteria, printed once at the end of the session
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}")


def small_plate(width=10.0, height=10.0, h=1.0, m=3, collars=("top", "bottom")):
    """Cell-centred plate with edge collars; returns ``(nodes, graph, model)``."""
    nodes = build_regular_grid(Rectangle(width, height), h)
    eps = m * h
    nodes = tag_collar(nodes, [CollarRegion(c, edge=c) for c in collars], eps)
    graph = build_bond_graph(nodes, eps)
    model = calibrate(E=210.0, Gc=2700.0, horizon=eps)
    return nodes, graph, model


@pytest.fixture
def plate():
    return small_plate()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


SMALL_SCENARIO = """\
[scenario]
name = small_crack
description = 20 mm notched plate used by the unit tests

[geometry]
shape = rectangle
width_mm = 20
height_mm = 20
h_mm = 1
horizon_ratio = 3
prenotch = 0 10 5 10

[collar.top]
edge = top

[collar.bottom]
edge = bottom

[load]
steps = 8
U0_mm = 0.002
dU_mm = 0.002

[load.top]
direction = 0 1

[load.bottom]
direction = 0 -1

[material]
E_GPa = 210
Gc_J_per_m2 = 2700

[output]
directory = out
every = 4
"""


@pytest.fixture
def small_scenario(tmp_path):
    path = tmp_path / "small_crack.cfg"
    path.write_text(SMALL_SCENARIO)
    return path
