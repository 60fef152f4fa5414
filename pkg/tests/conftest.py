import numpy as np
import pytest

from tsvrom.materials import MaterialTable
from tsvrom.mesh import TensorGrid, UnitBlockGeometry, build_unit_block_mesh, default_grading
from tsvrom.rom import NodeLayout, build_rom


@pytest.fixture(scope="session")
def geometry():
    return UnitBlockGeometry(d=5e-6, h=50e-6, t=0.5e-6, p=15e-6)


@pytest.fixture(scope="session")
def mats():
    return MaterialTable()


@pytest.fixture(scope="session")
def coarse_grid(geometry):
    """Graded in x/y, four layers in z: small enough for unit tests."""
    return default_grading(geometry, 5e-6, nz=4)


@pytest.fixture(scope="session")
def uniform_grid(geometry):
    g = geometry
    return TensorGrid(np.linspace(0, g.p, 5), np.linspace(0, g.p, 5), np.linspace(0, g.h, 5))


@pytest.fixture(scope="session")
def coarse_roms(geometry, coarse_grid, mats):
    nl = NodeLayout(3, 3, 3, geometry.p, geometry.h)
    return {
        kind: build_rom(build_unit_block_mesh(geometry, coarse_grid, kind), mats, nl, kind,
                        geometry=geometry)
        for kind in ("tsv", "dummy")
    }


def pytest_terminal_summary(terminalreporter):
    from .report import ACCEPTANCE

    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)
