"""Graded tensor-product hexahedral meshes of TSV unit blocks and arrays.

A unit block is the p x p x h cuboid holding one copper via of diameter d
wrapped in a liner of thickness t, centred on the block axis. Elements are
classified by the radius of their centroid, so the cylinder is stair-cased;
every comparison in this package is made on the same discretization, which
keeps that geometric error out of the reduced-order error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .materials import COPPER, LINER, SILICON

__all__ = [
    "UnitBlockGeometry",
    "TensorGrid",
    "HexMesh",
    "default_grading",
    "build_unit_block_mesh",
    "replicate_array_mesh",
    "write_vtk",
    "FACE_XMIN",
    "FACE_XMAX",
    "FACE_YMIN",
    "FACE_YMAX",
    "FACE_ZMIN",
    "FACE_ZMAX",
]

FACE_XMIN, FACE_XMAX = 1, 2
FACE_YMIN, FACE_YMAX = 4, 8
FACE_ZMIN, FACE_ZMAX = 16, 32

# Corner offsets (i, j, k) in VTK hexahedron order.
HEX_CORNERS = np.array(
    [[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0],
     [0, 0, 1], [1, 0, 1], [1, 1, 1], [0, 1, 1]]
)


@dataclass(frozen=True)
class UnitBlockGeometry:
    d: float = 5e-6  # via diameter (m)
    h: float = 50e-6  # block and via height (m)
    t: float = 0.5e-6  # liner thickness (m)
    p: float = 15e-6  # pitch (m)

    def __post_init__(self):
        for name in ("d", "h", "t", "p"):
            if not getattr(self, name) > 0:
                raise ValueError(f"geometry.{name} must be positive")
        if not self.d + 2 * self.t < self.p:
            raise ValueError("geometry: d + 2t must be smaller than the pitch p")


@dataclass(frozen=True)
class TensorGrid:
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray

    def __post_init__(self):
        for name in ("x", "y", "z"):
            a = np.asarray(getattr(self, name), dtype=np.float64)
            if a.ndim != 1 or a.size < 2:
                raise ValueError(f"grid axis {name} needs at least two coordinates")
            if np.any(np.diff(a) <= 0):
                raise ValueError(f"grid axis {name} must be strictly increasing")
            object.__setattr__(self, name, a)

    @property
    def shape(self) -> tuple[int, int, int]:
        """Element counts along x, y, z."""
        return self.x.size - 1, self.y.size - 1, self.z.size - 1


@dataclass(frozen=True, eq=False)
class HexMesh:
    """Structured hexahedral mesh.

    ``nodes`` are ordered with x fastest, then y, then z; ``elements`` hold
    eight node ids in VTK order and are ordered the same way. ``boundary``
    is a per-node bit mask of the FACE_* flags.
    """

    axes: TensorGrid
    nodes: np.ndarray
    elements: np.ndarray
    material: np.ndarray
    boundary: np.ndarray

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def n_elements(self) -> int:
        return self.elements.shape[0]

    @property
    def n_dofs(self) -> int:
        return 3 * self.n_nodes

    def boundary_nodes(self) -> np.ndarray:
        return np.flatnonzero(self.boundary)

    def element_volumes(self) -> np.ndarray:
        dx, dy, dz = (np.diff(a) for a in (self.axes.x, self.axes.y, self.axes.z))
        return np.einsum("k,j,i->kji", dz, dy, dx).ravel()

    def locate(self, points) -> np.ndarray:
        """Containing element of each point; points on shared faces go to the
        lowest element index. Returns -1 for points outside the mesh."""
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        nex, ney, nez = self.axes.shape
        idx = []
        inside = np.ones(pts.shape[0], dtype=bool)
        for a, coords, ne in ((0, self.axes.x, nex), (1, self.axes.y, ney), (2, self.axes.z, nez)):
            v = pts[:, a]
            inside &= (v >= coords[0]) & (v <= coords[-1])
            i = np.searchsorted(coords, v, side="left") - 1
            idx.append(np.clip(i, 0, ne - 1))
        e = (idx[2] * ney + idx[1]) * nex + idx[0]
        return np.where(inside, e, -1)


def _graded_sizes(length: float, fine: float, coarse: float, ratio: float) -> list[float]:
    """Cell sizes starting at ``fine`` and growing geometrically to at most
    ``coarse``, shrunk uniformly to cover ``length`` exactly."""
    sizes, total, s = [], 0.0, fine
    while total < length * (1 - 1e-12):
        sizes.append(s)
        total += s
        s = min(s * ratio, coarse)
    return [v * length / total for v in sizes]


def _symmetric_axis(geom: UnitBlockGeometry, target: float, ratio: float) -> np.ndarray:
    r_via = geom.d / 2
    r_liner = r_via + geom.t
    half = geom.p / 2
    fine = min(geom.t, target)
    n_liner = max(1, math.ceil(geom.t / target - 1e-9))
    copper = _graded_sizes(r_via, fine, target, ratio)[::-1]  # fine end at r_via
    liner = [geom.t / n_liner] * n_liner
    silicon = _graded_sizes(half - r_liner, fine, target, ratio)
    edges = np.concatenate([[0.0], np.cumsum(copper)])
    edges[-1] = r_via
    edges = np.concatenate([edges, r_via + np.cumsum(liner)])
    edges[-1] = r_liner
    edges = np.concatenate([edges, r_liner + np.cumsum(silicon)])
    edges[-1] = half
    right = half + edges
    left = half - edges[::-1]
    axis = np.concatenate([left[:-1], right])
    axis[0], axis[-1] = 0.0, geom.p
    return axis


def default_grading(
    geom: UnitBlockGeometry,
    target: float,
    nz: int | None = None,
    ratio: float = 1.5,
) -> TensorGrid:
    """Graded grid for one unit block.

    In x and y the spacing is smallest (``min(t, target)``) at the via and
    liner radii and grows by ``ratio`` up to ``target`` toward the via centre
    and the block edge; the liner always gets at least one layer. z is
    uniform with ``nz`` layers (default ``ceil(h / target)``).
    """
    if not target > 0:
        raise ValueError("target element size must be positive")
    if ratio < 1:
        raise ValueError("grading ratio must be >= 1")
    gap = geom.p / 2 - geom.d / 2 - geom.t
    if gap <= 1e-9 * geom.p:
        raise ValueError("geometry too tight for a graded grid")
    axis = _symmetric_axis(geom, target, ratio)
    if np.any(np.diff(axis) <= 0):
        raise ValueError("geometry too tight for a graded grid")
    if nz is None:
        nz = max(1, math.ceil(geom.h / target - 1e-9))
    z = np.linspace(0.0, geom.h, nz + 1)
    return TensorGrid(axis.copy(), axis.copy(), z)


def _structured_mesh(axes: TensorGrid, material: np.ndarray) -> HexMesh:
    x, y, z = axes.x, axes.y, axes.z
    nx, ny, nz = x.size, y.size, z.size
    Z, Y, X = np.meshgrid(z, y, x, indexing="ij")
    nodes = np.column_stack([X.ravel(), Y.ravel(), Z.ravel()])

    nex, ney, nez = nx - 1, ny - 1, nz - 1
    k, j, i = np.meshgrid(np.arange(nez), np.arange(ney), np.arange(nex), indexing="ij")
    i, j, k = i.ravel(), j.ravel(), k.ravel()
    off = HEX_CORNERS
    elements = ((k[:, None] + off[:, 2]) * ny + (j[:, None] + off[:, 1])) * nx + (i[:, None] + off[:, 0])

    K, J, I = np.meshgrid(np.arange(nz), np.arange(ny), np.arange(nx), indexing="ij")
    tags = (
        (I == 0) * FACE_XMIN + (I == nx - 1) * FACE_XMAX
        + (J == 0) * FACE_YMIN + (J == ny - 1) * FACE_YMAX
        + (K == 0) * FACE_ZMIN + (K == nz - 1) * FACE_ZMAX
    )
    return HexMesh(
        axes=axes,
        nodes=nodes,
        elements=elements.astype(np.int64),
        material=np.asarray(material, dtype=np.int8).ravel(),
        boundary=tags.ravel().astype(np.int8),
    )


def classify_elements(geom: UnitBlockGeometry, grid: TensorGrid) -> np.ndarray:
    """Material id per element (x fastest) from the centroid radius."""
    cx = 0.5 * (grid.x[1:] + grid.x[:-1]) - geom.p / 2
    cy = 0.5 * (grid.y[1:] + grid.y[:-1]) - geom.p / 2
    r = np.hypot(cx[None, :], cy[:, None])  # (ney, nex)
    layer = np.full(r.shape, SILICON, dtype=np.int8)
    layer[r < geom.d / 2 + geom.t] = LINER
    layer[r < geom.d / 2] = COPPER
    nez = grid.z.size - 1
    return np.broadcast_to(layer, (nez,) + layer.shape).ravel()


def build_unit_block_mesh(geom: UnitBlockGeometry, grid: TensorGrid, kind: str = "tsv") -> HexMesh:
    """Fine mesh of one unit block; ``kind="dummy"`` makes it all silicon."""
    for name, coords, ext in (("x", grid.x, geom.p), ("y", grid.y, geom.p), ("z", grid.z, geom.h)):
        if coords[0] != 0.0 or not math.isclose(coords[-1], ext, rel_tol=1e-12):
            raise ValueError(f"grid axis {name} must span [0, {ext}]")
    if kind == "tsv":
        material = classify_elements(geom, grid)
    elif kind == "dummy":
        material = np.full(np.prod(grid.shape), SILICON, dtype=np.int8)
    else:
        raise ValueError(f"unknown block kind {kind!r}")
    return _structured_mesh(grid, material)


def replicate_array_mesh(block: HexMesh, rows: int, cols: int, kinds=None) -> HexMesh:
    """Tile a unit-block mesh into a rows x cols array.

    Columns run along x, rows along y; cell (r, c) is translated by
    (c p, r p). Shared face nodes are merged by structured indexing. ``kinds``
    is a rows x cols nested sequence of "tsv"/"dummy" (default all "tsv").
    """
    if rows < 1 or cols < 1:
        raise ValueError("rows and cols must be >= 1")
    if kinds is None:
        kinds = [["tsv"] * cols for _ in range(rows)]
    kinds = np.asarray(kinds, dtype=object).reshape(rows, cols)
    ax = block.axes
    px, py = ax.x[-1] - ax.x[0], ax.y[-1] - ax.y[0]
    x = np.concatenate([ax.x[:-1] + c * px for c in range(cols)] + [[ax.x[-1] + (cols - 1) * px]])
    y = np.concatenate([ax.y[:-1] + r * py for r in range(rows)] + [[ax.y[-1] + (rows - 1) * py]])
    nex, ney, nez = ax.shape
    mat_block = block.material.reshape(nez, ney, nex)
    material = np.empty((nez, rows * ney, cols * nex), dtype=np.int8)
    for r in range(rows):
        for c in range(cols):
            sl = (slice(None), slice(r * ney, (r + 1) * ney), slice(c * nex, (c + 1) * nex))
            if kinds[r, c] == "tsv":
                material[sl] = mat_block
            elif kinds[r, c] == "dummy":
                material[sl] = SILICON
            else:
                raise ValueError(f"unknown block kind {kinds[r, c]!r}")
    return _structured_mesh(TensorGrid(x, y, ax.z.copy()), material)


def write_vtk(path, mesh: HexMesh, point_vectors: dict | None = None, cell_scalars: dict | None = None):
    """Write a legacy ASCII VTK unstructured grid (hexahedron cells)."""
    with open(path, "w") as fh:
        fh.write("# vtk DataFile Version 3.0\ntsvrom hex mesh\nASCII\nDATASET UNSTRUCTURED_GRID\n")
        fh.write(f"POINTS {mesh.n_nodes} double\n")
        np.savetxt(fh, mesh.nodes, fmt="%.17g")
        ne = mesh.n_elements
        fh.write(f"CELLS {ne} {9 * ne}\n")
        np.savetxt(fh, np.column_stack([np.full(ne, 8), mesh.elements]), fmt="%d")
        fh.write(f"CELL_TYPES {ne}\n")
        np.savetxt(fh, np.full(ne, 12), fmt="%d")
        fh.write(f"CELL_DATA {ne}\nSCALARS material int 1\nLOOKUP_TABLE default\n")
        np.savetxt(fh, mesh.material, fmt="%d")
        for name, vals in (cell_scalars or {}).items():
            fh.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
            np.savetxt(fh, np.asarray(vals).ravel(), fmt="%.17g")
        if point_vectors:
            fh.write(f"POINT_DATA {mesh.n_nodes}\n")
            for name, vals in point_vectors.items():
                fh.write(f"VECTORS {name} double\n")
                np.savetxt(fh, np.asarray(vals).reshape(-1, 3), fmt="%.17g")
