"""One-shot local stage: reduced-order model of a single unit block.

The block boundary displacement is restricted to tensor-product Lagrange
interpolants on equally spaced surface nodes. Each reduced DoF (one
component at one surface node) gets a basis field: the fine FEM solution
with that interpolant as Dirichlet data and no thermal load. One extra field
carries the unit thermal load with a clamped boundary. The interior block of
the stiffness matrix is factorized once and reused for all of them.
"""

from __future__ import annotations

import hashlib
import itertools
import struct
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .fem import assemble
from .linalg import factorize_spd, solve_factored
from .materials import Material, MaterialTable
from .mesh import HexMesh, TensorGrid, UnitBlockGeometry, build_unit_block_mesh

__all__ = [
    "NodeLayout",
    "ReducedOrderModel",
    "RomFormatError",
    "FingerprintWarning",
    "lagrange_1d",
    "lagrange_3d",
    "num_element_dofs",
    "build_interpolation_operator",
    "build_rom",
    "fingerprint",
    "save_rom",
    "load_rom",
]

MAGIC = b"MRST"
FORMAT_VERSION = 1
KIND_CODES = {"tsv": 0, "dummy": 1}


class RomFormatError(ValueError):
    """Malformed or incompatible ROM file."""


class FingerprintWarning(UserWarning):
    pass


def num_element_dofs(nx: int, ny: int, nz: int) -> int:
    """Number of reduced DoFs of a block with (nx, ny, nz) surface nodes."""
    if min(nx, ny, nz) < 2:
        raise ValueError("at least two interpolation nodes per axis are required")
    return (nx * ny * nz - (nx - 2) * (ny - 2) * (nz - 2)) * 3


def lagrange_1d(coords, i: int, x):
    """1D Lagrange cardinal polynomial of node ``i`` evaluated at ``x``."""
    coords = np.asarray(coords, dtype=np.float64)
    if np.unique(coords).size != coords.size:
        raise ValueError("interpolation node coordinates must be distinct")
    if not 0 <= i < coords.size:
        raise IndexError("node index out of range")
    x = np.asarray(x, dtype=np.float64)
    w = np.ones_like(x)
    for m, cm in enumerate(coords):
        if m != i:
            w = w * (x - cm) / (coords[i] - cm)
    return w


@dataclass(frozen=True)
class NodeLayout:
    nx: int
    ny: int
    nz: int
    p: float
    h: float

    def __post_init__(self):
        if min(self.nx, self.ny, self.nz) < 2:
            raise ValueError("interpolation.n_x, n_y, n_z must be >= 2")

    @property
    def counts(self) -> tuple[int, int, int]:
        return self.nx, self.ny, self.nz

    @property
    def x(self) -> np.ndarray:
        return np.linspace(0.0, self.p, self.nx)

    @property
    def y(self) -> np.ndarray:
        return np.linspace(0.0, self.p, self.ny)

    @property
    def z(self) -> np.ndarray:
        return np.linspace(0.0, self.h, self.nz)

    @cached_property
    def surface_nodes(self) -> np.ndarray:
        """(i, j, k) of every surface node, lexicographic; shape (m, 3)."""
        out = [
            t for t in itertools.product(range(self.nx), range(self.ny), range(self.nz))
            if t[0] in (0, self.nx - 1) or t[1] in (0, self.ny - 1) or t[2] in (0, self.nz - 1)
        ]
        return np.array(out, dtype=np.int64)

    @property
    def n_dofs(self) -> int:
        return num_element_dofs(self.nx, self.ny, self.nz)

    def node_coordinates(self) -> np.ndarray:
        ijk = self.surface_nodes
        return np.column_stack([self.x[ijk[:, 0]], self.y[ijk[:, 1]], self.z[ijk[:, 2]]])

    def weights(self, points) -> np.ndarray:
        """Lagrange weights (P, m) of every surface node at each point."""
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        per_axis = []
        for a, coords in enumerate((self.x, self.y, self.z)):
            per_axis.append(np.column_stack([lagrange_1d(coords, i, pts[:, a]) for i in range(coords.size)]))
        ijk = self.surface_nodes
        return per_axis[0][:, ijk[:, 0]] * per_axis[1][:, ijk[:, 1]] * per_axis[2][:, ijk[:, 2]]


def lagrange_3d(layout: NodeLayout, node, point) -> float:
    """Tensor-product weight of interpolation node (i, j, k) at ``point``."""
    i, j, k = node
    x, y, z = point
    return float(
        lagrange_1d(layout.x, i, x) * lagrange_1d(layout.y, j, y) * lagrange_1d(layout.z, k, z)
    )


def build_interpolation_operator(mesh: HexMesh, layout: NodeLayout):
    """Sparse L mapping reduced DoFs to fine boundary DoFs.

    Returns ``(L, boundary_dofs)``; row r of L is fine DoF ``boundary_dofs[r]``.
    Components are not coupled.
    """
    bnodes = mesh.boundary_nodes()
    if bnodes.size == 0:
        raise ValueError("mesh carries no boundary tags")
    W = layout.weights(mesh.nodes[bnodes])
    L = sp.kron(sp.csr_matrix(W), sp.identity(3, format="csr"), format="csr")
    L.eliminate_zeros()
    bdofs = (3 * bnodes[:, None] + np.arange(3)).ravel()
    return L, bdofs


def fingerprint(geometry: UnitBlockGeometry, grid: TensorGrid, materials: MaterialTable,
                layout: NodeLayout) -> bytes:
    """SHA-256 over everything that determines a ROM apart from its kind."""
    h = hashlib.sha256()
    h.update(struct.pack("<4d", geometry.d, geometry.h, geometry.t, geometry.p))
    for axis in (grid.x, grid.y, grid.z):
        h.update(struct.pack("<I", axis.size))
        h.update(np.ascontiguousarray(axis, dtype="<f8").tobytes())
    for mat_id, (_, m) in enumerate(materials.items()):
        h.update(struct.pack("<B3d", mat_id, m.E, m.nu, m.alpha))
    h.update(struct.pack("<3I", layout.nx, layout.ny, layout.nz))
    return h.digest()


@dataclass(eq=False)
class ReducedOrderModel:
    kind: str
    geometry: UnitBlockGeometry
    grid: TensorGrid
    materials: MaterialTable
    layout: NodeLayout
    basis: np.ndarray  # (fine dofs, n) coefficient vectors of the basis fields
    thermal: np.ndarray  # coefficients of the unit thermal field
    A_element: np.ndarray  # (n, n)
    b_element: np.ndarray  # (n,) for a unit thermal load
    fingerprint: bytes

    @property
    def n(self) -> int:
        return self.A_element.shape[0]

    @cached_property
    def mesh(self) -> HexMesh:
        return build_unit_block_mesh(self.geometry, self.grid, self.kind)

    def reconstruct(self, v, delta_t: float) -> np.ndarray:
        """Fine displacement coefficients for reduced values ``v`` and load ``delta_t``."""
        v = np.asarray(v, dtype=np.float64)
        if v.shape != (self.n,):
            raise ValueError(f"expected {self.n} reduced values, got {v.shape}")
        return delta_t * self.thermal + self.basis @ v


def build_rom(mesh: HexMesh, mats: MaterialTable, layout: NodeLayout, kind: str,
              geometry: UnitBlockGeometry | None = None, threads: int = 1,
              batch: int = 64) -> ReducedOrderModel:
    """Run the local stage for one block kind."""
    ax = mesh.axes
    if not (ax.x[0] == 0 and ax.y[0] == 0 and ax.z[0] == 0
            and np.isclose(ax.x[-1], layout.p) and np.isclose(ax.y[-1], layout.p)
            and np.isclose(ax.z[-1], layout.h)):
        raise ValueError("interpolation layout does not match the block extents")
    if geometry is None:
        raise ValueError("block geometry is required to fingerprint the model")

    A, b = assemble(mesh, mats, 1.0, threads=threads)
    L, bdofs = build_interpolation_operator(mesh, layout)
    free = np.ones(mesh.n_dofs, dtype=bool)
    free[bdofs] = False
    fdofs = np.flatnonzero(free)
    A_f = A[fdofs]
    A_ff = A_f[:, fdofs].tocsc()
    A_fb = A_f[:, bdofs].tocsr()
    factor = factorize_spd(A_ff)

    thermal = np.zeros(mesh.n_dofs)
    thermal[fdofs] = solve_factored(factor, b[fdofs])

    n = layout.n_dofs
    basis = np.zeros((mesh.n_dofs, n))
    Ld = L.toarray()
    basis[bdofs] = Ld
    rhs = -(A_fb @ Ld)

    def solve_cols(start):
        return start, solve_factored(factor, rhs[:, start:start + batch])

    starts = range(0, n, batch)
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(solve_cols, starts))
    else:
        parts = [solve_cols(s) for s in starts]
    for start, cols in parts:
        basis[fdofs, start:start + cols.shape[1]] = cols

    A_element = basis.T @ (A @ basis)
    A_element = 0.5 * (A_element + A_element.T)
    b_element = basis.T @ b
    return ReducedOrderModel(
        kind=kind,
        geometry=geometry,
        grid=mesh.axes,
        materials=mats,
        layout=layout,
        basis=basis,
        thermal=thermal,
        A_element=A_element,
        b_element=b_element,
        fingerprint=fingerprint(geometry, mesh.axes, mats, layout),
    )


def save_rom(rom: ReducedOrderModel, path) -> None:
    """Write the little-endian binary ROM file."""
    head = bytearray()
    head += MAGIC
    head += struct.pack("<IB", FORMAT_VERSION, KIND_CODES[rom.kind])
    g = rom.geometry
    head += struct.pack("<4d", g.d, g.h, g.t, g.p)
    for axis in (rom.grid.x, rom.grid.y, rom.grid.z):
        head += struct.pack("<I", axis.size)
        head += np.ascontiguousarray(axis, dtype="<f8").tobytes()
    for mat_id, (_, m) in enumerate(rom.materials.items()):
        head += struct.pack("<B3d", mat_id, m.E, m.nu, m.alpha)
    lay = rom.layout
    head += struct.pack("<3I", lay.nx, lay.ny, lay.nz)
    head += rom.fingerprint
    with open(path, "wb") as fh:
        fh.write(bytes(head))
        fh.write(np.asfortranarray(rom.basis, dtype="<f8").tobytes(order="F"))
        fh.write(np.ascontiguousarray(rom.thermal, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(rom.A_element, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(rom.b_element, dtype="<f8").tobytes())


class _Reader:
    def __init__(self, data: bytes):
        self.data, self.pos = data, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise RomFormatError("corrupt length: file is truncated")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def array(self, count: int) -> np.ndarray:
        return np.frombuffer(self.take(8 * count), dtype="<f8").astype(np.float64)


def load_rom(path, expected_fingerprint: bytes | None = None) -> ReducedOrderModel:
    """Read a ROM file, validating magic, version, length and fingerprint.

    A FingerprintWarning is issued when ``expected_fingerprint`` (e.g. derived
    from the current run configuration) differs from the stored one.
    """
    with open(path, "rb") as fh:
        r = _Reader(fh.read())
    if r.take(4) != MAGIC:
        raise RomFormatError("bad magic: not a ROM file")
    version, kind_code = r.unpack("<IB")
    if version != FORMAT_VERSION:
        raise RomFormatError(f"unsupported ROM format version {version}")
    kinds = {v: k for k, v in KIND_CODES.items()}
    if kind_code not in kinds:
        raise RomFormatError(f"unknown block kind code {kind_code}")
    d, h, t, p = r.unpack("<4d")
    axes = []
    for _ in range(3):
        (count,) = r.unpack("<I")
        axes.append(r.array(count))
    mats = []
    for expected_id in range(3):
        mat_id, E, nu, alpha = r.unpack("<B3d")
        if mat_id != expected_id:
            raise RomFormatError("material table out of order")
        mats.append(Material(E, nu, alpha))
    nx, ny, nz = r.unpack("<3I")
    stored = r.take(32)
    try:
        geometry = UnitBlockGeometry(d, h, t, p)
        grid = TensorGrid(*axes)
        layout = NodeLayout(nx, ny, nz, p, h)
    except ValueError as exc:
        raise RomFormatError(f"invalid header: {exc}") from exc
    materials = MaterialTable(*mats)
    n = layout.n_dofs
    n_fine = 3 * axes[0].size * axes[1].size * axes[2].size
    body = 8 * (n_fine * n + n_fine + n * n + n)
    if len(r.data) - r.pos != body:
        raise RomFormatError(
            f"corrupt length: expected {body} body bytes, found {len(r.data) - r.pos}"
        )
    basis = r.array(n_fine * n).reshape((n_fine, n), order="F")
    thermal = r.array(n_fine)
    A_element = r.array(n * n).reshape(n, n)
    b_element = r.array(n)
    if fingerprint(geometry, grid, materials, layout) != stored:
        raise RomFormatError("fingerprint does not match header contents")
    if expected_fingerprint is not None and expected_fingerprint != stored:
        warnings.warn(
            f"ROM {path} was built for a different configuration", FingerprintWarning, stacklevel=2
        )
    return ReducedOrderModel(
        kind=kinds[kind_code],
        geometry=geometry,
        grid=grid,
        materials=materials,
        layout=layout,
        basis=np.ascontiguousarray(basis),
        thermal=thermal,
        A_element=A_element,
        b_element=b_element,
        fingerprint=stored,
    )
