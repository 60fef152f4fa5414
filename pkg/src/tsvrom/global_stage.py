"""Global stage: unit blocks as abstract elements of an array.

Each block contributes its dense reduced stiffness and unit thermal load
(scaled by the block's temperature change). Interpolation nodes shared by
neighbouring blocks are identified through integer lattice positions, so no
coordinate matching is involved.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.interpolate import RegularGridInterpolator

from .fem import apply_dirichlet_lifting, evaluate_stress_points, strain_operator, von_mises
from .linalg import (
    ConvergenceError,
    IterOptions,
    factorize_spd,
    iterative_solve,
    relative_residual,
    solve_factored,
)
from .rom import NodeLayout, ReducedOrderModel
from .stressgrid import StressGrid, block_plane_points

log = logging.getLogger(__name__)

__all__ = [
    "ArrayLayout",
    "GlobalIndex",
    "GlobalSystem",
    "GlobalBC",
    "SubmodelBoundaryField",
    "GlobalSolution",
    "index_global_nodes",
    "assemble_global",
    "apply_global_bcs",
    "solve_global",
    "reconstruct_block_field",
    "cutplane_stress",
    "cutplane_von_mises",
    "run_global_stage",
    "pad_with_dummies",
]


@dataclass(eq=False)
class ArrayLayout:
    """rows x cols blocks; row index runs along y, column index along x."""

    rows: int
    cols: int
    pitch: float
    height: float
    kinds: np.ndarray = None
    delta_t: np.ndarray = None

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ValueError("layout.rows and layout.cols must be >= 1")
        shape = (self.rows, self.cols)
        kinds = "tsv" if self.kinds is None else self.kinds
        self.kinds = np.array(np.broadcast_to(np.asarray(kinds, dtype=object), shape))
        bad = set(self.kinds.ravel()) - {"tsv", "dummy"}
        if bad:
            raise ValueError(f"unknown block kinds {sorted(bad)}")
        dt = 0.0 if self.delta_t is None else self.delta_t
        self.delta_t = np.array(np.broadcast_to(np.asarray(dt, dtype=np.float64), shape))
        if not np.all(np.isfinite(self.delta_t)):
            raise ValueError("thermal loads must be finite")

    @property
    def cells(self):
        return [(r, c) for r in range(self.rows) for c in range(self.cols)]

    def kinds_used(self) -> list[str]:
        return sorted(set(self.kinds.ravel()))


def pad_with_dummies(layout: ArrayLayout, rings: int) -> ArrayLayout:
    """Surround an array with ``rings`` rings of dummy blocks (same load as the
    nearest original block)."""
    if rings < 0:
        raise ValueError("dummy ring count must be >= 0")
    if rings == 0:
        return layout
    kinds = np.pad(layout.kinds, rings, constant_values="dummy")
    dt = np.pad(layout.delta_t, rings, mode="edge")
    return ArrayLayout(layout.rows + 2 * rings, layout.cols + 2 * rings, layout.pitch,
                       layout.height, kinds, dt)


@dataclass(eq=False)
class GlobalIndex:
    layout: NodeLayout
    lattice: np.ndarray  # (m_global, 3) integer lattice position per global node
    cell_nodes: np.ndarray  # (n_cells, m_local) global node per local surface node
    cell_dofs: np.ndarray  # (n_cells, n) global reduced DoF per local reduced DoF
    shape: tuple  # lattice extent (NX, NY, NZ)

    @property
    def n_dofs(self) -> int:
        return 3 * self.lattice.shape[0]

    def node_coordinates(self, pitch: float, height: float) -> np.ndarray:
        nl = self.layout
        q = self.lattice
        cx, i = np.divmod(q[:, 0], nl.nx - 1)
        cy, j = np.divmod(q[:, 1], nl.ny - 1)
        x = cx * pitch + nl.x[i]
        y = cy * pitch + nl.y[j]
        return np.column_stack([x, y, nl.z[q[:, 2]]])


def index_global_nodes(layout: ArrayLayout, nl: NodeLayout) -> GlobalIndex:
    """Identify interpolation nodes shared between blocks by lattice position."""
    ijk = nl.surface_nodes
    NX = layout.cols * (nl.nx - 1) + 1
    NY = layout.rows * (nl.ny - 1) + 1
    NZ = nl.nz
    keys = []
    for r, c in layout.cells:
        gx = c * (nl.nx - 1) + ijk[:, 0]
        gy = r * (nl.ny - 1) + ijk[:, 1]
        keys.append((gx * NY + gy) * NZ + ijk[:, 2])
    keys = np.array(keys)
    uniq, inverse = np.unique(keys, return_inverse=True)
    cell_nodes = inverse.reshape(keys.shape)
    gx, rem = np.divmod(uniq, NY * NZ)
    gy, gz = np.divmod(rem, NZ)
    cell_dofs = (3 * cell_nodes[:, :, None] + np.arange(3)).reshape(keys.shape[0], -1)
    return GlobalIndex(nl, np.column_stack([gx, gy, gz]), cell_nodes, cell_dofs, (NX, NY, NZ))


@dataclass(eq=False)
class GlobalSystem:
    A: sp.csr_matrix
    b: np.ndarray
    constrained: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    values: np.ndarray = field(default_factory=lambda: np.zeros(0))


def _check_roms(roms: dict, layout: ArrayLayout):
    prints = {rom.fingerprint for rom in roms.values()}
    if len(prints) > 1:
        raise ValueError("ROM fingerprint mismatch: tsv and dummy models differ in configuration")
    for kind in layout.kinds_used():
        if kind not in roms:
            raise ValueError(f"no ROM loaded for block kind {kind!r}")
        rom = roms[kind]
        if not (np.isclose(rom.geometry.p, layout.pitch) and np.isclose(rom.geometry.h, layout.height)):
            raise ValueError("ROM fingerprint mismatch: pitch/height differ from the layout")


def assemble_global(roms: dict, layout: ArrayLayout, index: GlobalIndex) -> GlobalSystem:
    """Scatter per-block reduced stiffness and load into the global system."""
    _check_roms(roms, layout)
    n_glob = index.n_dofs
    rows, cols, vals = [], [], []
    b = np.zeros(n_glob)
    for cell, (r, c) in enumerate(layout.cells):
        rom = roms[layout.kinds[r, c]]
        d = index.cell_dofs[cell]
        rows.append(np.repeat(d, d.size))
        cols.append(np.tile(d, d.size))
        vals.append(rom.A_element.ravel())
        np.add.at(b, d, layout.delta_t[r, c] * rom.b_element)
    A = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n_glob, n_glob)
    ).tocsr()
    A.sum_duplicates()
    A.sort_indices()
    return GlobalSystem(A, b)


class SubmodelBoundaryField:
    """Displacement samples on a rectilinear grid, trilinearly interpolated.

    ``values`` has shape (len(x), len(y), len(z), 3).
    """

    def __init__(self, x, y, z, values):
        self.axes = tuple(np.asarray(a, dtype=np.float64) for a in (x, y, z))
        self.values = np.asarray(values, dtype=np.float64)
        expected = tuple(a.size for a in self.axes) + (3,)
        if self.values.shape != expected:
            raise ValueError(f"sample block has shape {self.values.shape}, expected {expected}")
        for a in self.axes:
            if a.size < 2 or np.any(np.diff(a) <= 0):
                raise ValueError("sample axes must be strictly increasing with >= 2 entries")
        self._interp = RegularGridInterpolator(self.axes, self.values, method="linear")

    @classmethod
    def from_function(cls, x, y, z, fn):
        X, Y, Z = np.meshgrid(x, y, z, indexing="ij")
        pts = np.column_stack([X.ravel(), Y.ravel(), Z.ravel()])
        return cls(x, y, z, np.asarray(fn(pts)).reshape(X.shape + (3,)))

    def __call__(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64)).copy()
        for a, axis in enumerate(self.axes):
            tol = 1e-9 * (axis[-1] - axis[0])
            v = pts[:, a]
            outside = (v < axis[0] - tol) | (v > axis[-1] + tol)
            if outside.any():
                bad = pts[int(np.flatnonzero(outside)[0])]
                raise ValueError(
                    f"sub-model field does not cover boundary node at "
                    f"({bad[0]:.6g}, {bad[1]:.6g}, {bad[2]:.6g})"
                )
            pts[:, a] = np.clip(v, axis[0], axis[-1])
        return self._interp(pts)

    def save(self, path) -> None:
        """Structured text format (see README)."""
        with open(path, "w") as fh:
            fh.write("# tsvrom submodel field v1\n")
            for name, axis in zip("xyz", self.axes):
                fh.write(f"{name} " + " ".join(f"{v:.17g}" for v in axis) + "\n")
            fh.write("# ux uy uz, x slowest, z fastest\n")
            np.savetxt(fh, self.values.reshape(-1, 3), fmt="%.17g")

    @classmethod
    def load(cls, path) -> "SubmodelBoundaryField":
        """Read the structured text format, or a CSV with header x,y,z,ux,uy,uz
        whose points fill a complete rectilinear grid."""
        with open(path) as fh:
            first = fh.readline().strip()
            if first.replace(" ", "") == "x,y,z,ux,uy,uz":
                data = np.loadtxt(fh, delimiter=",", ndmin=2)
                return cls._from_points(data, path)
            axes, rows = {}, []
            for line in [first, *fh]:
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                head = line.split()[0]
                if head in ("x", "y", "z"):
                    axes[head] = np.array(line.split()[1:], dtype=np.float64)
                else:
                    rows.append(line.split())
        if set(axes) != {"x", "y", "z"}:
            raise ValueError(f"{path}: missing coordinate axis lines")
        vals = np.array(rows, dtype=np.float64)
        shape = (axes["x"].size, axes["y"].size, axes["z"].size, 3)
        if vals.size != np.prod(shape):
            raise ValueError(f"{path}: expected {np.prod(shape) // 3} samples, found {vals.size // 3}")
        return cls(axes["x"], axes["y"], axes["z"], vals.reshape(shape))

    @classmethod
    def _from_points(cls, data, path):
        if data.shape[1] != 6:
            raise ValueError(f"{path}: expected 6 columns")
        axes = [np.unique(data[:, a]) for a in range(3)]
        shape = tuple(a.size for a in axes)
        if data.shape[0] != np.prod(shape):
            raise ValueError(f"{path}: CSV points do not form a complete rectilinear grid")
        idx = [np.searchsorted(axes[a], data[:, a]) for a in range(3)]
        values = np.full(shape + (3,), np.nan)
        values[idx[0], idx[1], idx[2]] = data[:, 3:]
        if np.isnan(values).any():
            raise ValueError(f"{path}: duplicate grid points")
        return cls(*axes, values)


@dataclass
class GlobalBC:
    """``kind`` is "clamped" (top and bottom fixed) or "submodel" (every outer
    boundary node follows ``field``, a callable points -> (P, 3))."""

    kind: str = "clamped"
    field: object = None

    def __post_init__(self):
        if self.kind not in ("clamped", "submodel"):
            raise ValueError(f"unknown boundary condition {self.kind!r}")
        if self.kind == "submodel" and self.field is None:
            raise ValueError("sub-model boundary condition needs a displacement field")


def global_constraints(bc: GlobalBC, index: GlobalIndex, layout: ArrayLayout):
    """Constrained global DoFs and their prescribed values."""
    q = index.lattice
    NX, NY, NZ = index.shape
    on_z = (q[:, 2] == 0) | (q[:, 2] == NZ - 1)
    if bc.kind == "clamped":
        nodes = np.flatnonzero(on_z)
        values = np.zeros((nodes.size, 3))
    else:
        outer = on_z | (q[:, 0] == 0) | (q[:, 0] == NX - 1) | (q[:, 1] == 0) | (q[:, 1] == NY - 1)
        nodes = np.flatnonzero(outer)
        coords = index.node_coordinates(layout.pitch, layout.height)[nodes]
        values = np.asarray(bc.field(coords), dtype=np.float64).reshape(-1, 3)
    dofs = (3 * nodes[:, None] + np.arange(3)).ravel()
    return dofs, values.ravel()


def apply_global_bcs(system: GlobalSystem, bc: GlobalBC, index: GlobalIndex,
                     layout: ArrayLayout) -> GlobalSystem:
    dofs, values = global_constraints(bc, index, layout)
    A, b = apply_dirichlet_lifting(system.A, system.b, dofs, values)
    return GlobalSystem(A, b, dofs, values)


@dataclass
class SolveInfo:
    iterations: int
    residual: float
    method: str


def solve_global(system: GlobalSystem, opts: IterOptions | None = None):
    """Iterative solve of the lifted global system with a direct fallback.

    Returns ``(u, info)``; the residual in ``info`` is recomputed from u.
    """
    opts = opts or IterOptions()
    if system.constrained.size == system.A.shape[0]:
        u = np.zeros(system.A.shape[0])
        u[system.constrained] = system.values
        return u, SolveInfo(0, relative_residual(system.A, u, system.b), "prescribed")
    try:
        res = iterative_solve(system.A, system.b, opts)
        u, iters, method = res.x, res.iterations, opts.method
    except ConvergenceError as exc:
        log.warning("global iterative solve failed (%s); falling back to direct", exc)
        u = solve_factored(factorize_spd(system.A), system.b)
        iters, method = exc.iterations, "direct"
    return u, SolveInfo(iters, relative_residual(system.A, u, system.b), method)


def reconstruct_block_field(rom: ReducedOrderModel, v, delta_t: float) -> np.ndarray:
    """Fine-mesh displacement of one block from its reduced values."""
    return rom.reconstruct(v, delta_t)


def cutplane_stress(u, layout: ArrayLayout, roms: dict, index: GlobalIndex,
                    resolution: int = 100, z: float | None = None, threads: int = 1) -> np.ndarray:
    """Stress tensors (rows, cols, res, res, 6) on the plane ``z`` (default h/2)."""
    z = layout.height / 2 if z is None else z
    pts = block_plane_points(resolution, layout.pitch, z)
    ops = {kind: strain_operator(rom.mesh, pts) for kind, rom in roms.items()
           if kind in layout.kinds_used()}
    out = np.empty((layout.rows, layout.cols, resolution, resolution, 6))

    def one(cell):
        r, c = layout.cells[cell]
        kind = layout.kinds[r, c]
        rom = roms[kind]
        dt = layout.delta_t[r, c]
        field = reconstruct_block_field(rom, u[index.cell_dofs[cell]], dt)
        sigma = evaluate_stress_points(field, rom.mesh, pts, rom.materials, dt, operator=ops[kind])
        out[r, c] = sigma.reshape(resolution, resolution, 6)

    cells = range(len(layout.cells))
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            list(pool.map(one, cells))
    else:
        for cell in cells:
            one(cell)
    return out


def cutplane_von_mises(u, layout: ArrayLayout, roms: dict, index: GlobalIndex,
                       resolution: int = 100, threads: int = 1) -> StressGrid:
    sigma = cutplane_stress(u, layout, roms, index, resolution, threads=threads)
    return StressGrid(von_mises(sigma), layout.pitch)


@dataclass(eq=False)
class GlobalSolution:
    u: np.ndarray
    index: GlobalIndex
    system: GlobalSystem
    info: SolveInfo
    grid: StressGrid


def run_global_stage(roms: dict, layout: ArrayLayout, bc: GlobalBC,
                     opts: IterOptions | None = None, resolution: int = 100,
                     threads: int = 1) -> GlobalSolution:
    """Index, assemble, constrain, solve and sample the cut plane."""
    nl = next(iter(roms.values())).layout
    index = index_global_nodes(layout, nl)
    system = apply_global_bcs(assemble_global(roms, layout, index), bc, index, layout)
    u, info = solve_global(system, opts)
    grid = cutplane_von_mises(u, layout, roms, index, resolution, threads)
    return GlobalSolution(u, index, system, info, grid)
