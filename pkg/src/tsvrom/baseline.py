"""Reference fine-mesh solver and the linear-superposition estimator.

The reference meshes the whole array at the unit-block resolution and solves
it with preconditioned conjugate gradients; it is the ground truth for every
error figure. The superposition estimator solves one via in a halo of
silicon blocks, subtracts the via-free solution, and adds the resulting
perturbation tensors of all vias in an array on top of one background.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .fem import apply_dirichlet_lifting, assemble, evaluate_stress_points, strain_operator, von_mises
from .global_stage import ArrayLayout, GlobalBC
from .linalg import IterOptions, iterative_solve, relative_residual
from .materials import MaterialTable
from .mesh import HexMesh, TensorGrid, UnitBlockGeometry, build_unit_block_mesh, replicate_array_mesh
from .stressgrid import StressGrid, block_plane_points

__all__ = [
    "ReferenceSolution",
    "SuperpositionModel",
    "DofCapExceeded",
    "reference_solve",
    "superposition_single_solve",
    "superposition_field",
    "normalized_mae",
]


class DofCapExceeded(RuntimeError):
    pass


@dataclass(eq=False)
class ReferenceSolution:
    field: np.ndarray
    mesh: HexMesh
    stress: np.ndarray  # (rows, cols, res, res, 6) on the mid-height plane
    grid: StressGrid
    iterations: int
    residual: float
    wall_s: float
    dofs: int
    matrix_bytes: int


def _element_cells(mesh: HexMesh, block_shape, layout: ArrayLayout) -> tuple:
    nex, ney, nez = block_shape
    e = np.arange(mesh.n_elements)
    i = e % (nex * layout.cols)
    j = (e // (nex * layout.cols)) % (ney * layout.rows)
    return j // ney, i // nex


def reference_solve(layout: ArrayLayout, bc: GlobalBC, geometry: UnitBlockGeometry,
                    grid: TensorGrid, mats: MaterialTable, opts: IterOptions | None = None,
                    resolution: int = 100, dof_cap: int = 3_000_000,
                    threads: int = 1) -> ReferenceSolution:
    """Full fine-mesh solve of the array with the same boundary conditions."""
    opts = opts or IterOptions(tol=1e-10, preconditioner="diagonal")
    t0 = time.perf_counter()
    nx, ny, nz = (a.size for a in (grid.x, grid.y, grid.z))
    n_dofs = 3 * ((nx - 1) * layout.cols + 1) * ((ny - 1) * layout.rows + 1) * nz
    if n_dofs > dof_cap:
        raise DofCapExceeded(
            f"reference model needs {n_dofs} DoFs, above the cap of {dof_cap}; "
            "reduce the array size or coarsen the grid"
        )
    block = build_unit_block_mesh(geometry, grid, "tsv")
    mesh = replicate_array_mesh(block, layout.rows, layout.cols, layout.kinds)
    rr, cc = _element_cells(mesh, grid.shape, layout)
    dt_elem = layout.delta_t[rr, cc]
    A, b = assemble(mesh, mats, dt_elem, threads=threads)

    if bc.kind == "clamped":
        z = mesh.nodes[:, 2]
        nodes = np.flatnonzero((z == mesh.axes.z[0]) | (z == mesh.axes.z[-1]))
        values = np.zeros((nodes.size, 3))
    else:
        nodes = mesh.boundary_nodes()
        values = np.asarray(bc.field(mesh.nodes[nodes]), dtype=np.float64).reshape(-1, 3)
    dofs = (3 * nodes[:, None] + np.arange(3)).ravel()
    A_l, b_l = apply_dirichlet_lifting(A, b, dofs, values.ravel())
    del A, b
    res = iterative_solve(A_l, b_l, opts)
    residual = relative_residual(A_l, res.x, b_l)
    matrix_bytes = A_l.data.nbytes + A_l.indices.nbytes + A_l.indptr.nbytes
    del A_l, b_l

    stress = _array_cutplane(res.x, mesh, layout, mats, dt_elem, resolution)
    return ReferenceSolution(
        field=res.x,
        mesh=mesh,
        stress=stress,
        grid=StressGrid(von_mises(stress), layout.pitch),
        iterations=res.iterations,
        residual=residual,
        wall_s=time.perf_counter() - t0,
        dofs=mesh.n_dofs,
        matrix_bytes=matrix_bytes,
    )


def _array_cutplane(u, mesh, layout, mats, dt_elem, resolution):
    local = block_plane_points(resolution, layout.pitch, layout.height / 2)
    out = np.empty((layout.rows, layout.cols, resolution, resolution, 6))
    for r, c in layout.cells:
        pts = local + np.array([c * layout.pitch, r * layout.pitch, 0.0])
        sigma = evaluate_stress_points(u, mesh, pts, mats, dt_elem,
                                       operator=strain_operator(mesh, pts))
        out[r, c] = sigma.reshape(resolution, resolution, 6)
    return out


@dataclass(eq=False)
class SuperpositionModel:
    """Perturbation tensors of one via over a (2m+1)^2 neighbourhood.

    ``perturbation[dr + m, dc + m]`` is the stress change, on the raster of
    the block offset by (dr, dc) from the via, caused by that via.
    ``background`` is the via-free stress on the central block's raster.
    Both are for a temperature change of ``delta_t``.
    """

    perturbation: np.ndarray  # (2m+1, 2m+1, res, res, 6)
    background: np.ndarray  # (res, res, 6)
    halo: int
    pitch: float
    delta_t: float

    @property
    def resolution(self) -> int:
        return self.background.shape[0]

    def edge_decay(self) -> float:
        """Peak perturbation von Mises on the outermost ring over the overall peak."""
        vm = von_mises(self.perturbation)
        ring = np.ones(vm.shape[:2], dtype=bool)
        ring[1:-1, 1:-1] = False
        peak = vm.max()
        return float(vm[ring].max() / peak) if peak > 0 else 0.0


def superposition_single_solve(geometry: UnitBlockGeometry, grid: TensorGrid, mats: MaterialTable,
                               halo: int = 2, delta_t: float = -250.0,
                               opts: IterOptions | None = None, resolution: int = 100,
                               threads: int = 1) -> SuperpositionModel:
    """Single-via and via-free solves on a clamped (2m+1)^2 block domain."""
    if halo < 1:
        raise ValueError("superposition halo must be >= 1")
    size = 2 * halo + 1
    kinds = np.full((size, size), "dummy", dtype=object)
    kinds[halo, halo] = "tsv"
    bc = GlobalBC("clamped")
    single = reference_solve(ArrayLayout(size, size, geometry.p, geometry.h, kinds, delta_t),
                             bc, geometry, grid, mats, opts, resolution, threads=threads)
    bare = reference_solve(ArrayLayout(size, size, geometry.p, geometry.h, "dummy", delta_t),
                           bc, geometry, grid, mats, opts, resolution, threads=threads)
    return SuperpositionModel(
        perturbation=single.stress - bare.stress,
        background=bare.stress[halo, halo].copy(),
        halo=halo,
        pitch=geometry.p,
        delta_t=float(delta_t),
    )


def superposition_stress(model: SuperpositionModel, layout: ArrayLayout) -> np.ndarray:
    m = model.halo
    res = model.resolution
    out = np.empty((layout.rows, layout.cols, res, res, 6))
    scale = layout.delta_t / model.delta_t if model.delta_t != 0 else np.zeros_like(layout.delta_t)
    tsv = [(r, c) for r, c in layout.cells if layout.kinds[r, c] == "tsv"]
    for r, c in layout.cells:
        acc = scale[r, c] * model.background
        for rs, cs in tsv:
            dr, dc = r - rs, c - cs
            if abs(dr) <= m and abs(dc) <= m:
                acc = acc + scale[rs, cs] * model.perturbation[dr + m, dc + m]
        out[r, c] = acc
    return out


def superposition_field(model: SuperpositionModel, layout: ArrayLayout) -> StressGrid:
    """Superposed tensors per raster point, converted to von Mises."""
    if model.halo < 1:
        raise ValueError("superposition halo must be >= 1")
    return StressGrid(von_mises(superposition_stress(model, layout)), layout.pitch)


def normalized_mae(a: StressGrid, truth: StressGrid) -> float:
    """Mean absolute difference normalised by the maximum of ``truth``."""
    va = a.values if isinstance(a, StressGrid) else np.asarray(a)
    vb = truth.values if isinstance(truth, StressGrid) else np.asarray(truth)
    if va.shape != vb.shape:
        raise ValueError(f"grid shape mismatch: {va.shape} vs {vb.shape}")
    peak = vb.max()
    if not peak > 0:
        raise ValueError("ground-truth grid has zero maximum")
    return float(np.mean(np.abs(va - vb)) / peak)
