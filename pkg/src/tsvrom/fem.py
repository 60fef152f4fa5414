"""Linear thermoelastic trilinear hexahedra.

Stress and strain use Voigt order (xx, yy, zz, xy, yz, zx) with engineering
shear strains, so ``sigma . eps`` is the tensor contraction. DoFs are
node-major with components x, y, z.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np
import scipy.sparse as sp

from .materials import Material, MaterialTable, lame_parameters
from .mesh import HEX_CORNERS, HexMesh

__all__ = [
    "lame_parameters",
    "elasticity_matrix",
    "shape_gradients",
    "element_stiffness",
    "element_thermal_load",
    "assemble",
    "apply_dirichlet_lifting",
    "strain_operator",
    "evaluate_stress",
    "evaluate_stress_points",
    "von_mises",
    "DegenerateElementError",
]

_REF = 2.0 * HEX_CORNERS - 1.0  # reference corner coordinates in {-1, 1}^3
_GAUSS = np.array([-1.0, 1.0]) / np.sqrt(3.0)
_HYDRO = np.array([1.0, 1.0, 1.0, 0.0, 0.0, 0.0])


class DegenerateElementError(ValueError):
    def __init__(self, message, element=None):
        self.element = element
        super().__init__(message if element is None else f"element {element}: {message}")


def elasticity_matrix(mat: Material) -> np.ndarray:
    """6x6 isotropic stiffness in Voigt form (engineering shear)."""
    lam, mu = lame_parameters(mat.E, mat.nu)
    D = np.zeros((6, 6))
    D[:3, :3] = lam
    D[np.arange(3), np.arange(3)] += 2.0 * mu
    D[np.arange(3, 6), np.arange(3, 6)] = mu
    return D


def _dN_dref(xi: float, eta: float, zeta: float) -> np.ndarray:
    """Derivatives of the 8 trilinear shape functions w.r.t. (xi, eta, zeta); (3, 8)."""
    a, b, c = _REF[:, 0], _REF[:, 1], _REF[:, 2]
    return 0.125 * np.array([
        a * (1 + b * eta) * (1 + c * zeta),
        b * (1 + a * xi) * (1 + c * zeta),
        c * (1 + a * xi) * (1 + b * eta),
    ])


def shape_gradients(corners, ref_point):
    """Physical shape-function gradients (3, 8) and det J at a reference point."""
    dN = _dN_dref(*ref_point)
    J = dN @ corners  # J[a, b] = d x_b / d ref_a
    det = np.linalg.det(J)
    if not det > 0:
        raise DegenerateElementError(f"non-positive Jacobian determinant {det:.3e}")
    return np.linalg.solve(J, dN), det


def _strain_matrix(grad: np.ndarray) -> np.ndarray:
    """6 x 24 strain-displacement matrix from (3, 8) gradients."""
    B = np.zeros((6, 24))
    gx, gy, gz = grad
    B[0, 0::3] = gx
    B[1, 1::3] = gy
    B[2, 2::3] = gz
    B[3, 0::3], B[3, 1::3] = gy, gx
    B[4, 1::3], B[4, 2::3] = gz, gy
    B[5, 0::3], B[5, 2::3] = gz, gx
    return B


def _gauss_points():
    for xi in _GAUSS:
        for eta in _GAUSS:
            for zeta in _GAUSS:
                yield (xi, eta, zeta)


def element_stiffness(corners, mat: Material) -> np.ndarray:
    """24x24 element stiffness with 2x2x2 Gauss quadrature."""
    corners = np.asarray(corners, dtype=np.float64).reshape(8, 3)
    D = elasticity_matrix(mat)
    K = np.zeros((24, 24))
    for gp in _gauss_points():
        grad, det = shape_gradients(corners, gp)
        B = _strain_matrix(grad)
        K += B.T @ D @ B * det
    return 0.5 * (K + K.T)


def element_thermal_load(corners, mat: Material, delta_t: float = 1.0) -> np.ndarray:
    """Thermal load vector: integral of alpha (3 lam + 2 mu) dT 1 : eps(phi)."""
    corners = np.asarray(corners, dtype=np.float64).reshape(8, 3)
    s = mat.thermal_modulus * delta_t * _HYDRO
    b = np.zeros(24)
    for gp in _gauss_points():
        grad, det = shape_gradients(corners, gp)
        b += _strain_matrix(grad).T @ s * det
    return b


def _box_corners(dims) -> np.ndarray:
    return HEX_CORNERS * np.asarray(dims, dtype=np.float64)


def _element_dofs(elements: np.ndarray) -> np.ndarray:
    return (3 * elements[:, :, None] + np.arange(3)).reshape(-1, 24)


def _unique_element_kinds(mesh: HexMesh):
    """Group axis-aligned box elements by (size, material)."""
    nodes, el = mesh.nodes, mesh.elements
    dims = nodes[el[:, 6]] - nodes[el[:, 0]]
    if np.any(dims <= 0):
        bad = int(np.flatnonzero(np.any(dims <= 0, axis=1))[0])
        raise DegenerateElementError("non-positive volume", bad)
    # sizes that differ only by translation round-off share one matrix
    quantum = 1e-10 * float(np.ptp(nodes, axis=0).max())
    keys = np.column_stack([np.round(dims / quantum), mesh.material.astype(np.float64)])
    _, first, inverse = np.unique(keys, axis=0, return_index=True, return_inverse=True)
    uniq = np.column_stack([dims[first], mesh.material[first].astype(np.float64)])
    return uniq, inverse.ravel()


def _node_pattern(elements: np.ndarray, n_nodes: int):
    """Sorted node-pair keys ``a * n_nodes + b`` of every element coupling."""
    pairs = (elements[:, :, None].astype(np.int64) * n_nodes + elements[:, None, :]).ravel()
    return np.unique(pairs)


def assemble(mesh: HexMesh, mats: MaterialTable, delta_t=1.0, threads: int = 1,
             chunk: int = 32768):
    """Global stiffness (CSR) and thermal load for ``delta_t`` (scalar or per element).

    Two passes: the node-coupling pattern first, then 3x3 block values
    summed per pattern slot in element order, so the result is bitwise
    independent of ``threads`` (which only parallelise the slot lookup).
    Elements of equal size and material share one element matrix.
    """
    uniq, kind = _unique_element_kinds(mesh)
    Ke = np.empty((len(uniq), 24, 24))
    be = np.empty((len(uniq), 24))
    for u, key in enumerate(uniq):
        corners = _box_corners(key[:3])
        mat = mats[int(key[3])]
        Ke[u] = element_stiffness(corners, mat)
        be[u] = element_thermal_load(corners, mat, 1.0)
    # (kind, a, b, 3, 3) node blocks of each element matrix
    Kb = Ke.reshape(len(uniq), 8, 3, 8, 3).transpose(0, 1, 3, 2, 4)

    el = mesh.elements
    n_nodes = mesh.n_nodes
    keys = _node_pattern(el, n_nodes)
    nnzb = keys.size
    rows_b = keys // n_nodes
    cols_b = (keys % n_nodes).astype(np.int32)
    indptr = np.zeros(n_nodes + 1, dtype=np.int64)
    np.cumsum(np.bincount(rows_b, minlength=n_nodes), out=indptr[1:])
    del rows_b

    def positions(start):
        e = el[start:start + chunk].astype(np.int64)
        return np.searchsorted(keys, (e[:, :, None] * n_nodes + e[:, None, :]).ravel())

    starts = range(0, mesh.n_elements, chunk)
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            pos = np.concatenate(list(pool.map(positions, starts)))
    else:
        pos = np.concatenate([positions(s) for s in starts])
    data = np.empty((nnzb, 3, 3))
    for r in range(3):
        for c in range(3):
            data[:, r, c] = np.bincount(pos, weights=Kb[:, :, :, r, c][kind].ravel(), minlength=nnzb)
    del pos
    del keys
    A = sp.bsr_matrix((data, cols_b, indptr),
                      shape=(mesh.n_dofs, mesh.n_dofs)).tocsr()
    del data
    A.sort_indices()

    dofs = _element_dofs(el)
    dt = np.broadcast_to(np.asarray(delta_t, dtype=np.float64), (mesh.n_elements,))
    b = np.bincount(dofs.ravel(), weights=(be[kind] * dt[:, None]).ravel(), minlength=mesh.n_dofs)
    return A, b


def apply_dirichlet_lifting(A, b, bc_dofs, bc_values=None):
    """Symmetric lifting of Dirichlet constraints.

    ``bc_dofs`` is either a mapping {dof: value} or an index array with
    ``bc_values`` alongside. Constrained rows and columns are zeroed with a
    unit diagonal; the column contributions move to the right-hand side.
    """
    if isinstance(bc_dofs, dict):
        items = sorted(bc_dofs.items())
        bc_dofs = np.array([k for k, _ in items], dtype=np.int64)
        bc_values = np.array([v for _, v in items], dtype=np.float64)
    bc_dofs = np.asarray(bc_dofs, dtype=np.int64).ravel()
    bc_values = np.broadcast_to(np.asarray(bc_values, dtype=np.float64), bc_dofs.shape)
    n = A.shape[0]
    b = np.asarray(b, dtype=np.float64)
    if bc_dofs.size == 0:
        return sp.csr_matrix(A, copy=True), b.copy()
    if np.unique(bc_dofs).size != bc_dofs.size:
        raise ValueError("a DoF is constrained more than once")
    if bc_dofs.min() < 0 or bc_dofs.max() >= n:
        raise IndexError("constrained DoF out of range")
    g = np.zeros(n)
    g[bc_dofs] = bc_values
    free = np.ones(n, dtype=bool)
    free[bc_dofs] = False
    b_lift = b - A @ g
    b_lift[bc_dofs] = bc_values
    # mask constrained rows and columns on a copy, keeping the pattern compact
    A_lift = sp.csr_matrix(A, dtype=np.float64, copy=True)
    A_lift.sum_duplicates()
    rows = np.repeat(np.arange(n), np.diff(A_lift.indptr))
    fixed_entry = ~(free[rows] & free[A_lift.indices])
    on_diag = rows == A_lift.indices
    A_lift.data[fixed_entry] = 0.0
    A_lift.data[fixed_entry & on_diag] = 1.0
    missing = np.setdiff1d(bc_dofs, rows[fixed_entry & on_diag])
    del rows, fixed_entry, on_diag
    A_lift.eliminate_zeros()
    if missing.size:
        A_lift = (A_lift + sp.csr_matrix((np.ones(missing.size), (missing, missing)), shape=(n, n))).tocsr()
    A_lift.sort_indices()
    return A_lift, b_lift


def strain_operator(mesh: HexMesh, points, elements=None):
    """Sparse operator (6 P x ndof) giving engineering strain at points.

    Row ``6 p + c`` holds Voigt component c at point p. Elements are
    axis-aligned boxes, so the reference coordinates follow by scaling.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if elements is None:
        elements = mesh.locate(pts)
    elements = np.asarray(elements)
    if np.any(elements < 0):
        bad = pts[int(np.flatnonzero(elements < 0)[0])]
        raise ValueError(f"point {tuple(bad)} lies outside the mesh")
    conn = mesh.elements[elements]
    lo = mesh.nodes[conn[:, 0]]
    hi = mesh.nodes[conn[:, 6]]
    size = hi - lo
    ref = 2.0 * (pts - lo) / size - 1.0
    xi, eta, zeta = ref.T
    a, b, c = _REF[:, 0], _REF[:, 1], _REF[:, 2]
    fa = 1 + a[None] * xi[:, None]
    fb = 1 + b[None] * eta[:, None]
    fc = 1 + c[None] * zeta[:, None]
    gx = 0.125 * a[None] * fb * fc * (2.0 / size[:, 0:1])
    gy = 0.125 * b[None] * fa * fc * (2.0 / size[:, 1:2])
    gz = 0.125 * c[None] * fa * fb * (2.0 / size[:, 2:3])

    P = pts.shape[0]
    zero = np.zeros_like(gx)
    # per Voigt row: (component, gradient) pairs
    voigt_terms = [
        [(0, gx)], [(1, gy)], [(2, gz)],
        [(0, gy), (1, gx)], [(1, gz), (2, gy)], [(0, gz), (2, gx)],
    ]
    rows, cols, vals = [], [], []
    for comp_row, terms in enumerate(voigt_terms):
        for comp, g in terms:
            rows.append(np.repeat(6 * np.arange(P) + comp_row, 8))
            cols.append((3 * conn + comp).ravel())
            vals.append((g + zero).ravel())
    return sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(6 * P, mesh.n_dofs),
    ), elements


def evaluate_stress_points(field, mesh: HexMesh, points, mats: MaterialTable, delta_t=0.0,
                           operator=None):
    """Stress (P, 6) at points from a nodal displacement field.

    ``delta_t`` is a scalar or per-element array. A precomputed
    ``operator = strain_operator(mesh, points)`` may be passed for reuse.
    """
    field = np.asarray(field, dtype=np.float64)
    if field.shape[0] != mesh.n_dofs:
        raise ValueError("displacement field does not match the mesh")
    G, elements = operator if operator is not None else strain_operator(mesh, points)
    eps = (G @ field).reshape(-1, 6)
    mat_ids = mesh.material[elements]
    dt = np.broadcast_to(np.asarray(delta_t, dtype=np.float64), (mesh.n_elements,))[elements]
    sigma = np.empty_like(eps)
    for mid in np.unique(mat_ids):
        sel = mat_ids == mid
        mat = mats[int(mid)]
        sigma[sel] = eps[sel] @ elasticity_matrix(mat).T
        sigma[sel] -= np.outer(mat.thermal_modulus * dt[sel], _HYDRO)
    return sigma


def evaluate_stress(field, mesh: HexMesh, point, mats: MaterialTable, delta_t=0.0) -> np.ndarray:
    """Stress tensor (Voigt 6-vector) at a single point."""
    return evaluate_stress_points(field, mesh, np.reshape(point, (1, 3)), mats, delta_t)[0]


def von_mises(sigma) -> np.ndarray:
    """Von Mises equivalent stress of Voigt stress vector(s)."""
    s = np.asarray(sigma, dtype=np.float64)
    sxx, syy, szz, sxy, syz, szx = (s[..., i] for i in range(6))
    return np.sqrt(
        0.5 * ((sxx - syy) ** 2 + (syy - szz) ** 2 + (szz - sxx) ** 2)
        + 3.0 * (sxy**2 + syz**2 + szx**2)
    )
