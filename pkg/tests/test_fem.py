import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from tsvrom.fem import (
    DegenerateElementError,
    apply_dirichlet_lifting,
    assemble,
    element_stiffness,
    element_thermal_load,
    evaluate_stress,
    evaluate_stress_points,
    von_mises,
)
from tsvrom.linalg import factorize_spd, solve_factored
from tsvrom.materials import SILICON, Material, MaterialTable
from tsvrom.mesh import HEX_CORNERS, TensorGrid, build_unit_block_mesh

from .oracles import oracle_stiffness, oracle_thermal

UNIT = HEX_CORNERS.astype(float)


SHEARED = UNIT @ np.array([[2.0, 0.0, 0.0], [0.3, 1.5, 0.0], [0.1, -0.2, 0.7]])


class TestElement:
    @pytest.mark.parametrize("corners", [UNIT, UNIT * [2.0, 0.5, 3.0], SHEARED])
    @pytest.mark.parametrize("mat", [Material(1.0, 0.0, 1.0), Material(130e9, 0.28, 2.8e-6)])
    def test_stiffness_matches_oracle(self, corners, mat):
        K = element_stiffness(corners, mat)
        Ko = oracle_stiffness(corners, mat)
        assert np.abs(K - Ko).max() <= 1e-12 * np.abs(Ko).max()

    @pytest.mark.parametrize("corners", [UNIT, SHEARED])
    def test_thermal_matches_oracle(self, corners):
        mat = Material(1.0, 0.0, 1.0)
        b = element_thermal_load(corners, mat)
        bo = oracle_thermal(corners, mat)
        assert np.abs(b - bo).max() <= 1e-12 * np.abs(bo).max()

    def test_symmetric_and_rigid(self):
        K = element_stiffness(SHEARED, Material(110e9, 0.35, 17e-6))
        assert np.abs(K - K.T).max() <= 1e-12 * np.abs(K).max()
        for a in range(3):
            u = np.zeros(24)
            u[a::3] = 1.0
            assert np.abs(K @ u).max() <= 1e-10 * np.abs(K).max()
        # infinitesimal rotation about z
        x = SHEARED
        u = np.column_stack([-x[:, 1], x[:, 0], np.zeros(8)]).ravel()
        assert np.abs(K @ u).max() <= 1e-10 * np.abs(K).max() * np.abs(x).max()

    def test_rank(self):
        K = element_stiffness(UNIT, Material(1.0, 0.3, 0.0))
        ev = np.linalg.eigvalsh(K)
        assert np.sum(ev < 1e-12 * ev.max()) == 6

    def test_thermal_zero_alpha(self):
        assert np.all(element_thermal_load(UNIT, Material(1.0, 0.3, 0.0)) == 0)

    def test_thermal_linear_in_dt(self):
        mat = Material(1.0, 0.3, 1e-5)
        np.testing.assert_allclose(element_thermal_load(UNIT, mat, 2.0),
                                   2.0 * element_thermal_load(UNIT, mat, 1.0), rtol=1e-15)

    def test_degenerate(self):
        flat = UNIT.copy()
        flat[:, 2] = 0.0
        with pytest.raises(DegenerateElementError):
            element_stiffness(flat, Material(1.0, 0.3, 0.0))
        with pytest.raises(DegenerateElementError):
            element_thermal_load(UNIT[[1, 0, 3, 2, 5, 4, 7, 6]], Material(1.0, 0.3, 0.0))


def _single_element_mesh(dims):
    return build_unit_block_mesh_like(TensorGrid([0, dims[0]], [0, dims[1]], [0, dims[2]]))


def build_unit_block_mesh_like(grid, material=SILICON):
    from tsvrom.mesh import _structured_mesh

    return _structured_mesh(grid, np.full(np.prod(grid.shape), material))


class TestAssemble:
    def test_single_element(self):
        mesh = _single_element_mesh((2.0, 1.0, 0.5))
        mats = MaterialTable()
        A, b = assemble(mesh, mats)
        corners = mesh.nodes[mesh.elements[0]]
        Ke = element_stiffness(corners, mats[SILICON])
        dofs = (3 * mesh.elements[0][:, None] + np.arange(3)).ravel()
        np.testing.assert_allclose(A.toarray()[np.ix_(dofs, dofs)], Ke, rtol=1e-14, atol=0)
        np.testing.assert_allclose(b[dofs], element_thermal_load(corners, mats[SILICON]), rtol=1e-14)

    def test_matches_naive_scatter(self, geometry, uniform_grid, mats):
        mesh = build_unit_block_mesh(geometry, uniform_grid)
        A, b = assemble(mesh, mats, delta_t=-250.0)
        # reference: dense loop over elements
        n = mesh.n_dofs
        Ad = np.zeros((n, n))
        bd = np.zeros(n)
        for e, conn in enumerate(mesh.elements):
            corners = mesh.nodes[conn]
            mat = mats[int(mesh.material[e])]
            d = (3 * conn[:, None] + np.arange(3)).ravel()
            Ad[np.ix_(d, d)] += element_stiffness(corners, mat)
            bd[d] += element_thermal_load(corners, mat, -250.0)
        assert np.abs(A.toarray() - Ad).max() <= 1e-12 * np.abs(Ad).max()
        assert np.abs(b - bd).max() <= 1e-12 * np.abs(bd).max()

    def test_properties(self, geometry, uniform_grid, mats):
        mesh = build_unit_block_mesh(geometry, uniform_grid)
        A, _ = assemble(mesh, mats)
        assert A.has_canonical_format
        assert abs(A - A.T).max() == 0
        scale = abs(A).max()
        for a in range(3):
            u = np.zeros(mesh.n_dofs)
            u[a::3] = 1.0
            assert np.abs(A @ u).max() <= 1e-9 * scale
        ev = np.linalg.eigvalsh(A.toarray())
        assert np.sum(np.abs(ev) < 1e-9 * ev.max()) == 6
        assert ev.min() > -1e-9 * ev.max()

    def test_pattern_follows_connectivity(self, mats):
        # two elements far apart in a 3x1x1 row: end elements share no node
        grid = TensorGrid([0, 1.0, 2.0, 3.0], [0, 1.0], [0, 1.0])
        from tsvrom.mesh import _structured_mesh

        mesh = _structured_mesh(grid, np.array([0, 2, 2]))
        A, _ = assemble(mesh, mats)
        adj = np.zeros((mesh.n_nodes, mesh.n_nodes), dtype=bool)
        for conn in mesh.elements:
            adj[np.ix_(conn, conn)] = True
        node_pattern = np.abs(A.toarray()).reshape(mesh.n_nodes, 3, mesh.n_nodes, 3).sum(axis=(1, 3)) > 0
        assert np.array_equal(node_pattern, adj)

    def test_thread_count_bitwise(self, geometry, coarse_grid, mats):
        mesh = build_unit_block_mesh(geometry, coarse_grid)
        A1, b1 = assemble(mesh, mats, threads=1, chunk=500)
        A4, b4 = assemble(mesh, mats, threads=4, chunk=500)
        assert A1.data.tobytes() == A4.data.tobytes()
        assert np.array_equal(A1.indices, A4.indices)
        assert b1.tobytes() == b4.tobytes()

    def test_per_element_dt(self, geometry, uniform_grid, mats):
        mesh = build_unit_block_mesh(geometry, uniform_grid)
        _, b1 = assemble(mesh, mats, 1.0)
        _, b2 = assemble(mesh, mats, np.full(mesh.n_elements, -3.0))
        assert np.abs(b2 + 3.0 * b1).max() <= 1e-14 * np.abs(b2).max()


class TestLifting:
    def test_bar_1d(self):
        A = sp.csr_matrix(np.array([[1.0, -1, 0], [-1, 2, -1], [0, -1, 1]]))
        Al, bl = apply_dirichlet_lifting(A, np.zeros(3), {0: 0.0, 2: 1.0})
        x = np.linalg.solve(Al.toarray(), bl)
        assert x.tolist() == [0.0, 0.5, 1.0]
        assert abs(Al - Al.T).max() == 0

    def test_all_constrained(self):
        A = sp.csr_matrix(np.array([[2.0, -1], [-1, 2]]))
        g = np.array([0.3, -0.7])
        Al, bl = apply_dirichlet_lifting(A, np.ones(2), np.arange(2), g)
        np.testing.assert_array_equal(np.linalg.solve(Al.toarray(), bl), g)

    def test_no_constraints(self):
        A = sp.csr_matrix(np.array([[2.0, -1], [-1, 2]]))
        b = np.array([1.0, 2.0])
        Al, bl = apply_dirichlet_lifting(A, b, [], [])
        assert (Al != A).nnz == 0 and np.array_equal(bl, b)

    def test_duplicates_rejected(self):
        with pytest.raises(ValueError):
            apply_dirichlet_lifting(sp.identity(3, format="csr"), np.zeros(3), [1, 1], [0.0, 0.0])

    def test_missing_diagonal(self):
        A = sp.csr_matrix(np.array([[0.0, 1], [1, 2]]))
        A.eliminate_zeros()
        Al, bl = apply_dirichlet_lifting(A, np.zeros(2), [0], [4.0])
        np.testing.assert_array_equal(Al.toarray(), [[1.0, 0], [0, 2]])
        np.testing.assert_array_equal(bl, [4.0, -4.0])

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**31), st.integers(1, 11))
    def test_matches_row_elimination(self, seed, k):
        rng = np.random.default_rng(seed)
        M = rng.standard_normal((12, 12))
        A = M @ M.T + 12 * np.eye(12)
        b = rng.standard_normal(12)
        fixed = rng.choice(12, size=k, replace=False)
        g = rng.standard_normal(k)
        Al, bl = apply_dirichlet_lifting(sp.csr_matrix(A), b, fixed, g)
        # row-only elimination solved directly
        free = np.setdiff1d(np.arange(12), fixed)
        x_ref = np.zeros(12)
        x_ref[fixed] = g
        x_ref[free] = np.linalg.solve(A[np.ix_(free, free)], b[free] - A[np.ix_(free, fixed)] @ g)
        x = solve_factored(factorize_spd(Al), bl)
        np.testing.assert_allclose(x, x_ref, rtol=1e-10, atol=1e-12)


def _solve_with_boundary(mesh, mats, dt, fn):
    A, b = assemble(mesh, mats, dt)
    nodes = mesh.boundary_nodes()
    vals = fn(mesh.nodes[nodes])
    dofs = (3 * nodes[:, None] + np.arange(3)).ravel()
    Al, bl = apply_dirichlet_lifting(A, b, dofs, vals.ravel())
    return solve_factored(factorize_spd(Al), bl)


class TestPatch:
    def test_affine_patch(self, geometry, coarse_grid, mats):
        mesh = build_unit_block_mesh(geometry, coarse_grid, "dummy")
        M = np.array([[1e-3, 2e-4, -1e-4], [3e-4, -2e-3, 5e-4], [0.0, 1e-4, 1e-3]])
        c = np.array([1e-7, -2e-7, 3e-7])
        u = _solve_with_boundary(mesh, mats, 0.0, lambda r: r @ M.T + c)
        exact = (mesh.nodes @ M.T + c).ravel()
        assert np.abs(u - exact).max() <= 1e-9 * np.abs(exact).max()

    def test_thermal_patch(self, geometry, coarse_grid, mats):
        mesh = build_unit_block_mesh(geometry, coarse_grid, "dummy")
        si = mats[SILICON]
        dt = -250.0
        r0 = np.array([geometry.p / 2, geometry.p / 2, 0.0])
        u = _solve_with_boundary(mesh, mats, dt, lambda r: si.alpha * dt * (r - r0))
        pts = np.random.default_rng(0).uniform([0, 0, 0], [geometry.p, geometry.p, geometry.h], (200, 3))
        vm = von_mises(evaluate_stress_points(u, mesh, pts, mats, dt))
        assert vm.max() <= 1e-6 * si.thermal_modulus * abs(dt)

    def test_linear_scaling(self, geometry, coarse_grid, mats):
        mesh = build_unit_block_mesh(geometry, coarse_grid)
        u1 = _solve_with_boundary(mesh, mats, -100.0, lambda r: 1e-3 * r[:, [1, 2, 0]])
        u3 = _solve_with_boundary(mesh, mats, -300.0, lambda r: 3e-3 * r[:, [1, 2, 0]])
        assert np.abs(u3 - 3 * u1).max() <= 1e-12 * np.abs(u3).max() * 10

    def test_lifted_system_spd(self, geometry, coarse_grid, mats):
        mesh = build_unit_block_mesh(geometry, coarse_grid)
        A, b = assemble(mesh, mats)
        nodes = mesh.boundary_nodes()
        dofs = (3 * nodes[:, None] + np.arange(3)).ravel()
        Al, _ = apply_dirichlet_lifting(A, b, dofs, np.zeros(dofs.size))
        factorize_spd(Al)


class TestStress:
    @pytest.fixture
    def cube(self):
        return build_unit_block_mesh_like(TensorGrid([0, 1.0, 2.0], [0, 1.0], [0, 1.0]))

    def test_free_expansion(self, cube):
        mats = MaterialTable()
        si = mats[SILICON]
        dt = -250.0
        u = (si.alpha * dt * (cube.nodes - [0.3, 0.2, 0.1])).ravel()
        s = evaluate_stress(u, cube, [0.7, 0.4, 0.5], mats, dt)
        assert np.abs(s).max() <= 1e-9 * abs(si.thermal_modulus * dt)

    def test_hydrostatic(self, cube):
        mats = MaterialTable()
        s = evaluate_stress(np.zeros(cube.n_dofs), cube, [1.5, 0.5, 0.5], mats, 10.0)
        k = mats[SILICON].thermal_modulus * 10.0
        np.testing.assert_allclose(s, [-k, -k, -k, 0, 0, 0], rtol=1e-14)

    def test_uniaxial_strain(self, cube):
        mats = MaterialTable()
        si = mats[SILICON]
        u = np.zeros((cube.n_nodes, 3))
        u[:, 0] = cube.nodes[:, 0]
        s = evaluate_stress(u.ravel(), cube, [0.25, 0.5, 0.75], mats, 0.0)
        np.testing.assert_allclose(s, [si.lam + 2 * si.mu, si.lam, si.lam, 0, 0, 0], rtol=1e-12, atol=1e-3)

    def test_outside(self, cube):
        with pytest.raises(ValueError, match="outside"):
            evaluate_stress(np.zeros(cube.n_dofs), cube, [3.0, 0.5, 0.5], MaterialTable())

    def test_tie_uses_lowest_element(self):
        from tsvrom.mesh import _structured_mesh

        mesh = _structured_mesh(TensorGrid([0, 1.0, 2.0], [0, 1.0], [0, 1.0]), np.array([0, 2]))
        mats = MaterialTable()
        s = evaluate_stress(np.zeros(mesh.n_dofs), mesh, [1.0, 0.5, 0.5], mats, 1.0)
        assert s[0] == pytest.approx(-mats[0].thermal_modulus)


class TestVonMises:
    def test_examples(self):
        assert von_mises([5.0, 5, 5, 0, 0, 0]) == 0
        assert von_mises([-7.0, 0, 0, 0, 0, 0]) == pytest.approx(7.0)
        assert von_mises([0, 0, 0, 2.0, 0, 0]) == pytest.approx(2.0 * np.sqrt(3))

    @given(arrays(np.float64, 6, elements=st.floats(-1e9, 1e9)), st.floats(-1e9, 1e9))
    def test_pressure_invariant(self, s, p):
        shifted = s + p * np.array([1, 1, 1, 0, 0, 0])
        assert von_mises(shifted) == pytest.approx(von_mises(s), rel=1e-6, abs=1e-6 * 1e9)
        assert von_mises(s) >= 0

    @settings(max_examples=50)
    @given(arrays(np.float64, 6, elements=st.floats(-1e3, 1e3)),
           arrays(np.float64, 3, elements=st.floats(-np.pi, np.pi)))
    def test_rotation_invariant(self, s, angles):
        from scipy.spatial.transform import Rotation

        R = Rotation.from_euler("xyz", angles).as_matrix()
        T = np.array([[s[0], s[3], s[5]], [s[3], s[1], s[4]], [s[5], s[4], s[2]]])
        Tr = R @ T @ R.T
        sr = [Tr[0, 0], Tr[1, 1], Tr[2, 2], Tr[0, 1], Tr[1, 2], Tr[0, 2]]
        assert von_mises(sr) == pytest.approx(von_mises(s), rel=1e-9, abs=1e-9)
