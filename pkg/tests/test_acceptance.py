"""End-to-end acceptance checks, one test per criterion.

Each test prints a single PASS/FAIL line; the lines are repeated in the
terminal summary. The convergence, dominance and pitch cases use the
default 2 µm grading on a 4x4 array and take several minutes.
"""

import numpy as np
import pytest

from tsvrom.baseline import normalized_mae, reference_solve, superposition_field, superposition_single_solve
from tsvrom.cli import main, read_run_log
from tsvrom.fem import assemble
from tsvrom.global_stage import ArrayLayout, GlobalBC, SubmodelBoundaryField, run_global_stage
from tsvrom.linalg import IterOptions
from tsvrom.materials import MaterialTable
from tsvrom.mesh import UnitBlockGeometry, build_unit_block_mesh, default_grading
from tsvrom.rom import (
    NodeLayout,
    RomFormatError,
    build_rom,
    load_rom,
    num_element_dofs,
    save_rom,
)
from tsvrom import stressgrid

from .report import record

DT = -250.0
MATS = MaterialTable()


def make_rom(geom, grid, k, kind="tsv"):
    nl = NodeLayout(k, k, k, geom.p, geom.h)
    return build_rom(build_unit_block_mesh(geom, grid, kind), MATS, nl, kind, geometry=geom)


class DeskCase:
    """4x4 clamped TSV array on the default grading at one pitch."""

    def __init__(self, pitch):
        self.geom = UnitBlockGeometry(p=pitch)
        self.grid = default_grading(self.geom, 2e-6)
        self.layout = ArrayLayout(4, 4, self.geom.p, self.geom.h, "tsv", DT)
        self.bc = GlobalBC("clamped")
        self.reference = reference_solve(self.layout, self.bc, self.geom, self.grid, MATS)
        self._mor = {}
        self._sup = None

    def mor_error(self, k):
        if k not in self._mor:
            rom = make_rom(self.geom, self.grid, k)
            sol = run_global_stage({"tsv": rom}, self.layout, self.bc)
            self._mor[k] = normalized_mae(sol.grid, self.reference.grid)
        return self._mor[k]

    def superposition_error(self):
        if self._sup is None:
            model = superposition_single_solve(self.geom, self.grid, MATS, halo=2, delta_t=DT)
            self._sup = normalized_mae(superposition_field(model, self.layout), self.reference.grid)
        return self._sup


@pytest.fixture(scope="module")
def desk15():
    return DeskCase(15e-6)


@pytest.fixture(scope="module")
def desk10():
    return DeskCase(10e-6)


@pytest.fixture(scope="module")
def small_geom():
    geom = UnitBlockGeometry()
    return geom, default_grading(geom, 5e-6, nz=8)


def test_c01_element_dof_table():
    got = [num_element_dofs(k, k, k) for k in range(2, 7)]
    record(1, "element DoF count", got == [24, 78, 168, 294, 456], f"n = {got}")


def test_c02_single_block_exactness(small_geom):
    geom, grid = small_geom
    rom = make_rom(geom, grid, 4)
    rng = np.random.default_rng(7)
    nodal = rng.uniform(-2e-8, 2e-8, size=(rom.layout.surface_nodes.shape[0], 3))

    def interpolant(points):
        return rom.layout.weights(points) @ nodal

    dt = -137.0
    layout = ArrayLayout(1, 1, geom.p, geom.h, "tsv", dt)
    bc = GlobalBC("submodel", interpolant)
    sol = run_global_stage({"tsv": rom}, layout, bc)
    ref = reference_solve(layout, bc, geom, grid, MATS, IterOptions(tol=1e-13, max_iter=50_000))
    err = normalized_mae(sol.grid, ref.grid)
    record(2, "single-block exactness", err <= 1e-9, f"normalized MAE = {err:.3e} (bound 1e-9)")


def test_c03_thermal_patch(small_geom):
    geom, grid = small_geom
    rom = make_rom(geom, grid, 4, "dummy")
    si = MATS[2]
    P = 3 * geom.p
    field = SubmodelBoundaryField.from_function([0, P], [0, P], [0, geom.h],
                                                lambda x: si.alpha * DT * x)
    layout = ArrayLayout(3, 3, geom.p, geom.h, "dummy", DT)
    sol = run_global_stage({"dummy": rom}, layout, GlobalBC("submodel", field), IterOptions(tol=1e-13))
    peak = sol.grid.values.max()
    bound = 1e-6 * si.thermal_modulus * abs(DT)
    record(3, "thermal patch", peak <= bound, f"max von Mises = {peak:.3e} Pa (bound {bound:.3e} Pa)")


@pytest.mark.slow
def test_c04_convergence(desk15):
    errs = [desk15.mor_error(k) for k in (2, 3, 4, 5)]
    decreasing = all(b < a for a, b in zip(errs, errs[1:]))
    ok = decreasing and errs[2] <= 0.03
    text = ", ".join(f"({k},{k},{k}) {e:.2%}" for k, e in zip((2, 3, 4, 5), errs))
    record(4, "convergence", ok, f"{text}; strictly decreasing = {decreasing}, (4,4,4) bound 3%")


@pytest.mark.slow
def test_c05_baseline_dominance(desk10):
    mor, sup = desk10.mor_error(4), desk10.superposition_error()
    record(5, "baseline dominance", 3 * mor <= sup,
           f"p=10 µm MOR {mor:.2%} vs superposition {sup:.2%} (ratio {sup / mor:.2f}, need >= 3)")


@pytest.mark.slow
def test_c06_pitch_sensitivity(desk10, desk15):
    s10, s15 = desk10.superposition_error(), desk15.superposition_error()
    m10, m15 = desk10.mor_error(4), desk15.mor_error(4)
    ok = s10 > s15 and abs(m10 - m15) < 0.01
    record(6, "pitch sensitivity", ok,
           f"superposition {s15:.2%} -> {s10:.2%}, MOR {m15:.2%} -> {m10:.2%} "
           f"(change {abs(m10 - m15) * 100:.2f} pp, need < 1 pp)")


@pytest.fixture(scope="module")
def cli_8x8(tmp_path_factory):
    d = tmp_path_factory.mktemp("perf")
    cfg = d / "run.ini"
    cfg.write_text("[grid]\ntarget = 2.5e-6\nnz = 8\n[layout]\nrows = 8\ncols = 8\n")
    assert main(["local", "--config", str(cfg)]) == 0
    return d, cfg


@pytest.mark.slow
def test_c07_performance(cli_8x8):
    d, cfg = cli_8x8
    assert main(["solve", "--config", str(cfg), "--out", str(d / "mor.csv")]) == 0
    assert main(["reference", "--config", str(cfg), "--out", str(d / "ref.csv")]) == 0
    log = {e["command"]: e for e in read_run_log(d / "runs.jsonl")}
    s, r = log["solve"], log["reference"]
    t_ratio = r["wall_s"] / s["wall_s"]
    m_ratio = r["peak_mem_bytes"] / s["peak_mem_bytes"]
    record(7, "performance", t_ratio >= 10 and m_ratio >= 5,
           f"8x8 wall {s['wall_s']:.2f} s vs {r['wall_s']:.2f} s ({t_ratio:.1f}x, need 10x), "
           f"peak memory {s['peak_mem_bytes'] / 2**20:.1f} MiB vs {r['peak_mem_bytes'] / 2**20:.1f} MiB "
           f"({m_ratio:.1f}x, need 5x)")


def test_c08_galerkin_orthogonality(small_geom):
    geom, grid = small_geom
    worst_cross, worst_sym, worst_eig, worst_null = 0.0, 0.0, 0.0, 0.0
    for kind in ("tsv", "dummy"):
        rom = make_rom(geom, grid, 4, kind)
        A, _ = assemble(rom.mesh, MATS)
        AT = A @ rom.thermal
        energy_t = rom.thermal @ AT
        energy_i = np.einsum("ij,ij->j", rom.basis, A @ rom.basis)
        cross = np.abs(rom.basis.T @ AT) / np.sqrt(energy_i * energy_t)
        worst_cross = max(worst_cross, cross.max())
        Ae = rom.A_element
        worst_sym = max(worst_sym, np.abs(Ae - Ae.T).max() / np.abs(Ae).max())
        ev = np.linalg.eigvalsh(Ae)
        worst_eig = max(worst_eig, -ev.min() / ev.max())
        for a in range(3):
            e = np.zeros(rom.n)
            e[a::3] = 1.0
            field = rom.reconstruct(e, 0.0)
            expect = np.zeros(3)
            expect[a] = 1.0
            worst_null = max(worst_null, np.abs(Ae @ e).max() / np.abs(Ae).max(),
                             np.abs(field.reshape(-1, 3) - expect).max())
    ok = worst_cross <= 1e-9 and worst_sym <= 1e-12 and worst_eig <= 1e-9 and worst_null <= 1e-9
    record(8, "Galerkin orthogonality", ok,
           f"max |a_i^T A a_T| (relative) = {worst_cross:.1e}, asymmetry {worst_sym:.1e}, "
           f"min eig/max eig = {-worst_eig:.1e}, translation defect {worst_null:.1e}")


@pytest.mark.slow
def test_c09_determinism(cli_8x8):
    d, cfg = cli_8x8
    outs = {}
    for name, threads in (("a", 1), ("b", 1), ("c", 8)):
        path = d / f"det_{name}.csv"
        assert main(["solve", "--config", str(cfg), "--threads", str(threads), "--out", str(path)]) == 0
        outs[name] = path
    bitwise = outs["a"].read_bytes() == outs["b"].read_bytes()
    a = stressgrid.read_csv(outs["a"]).values
    c = stressgrid.read_csv(outs["c"]).values
    rel = np.abs(a - c).max() / np.abs(a).max()
    record(9, "determinism", bitwise and rel <= 1e-12,
           f"1-thread reruns bitwise identical = {bitwise}, 1 vs 8 threads max relative diff {rel:.1e}")


def test_c10_rom_persistence(small_geom, tmp_path):
    geom, grid = small_geom
    rom = make_rom(geom, grid, 3)
    path = tmp_path / "tsv.rom"
    save_rom(rom, path)
    back = load_rom(path, expected_fingerprint=rom.fingerprint)
    fields = ("basis", "thermal", "A_element", "b_element")
    identical = all(getattr(back, f).tobytes() == getattr(rom, f).tobytes() for f in fields)
    save_rom(back, tmp_path / "again.rom")
    identical &= (tmp_path / "again.rom").read_bytes() == path.read_bytes()

    data = path.read_bytes()
    rejected = []
    for name, blob, msg in (
        ("truncated", data[:-16], "corrupt length"),
        ("wrong version", data[:4] + (7).to_bytes(4, "little") + data[8:], "version"),
        ("bad magic", b"XXXX" + data[4:], "magic"),
    ):
        bad = tmp_path / "bad.rom"
        bad.write_bytes(blob)
        try:
            load_rom(bad)
        except RomFormatError as exc:
            rejected.append(msg in str(exc))
        else:
            rejected.append(False)
    record(10, "ROM persistence", identical and all(rejected),
           f"round trip bitwise = {identical}, corrupt/version/magic rejected = {rejected}")
