"""Run configuration stored as INI-style ``key = value`` text.

Sections::

    [geometry]            d, h, t, p (m)
    [materials.copper]    E (Pa), nu, alpha (1/K); same for .liner and .silicon
    [grid]                target, nz, ratio  or explicit x, y, z coordinate lists
    [layout]              rows, cols, kinds, delta_t
    [interpolation]       nx, ny, nz
    [bc]                  kind (clamped | submodel), field, dummy_rings
    [solver]              method, tol, max_iter, preconditioner
    [output]              directory, rom_tsv, rom_dummy, grid_csv, vtk, run_log
    [run]                 threads, resolution, dof_cap, halo

``kinds`` and ``delta_t`` take either a single value for every block or one
row per line / ``;``-separated rows of whitespace-separated entries. Kinds
may be abbreviated ``T`` (tsv) and ``D`` (dummy). Relative paths resolve
against the directory of the config file.
"""

from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .global_stage import ArrayLayout
from .linalg import IterOptions
from .materials import Material, MaterialTable
from .mesh import TensorGrid, UnitBlockGeometry, default_grading
from .rom import NodeLayout

__all__ = ["ConfigError", "GridSpec", "OutputSpec", "RunConfig", "load_config", "parse_config"]


class ConfigError(ValueError):
    """Invalid configuration; ``path`` names the offending field, e.g. ``geometry.t``."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


@dataclass(frozen=True)
class GridSpec:
    """Fine grid of one unit block: graded from a target size, or explicit axes."""

    target: float = 2e-6
    nz: int | None = None
    ratio: float = 1.5
    x: tuple | None = None
    y: tuple | None = None
    z: tuple | None = None

    @property
    def explicit(self) -> bool:
        return self.x is not None

    def build(self, geometry: UnitBlockGeometry) -> TensorGrid:
        if self.explicit:
            return TensorGrid(np.array(self.x), np.array(self.y), np.array(self.z))
        return default_grading(geometry, self.target, nz=self.nz, ratio=self.ratio)


@dataclass(frozen=True)
class OutputSpec:
    directory: str = "."
    rom_tsv: str = "tsv.rom"
    rom_dummy: str = "dummy.rom"
    grid_csv: str = "grid.csv"
    vtk: bool = False
    run_log: str = "runs.jsonl"


@dataclass(frozen=True)
class RunConfig:
    geometry: UnitBlockGeometry = field(default_factory=UnitBlockGeometry)
    materials: MaterialTable = field(default_factory=MaterialTable)
    grid: GridSpec = field(default_factory=GridSpec)
    rows: int = 4
    cols: int = 4
    kinds: tuple = ("tsv",)  # one entry (uniform) or rows*cols entries, row-major
    delta_t: tuple = (-250.0,)
    interpolation: tuple = (4, 4, 4)
    bc_kind: str = "clamped"
    bc_field: str | None = None
    dummy_rings: int = 2
    solver: IterOptions = field(default_factory=IterOptions)
    output: OutputSpec = field(default_factory=OutputSpec)
    threads: int = 1
    resolution: int = 100
    dof_cap: int = 3_000_000
    halo: int = 2
    base_dir: str = "."

    # -- derived objects ---------------------------------------------------

    def fine_grid(self) -> TensorGrid:
        return self.grid.build(self.geometry)

    def node_layout(self) -> NodeLayout:
        nx, ny, nz = self.interpolation
        return NodeLayout(nx, ny, nz, self.geometry.p, self.geometry.h)

    def array_layout(self) -> ArrayLayout:
        """The user's array, before any dummy padding."""
        shape = (self.rows, self.cols)
        kinds = np.array(self.kinds, dtype=object)
        dt = np.array(self.delta_t, dtype=np.float64)
        return ArrayLayout(self.rows, self.cols, self.geometry.p, self.geometry.h,
                           kinds.reshape(shape) if kinds.size > 1 else kinds[0],
                           dt.reshape(shape) if dt.size > 1 else dt[0])

    def resolve(self, name: str) -> Path:
        """Output or input path, relative to the output directory / config file."""
        p = Path(name)
        if p.is_absolute():
            return p
        if name == self.bc_field:
            return Path(self.base_dir) / p
        return Path(self.base_dir) / self.output.directory / p

    def kinds_needed(self) -> list[str]:
        kinds = set(self.kinds)
        if self.bc_kind == "submodel" and self.dummy_rings > 0:
            kinds.add("dummy")
        return sorted(kinds)

    # -- validation --------------------------------------------------------

    def validate(self, check_files: bool = True) -> "RunConfig":
        g = self.geometry
        for name in ("d", "h", "t", "p"):
            v = getattr(g, name)
            if not (np.isfinite(v) and v > 0):
                raise ConfigError(f"geometry.{name}", f"must be positive, got {v}")
        try:
            UnitBlockGeometry(g.d, g.h, g.t, g.p)
        except ValueError as exc:
            raise ConfigError("geometry", str(exc)) from exc
        for name, mat in self.materials.items():
            if not (mat.E > 0):
                raise ConfigError(f"materials.{name}.E", "must be positive")
            if not (-1.0 < mat.nu < 0.5):
                raise ConfigError(f"materials.{name}.nu", "must lie in (-1, 0.5)")
            if not np.isfinite(mat.alpha):
                raise ConfigError(f"materials.{name}.alpha", "must be finite")
        gs = self.grid
        if gs.explicit:
            for name in ("x", "y", "z"):
                axis = getattr(gs, name)
                if axis is None or len(axis) < 2:
                    raise ConfigError(f"grid.{name}", "explicit grids need x, y and z with >= 2 entries")
            try:
                gs.build(g)
            except ValueError as exc:
                raise ConfigError("grid", str(exc)) from exc
        else:
            if not gs.target > 0:
                raise ConfigError("grid.target", "must be positive")
            if gs.nz is not None and gs.nz < 1:
                raise ConfigError("grid.nz", "must be >= 1")
            if not gs.ratio >= 1:
                raise ConfigError("grid.ratio", "must be >= 1")
        if self.rows < 1:
            raise ConfigError("layout.rows", "must be >= 1")
        if self.cols < 1:
            raise ConfigError("layout.cols", "must be >= 1")
        n_cells = self.rows * self.cols
        if len(self.kinds) not in (1, n_cells):
            raise ConfigError("layout.kinds", f"expected 1 or {n_cells} entries, got {len(self.kinds)}")
        if set(self.kinds) - {"tsv", "dummy"}:
            raise ConfigError("layout.kinds", f"unknown kinds {sorted(set(self.kinds) - {'tsv', 'dummy'})}")
        if len(self.delta_t) not in (1, n_cells):
            raise ConfigError("layout.delta_t", f"expected 1 or {n_cells} entries, got {len(self.delta_t)}")
        if not all(np.isfinite(self.delta_t)):
            raise ConfigError("layout.delta_t", "must be finite")
        for axis, n in zip("xyz", self.interpolation):
            if n < 2:
                raise ConfigError(f"interpolation.n{axis}", "must be >= 2")
        if self.bc_kind not in ("clamped", "submodel"):
            raise ConfigError("bc.kind", f"must be clamped or submodel, got {self.bc_kind!r}")
        if self.bc_kind == "submodel":
            if not self.bc_field:
                raise ConfigError("bc.field", "sub-model runs need a displacement field file")
            if check_files and not self.resolve(self.bc_field).is_file():
                raise ConfigError("bc.field", f"file not found: {self.resolve(self.bc_field)}")
        if self.dummy_rings < 0:
            raise ConfigError("bc.dummy_rings", "must be >= 0")
        try:
            IterOptions(**{f.name: getattr(self.solver, f.name) for f in fields(IterOptions)})
        except ValueError as exc:
            raise ConfigError("solver", str(exc)) from exc
        if self.threads < 1:
            raise ConfigError("run.threads", "must be >= 1")
        if self.resolution < 1:
            raise ConfigError("run.resolution", "must be >= 1")
        if self.dof_cap < 1:
            raise ConfigError("run.dof_cap", "must be >= 1")
        if self.halo < 1:
            raise ConfigError("run.halo", "must be >= 1")
        return self

    # -- text form ---------------------------------------------------------

    def to_text(self) -> str:
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str
        g = self.geometry
        cp["geometry"] = {k: repr(float(getattr(g, k))) for k in ("d", "h", "t", "p")}
        for name, mat in self.materials.items():
            cp[f"materials.{name}"] = {"E": repr(mat.E), "nu": repr(mat.nu), "alpha": repr(mat.alpha)}
        gs = self.grid
        if gs.explicit:
            cp["grid"] = {k: _join(getattr(gs, k)) for k in ("x", "y", "z")}
        else:
            cp["grid"] = {"target": repr(gs.target), "ratio": repr(gs.ratio)}
            if gs.nz is not None:
                cp["grid"]["nz"] = str(gs.nz)
        cp["layout"] = {
            "rows": str(self.rows),
            "cols": str(self.cols),
            "kinds": _matrix_text(self.kinds, self.cols, str),
            "delta_t": _matrix_text(self.delta_t, self.cols, repr),
        }
        cp["interpolation"] = dict(zip(("nx", "ny", "nz"), map(str, self.interpolation)))
        cp["bc"] = {"kind": self.bc_kind, "dummy_rings": str(self.dummy_rings)}
        if self.bc_field:
            cp["bc"]["field"] = self.bc_field
        s = self.solver
        cp["solver"] = {"method": s.method, "tol": repr(s.tol), "max_iter": str(s.max_iter),
                        "preconditioner": s.preconditioner}
        o = self.output
        cp["output"] = {"directory": o.directory, "rom_tsv": o.rom_tsv, "rom_dummy": o.rom_dummy,
                        "grid_csv": o.grid_csv, "vtk": str(o.vtk).lower(), "run_log": o.run_log}
        cp["run"] = {"threads": str(self.threads), "resolution": str(self.resolution),
                     "dof_cap": str(self.dof_cap), "halo": str(self.halo)}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    def save(self, path) -> None:
        Path(path).write_text(self.to_text())


def _join(values) -> str:
    return ", ".join(repr(float(v)) for v in values)


def _matrix_text(values, cols, fmt) -> str:
    if len(values) == 1:
        return fmt(values[0])
    rows = [" ".join(fmt(v) for v in values[i:i + cols]) for i in range(0, len(values), cols)]
    return "\n" + "\n".join(rows)


_KIND_ALIASES = {"t": "tsv", "tsv": "tsv", "d": "dummy", "dummy": "dummy"}


def _entries(text: str) -> list[list[str]]:
    rows = [r for line in text.replace(";", "\n").splitlines() if (r := line.split())]
    return rows


class _Section:
    """Typed access to one INI section with field-path errors."""

    def __init__(self, cp, name):
        self.name = name
        self.data = cp[name] if cp.has_section(name) else {}
        self.used = set()

    def get(self, key, conv, default):
        self.used.add(key)
        if key not in self.data:
            return default
        raw = self.data[key].strip()
        try:
            return conv(raw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{self.name}.{key}", f"cannot parse {raw!r} ({exc})") from exc

    def check_unknown(self):
        extra = set(self.data) - self.used
        if extra:
            key = sorted(extra)[0]
            raise ConfigError(f"{self.name}.{key}", "unknown key")


def _bool(s: str) -> bool:
    low = s.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError("expected a boolean")


def _floats(s: str) -> tuple:
    return tuple(float(v) for v in s.replace(",", " ").split())


def parse_config(text: str, base_dir=".", check_files: bool = True) -> RunConfig:
    """Parse configuration text; missing keys take their defaults."""
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError("config", f"malformed file ({exc.__class__.__name__}: {exc})") from exc
    known = {"geometry", "grid", "layout", "interpolation", "bc", "solver", "output", "run",
             "materials.copper", "materials.liner", "materials.silicon"}
    for name in cp.sections():
        if name not in known:
            raise ConfigError(name, "unknown section")
    d = RunConfig()
    sections = []

    def section(name):
        s = _Section(cp, name)
        sections.append(s)
        return s

    s = section("geometry")
    g0 = d.geometry
    geo = {k: s.get(k, float, getattr(g0, k)) for k in ("d", "h", "t", "p")}
    for k, v in geo.items():
        if not v > 0:
            raise ConfigError(f"geometry.{k}", f"must be positive, got {v}")
    try:
        geometry = UnitBlockGeometry(**geo)
    except ValueError as exc:
        raise ConfigError("geometry", str(exc)) from exc

    mats = {}
    for name, m0 in d.materials.items():
        s = section(f"materials.{name}")
        vals = {k: s.get(k, float, getattr(m0, k)) for k in ("E", "nu", "alpha")}
        try:
            mats[name] = Material(**vals)
        except ValueError as exc:
            raise ConfigError(f"materials.{name}", str(exc)) from exc
    materials = MaterialTable(**mats)

    s = section("grid")
    axes = {k: s.get(k, _floats, None) for k in ("x", "y", "z")}
    given = [k for k, v in axes.items() if v is not None]
    if given and len(given) != 3:
        missing = sorted(set("xyz") - set(given))[0]
        raise ConfigError(f"grid.{missing}", "explicit grids need x, y and z")
    if given:
        grid = GridSpec(x=axes["x"], y=axes["y"], z=axes["z"])
        for k in ("target", "nz", "ratio"):
            if k in s.data:
                raise ConfigError(f"grid.{k}", "cannot be combined with explicit axes")
    else:
        grid = GridSpec(target=s.get("target", float, d.grid.target),
                        nz=s.get("nz", int, d.grid.nz),
                        ratio=s.get("ratio", float, d.grid.ratio))

    s = section("layout")
    rows = s.get("rows", int, d.rows)
    cols = s.get("cols", int, d.cols)

    def kinds_conv(raw):
        out = []
        for tok in (t for r in _entries(raw) for t in r):
            if tok.lower() not in _KIND_ALIASES:
                raise ValueError(f"unknown block kind {tok!r}")
            out.append(_KIND_ALIASES[tok.lower()])
        return tuple(out)

    kinds = s.get("kinds", kinds_conv, d.kinds)
    delta_t = s.get("delta_t", lambda raw: tuple(float(t) for r in _entries(raw) for t in r), d.delta_t)

    s = section("interpolation")
    interp = tuple(s.get(k, int, v) for k, v in zip(("nx", "ny", "nz"), d.interpolation))

    s = section("bc")
    bc_kind = s.get("kind", str, d.bc_kind)
    bc_field = s.get("field", str, d.bc_field) or None
    rings = s.get("dummy_rings", int, d.dummy_rings)

    s = section("solver")
    sv = d.solver
    solver_kw = dict(method=s.get("method", str, sv.method), tol=s.get("tol", float, sv.tol),
                     max_iter=s.get("max_iter", int, sv.max_iter),
                     preconditioner=s.get("preconditioner", str, sv.preconditioner))
    try:
        solver = IterOptions(**solver_kw)
    except ValueError as exc:
        raise ConfigError("solver", str(exc)) from exc

    s = section("output")
    o = d.output
    output = OutputSpec(
        directory=s.get("directory", str, o.directory),
        rom_tsv=s.get("rom_tsv", str, o.rom_tsv),
        rom_dummy=s.get("rom_dummy", str, o.rom_dummy),
        grid_csv=s.get("grid_csv", str, o.grid_csv),
        vtk=s.get("vtk", _bool, o.vtk),
        run_log=s.get("run_log", str, o.run_log),
    )

    s = section("run")
    run = dict(threads=s.get("threads", int, d.threads),
               resolution=s.get("resolution", int, d.resolution),
               dof_cap=s.get("dof_cap", int, d.dof_cap),
               halo=s.get("halo", int, d.halo))
    for sec in sections:
        sec.check_unknown()

    cfg = RunConfig(geometry=geometry, materials=materials, grid=grid, rows=rows, cols=cols,
                    kinds=kinds, delta_t=delta_t, interpolation=interp, bc_kind=bc_kind,
                    bc_field=bc_field, dummy_rings=rings, solver=solver, output=output,
                    base_dir=str(base_dir), **run)
    return cfg.validate(check_files=check_files)


def load_config(path, check_files: bool = True) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc.strerror}") from exc
    return parse_config(text, base_dir=path.parent, check_files=check_files)


def with_overrides(cfg: RunConfig, **kw) -> RunConfig:
    """Copy with some fields replaced, re-validated."""
    return replace(cfg, **kw).validate(check_files=False)
