"""``tsvrom`` command-line front end.

Subcommands::

    tsvrom local     --config run.ini [--out DIR]         build ROM files
    tsvrom solve     --config run.ini [--rom F ...] [--out grid.csv]
    tsvrom reference --config run.ini [--out grid.csv]
    tsvrom superpose --config run.ini [--out grid.csv]
    tsvrom compare   A.csv B.csv [--log runs.jsonl ...] [--out report.json]
    tsvrom render    grid.csv [--out image.png]

Every computing command appends one JSON line to the run log with
``command, wall_s, peak_mem_bytes, dofs, iterations`` (plus the output
path). ``wall_s`` and the memory peak cover the computation only, not
config parsing or writing result files.
"""

from __future__ import annotations

import argparse
import contextlib
import hashlib
import json
import sys
import time
import tracemalloc
import warnings
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import stressgrid
from .baseline import (
    DofCapExceeded,
    SuperpositionModel,
    normalized_mae,
    reference_solve,
    superposition_field,
    superposition_single_solve,
)
from .config import ConfigError, RunConfig, load_config
from .global_stage import GlobalBC, SubmodelBoundaryField, pad_with_dummies, run_global_stage
from .mesh import build_unit_block_mesh
from .rom import FingerprintWarning, RomFormatError, build_rom, fingerprint, load_rom, save_rom
from .stressgrid import StressGrid

__all__ = ["main", "CompareReport", "compare_grids"]


class CommandError(RuntimeError):
    pass


# -- measurement -----------------------------------------------------------

@dataclass
class Measurement:
    wall_s: float = 0.0
    peak_mem_bytes: int = 0


@contextlib.contextmanager
def measured():
    """Wall time and traced allocation peak of the enclosed block."""
    m = Measurement()
    started = not tracemalloc.is_tracing()
    if started:
        tracemalloc.start()
    tracemalloc.reset_peak()
    base = tracemalloc.get_traced_memory()[0]
    t0 = time.perf_counter()
    try:
        yield m
    finally:
        m.wall_s = time.perf_counter() - t0
        m.peak_mem_bytes = max(0, tracemalloc.get_traced_memory()[1] - base)
        if started:
            tracemalloc.stop()


def append_run_log(path: Path, command: str, m: Measurement, dofs: int, iterations: int,
                   output) -> dict:
    entry = {
        "command": command,
        "wall_s": m.wall_s,
        "peak_mem_bytes": int(m.peak_mem_bytes),
        "dofs": int(dofs),
        "iterations": int(iterations),
        "output": str(Path(output).resolve()),
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "a") as fh:
        fh.write(json.dumps(entry) + "\n")
    return entry


def read_run_log(path) -> list[dict]:
    entries = []
    with open(path) as fh:
        for line in fh:
            if line.strip():
                entries.append(json.loads(line))
    return entries


# -- shared helpers ----------------------------------------------------------

def _config(args) -> RunConfig:
    cfg = load_config(args.config)
    if args.threads is not None:
        if args.threads < 1:
            raise ConfigError("run.threads", "must be >= 1")
        cfg = replace(cfg, threads=args.threads)
    return cfg


def _boundary(cfg: RunConfig):
    """Boundary condition and the (possibly padded) solved layout."""
    layout = cfg.array_layout()
    if cfg.bc_kind == "clamped":
        return GlobalBC("clamped"), layout, 0
    field = SubmodelBoundaryField.load(cfg.resolve(cfg.bc_field))
    return GlobalBC("submodel", field), pad_with_dummies(layout, cfg.dummy_rings), cfg.dummy_rings


def _crop(grid: StressGrid, rings: int) -> StressGrid:
    if rings == 0:
        return grid
    return StressGrid(grid.values[rings:-rings, rings:-rings].copy(), grid.pitch)


def _write_grid(cfg: RunConfig, grid: StressGrid, out: Path) -> None:
    out.parent.mkdir(parents=True, exist_ok=True)
    stressgrid.write_csv(grid, out)
    if cfg.output.vtk:
        stressgrid.write_vtk(grid, out.with_suffix(".vtk"))


def _grid_out(cfg: RunConfig, args) -> Path:
    return Path(args.out) if args.out else cfg.resolve(cfg.output.grid_csv)


def _config_fingerprint(cfg: RunConfig, grid) -> bytes:
    return fingerprint(cfg.geometry, grid, cfg.materials, cfg.node_layout())


# -- commands ----------------------------------------------------------------

def cmd_local(args) -> int:
    cfg = _config(args)
    out_dir = Path(args.out) if args.out else None
    paths = {"tsv": cfg.output.rom_tsv, "dummy": cfg.output.rom_dummy}
    with threadpool_limits(cfg.threads):
        with measured() as m:
            grid = cfg.fine_grid()
            roms = {}
            for kind in cfg.kinds_needed():
                mesh = build_unit_block_mesh(cfg.geometry, grid, kind)
                roms[kind] = build_rom(mesh, cfg.materials, cfg.node_layout(), kind,
                                       geometry=cfg.geometry, threads=cfg.threads)
    written = []
    for kind, rom in roms.items():
        path = out_dir / Path(paths[kind]).name if out_dir else cfg.resolve(paths[kind])
        path.parent.mkdir(parents=True, exist_ok=True)
        save_rom(rom, path)
        written.append(path)
    rom = next(iter(roms.values()))
    append_run_log(cfg.resolve(cfg.output.run_log), "local", m, rom.mesh.n_dofs, 0, written[0])
    print(f"n = {rom.n}")
    print(f"fine DoFs per block = {rom.mesh.n_dofs}")
    print(f"local stage wall time = {m.wall_s:.3f} s")
    for path in written:
        print(f"wrote {path}")
    return 0


def _load_roms(cfg: RunConfig, args, expected: bytes) -> dict:
    if args.rom:
        paths = [Path(p) for p in args.rom]
    else:
        names = {"tsv": cfg.output.rom_tsv, "dummy": cfg.output.rom_dummy}
        paths = [cfg.resolve(names[k]) for k in cfg.kinds_needed()]
    roms = {}
    for path in paths:
        with warnings.catch_warnings():
            warnings.simplefilter("error", FingerprintWarning)
            try:
                rom = load_rom(path, expected_fingerprint=expected)
            except FingerprintWarning as exc:
                raise CommandError(f"{path}: ROM fingerprint mismatch with the run configuration "
                                   f"({exc}); rerun `tsvrom local`") from None
        roms[rom.kind] = rom
    missing = set(cfg.kinds_needed()) - set(roms)
    if missing:
        raise CommandError(f"no ROM given for block kind(s) {sorted(missing)}")
    return roms


def cmd_solve(args) -> int:
    cfg = _config(args)
    out = _grid_out(cfg, args)
    with threadpool_limits(cfg.threads):
        with measured() as m:
            roms = _load_roms(cfg, args, _config_fingerprint(cfg, cfg.fine_grid()))
            bc, layout, rings = _boundary(cfg)
            sol = run_global_stage(roms, layout, bc, cfg.solver, cfg.resolution, cfg.threads)
            grid = _crop(sol.grid, rings)
    _write_grid(cfg, grid, out)
    append_run_log(cfg.resolve(cfg.output.run_log), "solve", m, sol.index.n_dofs,
                   sol.info.iterations, out)
    print(f"global DoFs = {sol.index.n_dofs}, iterations = {sol.info.iterations} "
          f"({sol.info.method}), residual = {sol.info.residual:.3e}")
    print(f"global stage wall time = {m.wall_s:.3f} s")
    print(f"wrote {out}")
    return 0


def cmd_reference(args) -> int:
    cfg = _config(args)
    out = _grid_out(cfg, args)
    with threadpool_limits(cfg.threads):
        with measured() as m:
            bc, layout, rings = _boundary(cfg)
            ref = reference_solve(layout, bc, cfg.geometry, cfg.fine_grid(), cfg.materials,
                                  cfg.solver, cfg.resolution, cfg.dof_cap, cfg.threads)
            grid = _crop(ref.grid, rings)
    _write_grid(cfg, grid, out)
    append_run_log(cfg.resolve(cfg.output.run_log), "reference", m, ref.dofs, ref.iterations, out)
    print(f"fine DoFs = {ref.dofs}, iterations = {ref.iterations}, residual = {ref.residual:.3e}")
    print(f"reference wall time = {m.wall_s:.3f} s")
    print(f"wrote {out}")
    return 0


def _superposition_cache(cfg: RunConfig, grid) -> Path:
    h = hashlib.sha256(_config_fingerprint(cfg, grid))
    h.update(np.array([cfg.halo, cfg.resolution], dtype="<i8").tobytes())
    h.update(np.array([cfg.solver.tol], dtype="<f8").tobytes())
    return cfg.resolve(f"superposition-{h.hexdigest()[:16]}.npz")


def _superposition_model(cfg: RunConfig) -> tuple[SuperpositionModel, int, int]:
    grid = cfg.fine_grid()
    cache = _superposition_cache(cfg, grid)
    if cache.is_file():
        with np.load(cache) as z:
            model = SuperpositionModel(z["perturbation"], z["background"], int(z["halo"]),
                                       float(z["pitch"]), float(z["delta_t"]))
        return model, 0, 0
    model = superposition_single_solve(cfg.geometry, grid, cfg.materials, cfg.halo,
                                       delta_t=-250.0, opts=cfg.solver,
                                       resolution=cfg.resolution, threads=cfg.threads)
    cache.parent.mkdir(parents=True, exist_ok=True)
    np.savez(cache, perturbation=model.perturbation, background=model.background,
             halo=model.halo, pitch=model.pitch, delta_t=model.delta_t)
    size = 2 * cfg.halo + 1
    dofs = 3 * ((grid.x.size - 1) * size + 1) * ((grid.y.size - 1) * size + 1) * grid.z.size
    return model, dofs, 1


def cmd_superpose(args) -> int:
    cfg = _config(args)
    out = _grid_out(cfg, args)
    with threadpool_limits(cfg.threads):
        with measured() as m:
            model, dofs, _ = _superposition_model(cfg)
            grid = superposition_field(model, cfg.array_layout())
    _write_grid(cfg, grid, out)
    append_run_log(cfg.resolve(cfg.output.run_log), "superpose", m, dofs, 0, out)
    print(f"superposition halo = {model.halo}, edge decay = {model.edge_decay():.2%}")
    print(f"superposition wall time = {m.wall_s:.3f} s")
    print(f"wrote {out}")
    return 0


@dataclass
class CompareReport:
    normalized_mae: float
    max_abs_error: float
    max_error_location: dict
    runs: dict  # label -> {"wall_s", "peak_mem_bytes"} or None

    def text(self) -> str:
        loc = self.max_error_location
        lines = [
            f"normalized MAE    {self.normalized_mae:.6%}",
            f"max abs error     {self.max_abs_error:.6g} Pa",
            f"  at block ({loc['block_row']}, {loc['block_col']}) point ({loc['px']}, {loc['py']}) "
            f"x = {loc['x']:.6g} m, y = {loc['y']:.6g} m",
        ]
        for label, run in self.runs.items():
            if run is None:
                lines.append(f"{label:<17} no run log entry")
            else:
                lines.append(f"{label:<17} wall {run['wall_s']:.3f} s, "
                             f"peak memory {run['peak_mem_bytes'] / 2**20:.1f} MiB ({run['command']})")
        return "\n".join(lines)


def compare_grids(a: StressGrid, truth: StressGrid, runs: dict | None = None) -> CompareReport:
    """Metrics of ``a`` against the ground-truth grid ``truth``."""
    mae = normalized_mae(a, truth)
    diff = np.abs(a.values - truth.values)
    r, c, iy, ix = np.unravel_index(int(np.argmax(diff)), diff.shape)
    x, y = truth.coordinates()
    loc = {"block_row": int(r), "block_col": int(c), "px": int(ix), "py": int(iy),
           "x": float(x[r, c, iy, ix]), "y": float(y[r, c, iy, ix])}
    return CompareReport(mae, float(diff.max()), loc, runs or {})


def _find_run(logs: list[Path], csv_path: Path):
    target = str(csv_path.resolve())
    found = None
    for log in logs:
        if log.is_file():
            for entry in read_run_log(log):
                if entry.get("output") == target:
                    found = entry
    return found


def cmd_compare(args) -> int:
    a_path, b_path = Path(args.grid_a), Path(args.grid_b)
    a, b = stressgrid.read_csv(a_path), stressgrid.read_csv(b_path)
    if a.values.shape != b.values.shape:
        raise CommandError(f"grid shape mismatch: {a.values.shape} vs {b.values.shape}")
    logs = [Path(p) for p in args.log] if args.log else sorted(
        {a_path.parent / "runs.jsonl", b_path.parent / "runs.jsonl"})
    runs = {"run A": _find_run(logs, a_path), "run B (truth)": _find_run(logs, b_path)}
    report = compare_grids(a, b, runs)
    out = Path(args.out) if args.out else Path("compare.json")
    out.parent.mkdir(parents=True, exist_ok=True)
    payload = asdict(report) | {"grid_a": str(a_path), "grid_b": str(b_path)}
    out.write_text(json.dumps(payload, indent=2) + "\n")
    print(report.text())
    print(f"wrote {out}")
    return 0


def cmd_render(args) -> int:
    from .plotting import render_heatmap

    grid = stressgrid.read_csv(args.grid)
    out = Path(args.out) if args.out else Path(args.grid).with_suffix(".png")
    out.parent.mkdir(parents=True, exist_ok=True)
    vmin, vmax = render_heatmap(grid, out, title=Path(args.grid).name)
    print(f"min = {vmin:.9g} Pa")
    print(f"max = {vmax:.9g} Pa")
    print(f"wrote {out}")
    return 0


# -- entry point ---------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tsvrom",
                                     description="Reduced-order thermal stress analysis of TSV arrays.")
    sub = parser.add_subparsers(dest="command", required=True)

    def with_config(name, help_, fn):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", required=True, help="run configuration file")
        p.add_argument("--out", help="output path")
        p.add_argument("--threads", type=int, help="thread count (overrides run.threads)")
        p.set_defaults(func=fn)
        return p

    with_config("local", "build the unit-block ROM files (--out: directory)", cmd_local)
    p = with_config("solve", "global stage on the configured array", cmd_solve)
    p.add_argument("--rom", nargs="+", help="ROM files (default: paths from the config)")
    with_config("reference", "full fine-mesh reference solve", cmd_reference)
    with_config("superpose", "linear-superposition estimate", cmd_superpose)

    p = sub.add_parser("compare", help="error metrics of grid A against ground-truth grid B")
    p.add_argument("grid_a")
    p.add_argument("grid_b")
    p.add_argument("--log", nargs="+", help="run logs to read timings from")
    p.add_argument("--out", help="JSON report path (default compare.json)")
    p.add_argument("--threads", type=int, help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("render", help="PNG heatmap of a grid CSV")
    p.add_argument("grid")
    p.add_argument("--out", help="image path (default: CSV path with .png)")
    p.add_argument("--threads", type=int, help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_render)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, CommandError, RomFormatError, DofCapExceeded, ValueError,
            OSError, ArithmeticError, RuntimeError) as exc:
        print(f"tsvrom {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
