"""Cut-plane von Mises grids and their CSV / VTK representations."""

from __future__ import annotations

import warnings

from dataclasses import dataclass

import numpy as np

CSV_HEADER = "block_row,block_col,px,py,x,y,von_mises"


@dataclass(eq=False)
class StressGrid:
    """Von Mises values per block on a regular raster.

    ``values[r, c, iy, ix]`` is the value at
    ``x = c p + (ix + 0.5) p / res``, ``y = r p + (iy + 0.5) p / res``.
    """

    values: np.ndarray
    pitch: float

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 4 or self.values.shape[2] != self.values.shape[3]:
            raise ValueError("stress grid must have shape (rows, cols, res, res)")

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def cols(self) -> int:
        return self.values.shape[1]

    @property
    def resolution(self) -> int:
        return self.values.shape[2]

    def mosaic(self) -> np.ndarray:
        """Whole-array image (rows*res, cols*res), y index first."""
        r, c, n, _ = self.values.shape
        return self.values.transpose(0, 2, 1, 3).reshape(r * n, c * n)

    def coordinates(self):
        """(x, y) arrays matching ``values``."""
        return raster_points(self.rows, self.cols, self.resolution, self.pitch)


def raster_offsets(resolution: int, pitch: float) -> np.ndarray:
    return (np.arange(resolution) + 0.5) * (pitch / resolution)


def raster_points(rows: int, cols: int, resolution: int, pitch: float):
    off = raster_offsets(resolution, pitch)
    r, c, iy, ix = np.meshgrid(np.arange(rows), np.arange(cols), np.arange(resolution),
                               np.arange(resolution), indexing="ij")
    return c * pitch + off[ix], r * pitch + off[iy]


def block_plane_points(resolution: int, pitch: float, z: float) -> np.ndarray:
    """Raster points of one block (iy-major) at height z, block-local coordinates."""
    off = raster_offsets(resolution, pitch)
    Y, X = np.meshgrid(off, off, indexing="ij")
    return np.column_stack([X.ravel(), Y.ravel(), np.full(X.size, z)])


def write_csv(grid: StressGrid, path) -> None:
    rows, cols, res, _ = grid.values.shape
    r, c, iy, ix = np.meshgrid(np.arange(rows), np.arange(cols), np.arange(res),
                               np.arange(res), indexing="ij")
    x, y = grid.coordinates()
    table = np.column_stack([r.ravel(), c.ravel(), ix.ravel(), iy.ravel(),
                             x.ravel(), y.ravel(), grid.values.ravel()])
    np.savetxt(path, table, fmt=["%d", "%d", "%d", "%d", "%.17g", "%.17g", "%.17g"],
               delimiter=",", header=CSV_HEADER, comments="")


def read_csv(path) -> StressGrid:
    """Parse a grid CSV; rows may come in any order."""
    with open(path) as fh:
        header = fh.readline().strip()
        if header != CSV_HEADER:
            raise ValueError(f"{path}: malformed stress grid CSV header {header!r}")
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", UserWarning)  # empty body is reported below
                data = np.loadtxt(fh, delimiter=",", ndmin=2)
        except ValueError as exc:
            raise ValueError(f"{path}: malformed stress grid CSV ({exc})") from exc
    if data.size == 0 or data.shape[1] != 7:
        raise ValueError(f"{path}: malformed stress grid CSV (expected 7 columns)")
    idx = data[:, :4].astype(np.int64)
    if np.any(idx != data[:, :4]) or np.any(idx < 0):
        raise ValueError(f"{path}: grid indices must be non-negative integers")
    rows, cols = idx[:, 0].max() + 1, idx[:, 1].max() + 1
    res = idx[:, 2].max() + 1
    if data.shape[0] != rows * cols * res * res or idx[:, 3].max() + 1 != res:
        raise ValueError(f"{path}: incomplete stress grid")
    values = np.full((rows, cols, res, res), np.nan)
    values[idx[:, 0], idx[:, 1], idx[:, 3], idx[:, 2]] = data[:, 6]
    if np.isnan(values).any():
        raise ValueError(f"{path}: duplicate or missing grid points")
    # pitch from the first block's x spacing
    x0 = data[(idx[:, 1] == 0) & (idx[:, 2] == 0), 4][0]
    pitch = 2.0 * x0 * res
    return StressGrid(values, pitch)


def write_vtk(grid: StressGrid, path) -> None:
    """Legacy ASCII VTK structured points over the whole cut plane."""
    img = grid.mosaic()
    ny, nx = img.shape
    dx = grid.pitch / grid.resolution
    with open(path, "w") as fh:
        fh.write("# vtk DataFile Version 3.0\nvon Mises cut plane\nASCII\nDATASET STRUCTURED_POINTS\n")
        fh.write(f"DIMENSIONS {nx} {ny} 1\nORIGIN {dx / 2:.17g} {dx / 2:.17g} 0\n")
        fh.write(f"SPACING {dx:.17g} {dx:.17g} 1\nPOINT_DATA {nx * ny}\n")
        fh.write("SCALARS von_mises double 1\nLOOKUP_TABLE default\n")
        np.savetxt(fh, img.ravel(), fmt="%.17g")
