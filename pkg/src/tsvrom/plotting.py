"""Heatmap rendering of cut-plane von Mises grids."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .stressgrid import StressGrid  # noqa: E402

# fixed style so repeated renders are byte-identical
STYLE = {
    "font.family": "DejaVu Sans",
    "font.size": 9,
    "axes.linewidth": 0.8,
    "image.interpolation": "nearest",
    "svg.hashsalt": "tsvrom",
}


def render_heatmap(grid: StressGrid, path, title: str | None = None, dpi: int = 150,
                   cmap: str = "viridis") -> tuple[float, float]:
    """Write a PNG heatmap of the whole cut plane; returns (min, max) in Pa.

    The colour scale is linear between the grid minimum and maximum. A
    constant grid gets a uniform image.
    """
    img = grid.mosaic()
    vmin, vmax = float(img.min()), float(img.max())
    hi = vmax if vmax > vmin else vmin + 1.0
    extent_um = np.array([0, grid.cols, 0, grid.rows]) * grid.pitch * 1e6
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5.0, 4.2))
        im = ax.imshow(img / 1e6, origin="lower", extent=extent_um, cmap=cmap,
                       vmin=vmin / 1e6, vmax=hi / 1e6)
        ax.set_xlabel("x (µm)")
        ax.set_ylabel("y (µm)")
        if title:
            ax.set_title(title)
        cb = fig.colorbar(im, ax=ax)
        cb.set_label("von Mises (MPa)")
        ax.text(0.01, -0.16, f"min {vmin / 1e6:.4g} MPa   max {vmax / 1e6:.4g} MPa",
                transform=ax.transAxes, fontsize=8)
        fig.tight_layout()
        fig.savefig(path, dpi=dpi, format="png", metadata={"Software": None})
        plt.close(fig)
    return vmin, vmax
