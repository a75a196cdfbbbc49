"""SVG figures. Presentation only; nothing downstream reads them."""
from __future__ import annotations

import io
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from heatlab.core.io import atomic_write_bytes  # noqa: E402
from heatlab.core.semigroup import KernelSlice  # noqa: E402
from heatlab.core.wavecheck import ConeReport  # noqa: E402

FLOOR = 1e-16
CMAP = "viridis"

plt.rcParams.update(
    {
        "svg.hashsalt": "heatlab",
        "svg.fonttype": "none",
        "figure.figsize": (5.0, 4.2),
        "font.size": 9,
    }
)


def _save(fig: plt.Figure, path: Path) -> Path:
    buf = io.BytesIO()
    fig.savefig(buf, format="svg", metadata={"Date": None}, bbox_inches="tight")
    plt.close(fig)
    return atomic_write_bytes(path, buf.getvalue())


def slice_heatmap(path: Path, slice_: KernelSlice, *, title: str | None = None, filtered: bool = True) -> Path:
    """log10 |kernel| over the grid, source marked."""
    grid = slice_.grid
    values = slice_.density() if filtered else slice_.values
    image = np.log10(np.maximum(np.abs(values), FLOOR)).reshape(grid.n, grid.n)
    L = grid.half_width
    fig, ax = plt.subplots()
    # node index is a + n*b with a along x
    im = ax.imshow(image, origin="lower", extent=(-L, L, -L, L), cmap=CMAP, interpolation="nearest")
    zw = complex(grid.z[slice_.source])
    ax.plot([zw.real], [zw.imag], marker="+", color="white", markersize=8)
    ax.set_xlabel("x")
    ax.set_ylabel("y")
    param = slice_.param
    ax.set_title(title or f"{slice_.kind.value}" + (f"  {param:.4g}" if param is not None else ""))
    fig.colorbar(im, ax=ax, label="log10 |K|")
    return _save(fig, path)


def energy_plot(path: Path, cone: ConeReport, totals: Sequence[float] | None = None) -> Path:
    fig, ax = plt.subplots()
    ax.plot(cone.times, cone.energies, "b-", label="inside cone")
    if totals is not None:
        ax.plot(cone.times, list(totals)[: len(cone.times)], "k--", label="total")
    ax.set_xlabel("s")
    ax.set_ylabel("energy")
    ax.set_title(f"cone at {cone.center.real:.2f}{cone.center.imag:+.2f}i, radius {cone.horizon:.2f}")
    ax.legend(loc="best")
    return _save(fig, path)


def margin_histogram(path: Path, name: str, margins: Sequence[float]) -> Path:
    fig, ax = plt.subplots()
    ax.hist(np.asarray(margins, dtype=float), bins=40, color="0.4")
    ax.set_xlabel("1 - value / (C predictor)")
    ax.set_ylabel("samples")
    ax.set_title(name)
    return _save(fig, path)
