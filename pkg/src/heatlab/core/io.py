from __future__ import annotations

import os
import tempfile
from pathlib import Path
from typing import Any, Iterable

import numpy as np
import pandas as pd

from heatlab.core.discretize import SparseOperator
from heatlab.core.fitting import BoundReport
from heatlab.core.json_utils import pretty_json
from heatlab.core.semigroup import KernelSlice
from heatlab.core.wavecheck import ConeReport


def _num(x: float) -> str:
    return repr(float(x))


def atomic_write_text(path: Path, text: str) -> Path:
    """Write through a temp file in the destination directory, then rename over `path`."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise
    return path


def atomic_write_bytes(path: Path, data: bytes) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise
    return path


def operator_dump(op: SparseOperator) -> str:
    grid = op.grid
    coo = op.matrix.tocoo()
    order = np.lexsort((coo.col, coo.row))
    lines = [f"# {grid.n} {_num(grid.half_width)} {_num(grid.h)} {op.kind.value} {_num(op.tau)}"]
    for i in order:
        v = complex(coo.data[i])
        if v == 0:
            continue
        lines.append(f"{int(coo.row[i])} {int(coo.col[i])} {_num(v.real)} {_num(v.imag)}")
    return "\n".join(lines) + "\n"


def write_operator(path: Path, op: SparseOperator) -> Path:
    return atomic_write_text(path, operator_dump(op))


def kernel_slice_csv(slice_: KernelSlice, values: np.ndarray | None = None) -> str:
    grid = slice_.grid
    param = slice_.param
    header = (
        f"# {slice_.kind.value} {_num(param) if param is not None else 'nan'} {slice_.source} "
        f"{grid.n} {_num(grid.half_width)} {_num(grid.h)} {_num(slice_.tau)}"
    )
    vals = slice_.values if values is None else values
    body = [f"{i} {_num(v.real)} {_num(v.imag)}" for i, v in enumerate(np.asarray(vals, dtype=complex))]
    return "\n".join([header, *body]) + "\n"


def write_kernel_slice(path: Path, slice_: KernelSlice, values: np.ndarray | None = None) -> Path:
    return atomic_write_text(path, kernel_slice_csv(slice_, values))


def write_frame(path: Path, frame: pd.DataFrame) -> Path:
    return atomic_write_text(path, frame.to_csv(index=False, float_format="%.17g", lineterminator="\n"))


def trajectory_frame(cone: ConeReport) -> pd.DataFrame:
    return pd.DataFrame(
        {
            "step": np.arange(len(cone.times)),
            "s": cone.times,
            "energy": cone.energies,
            "outside_fraction": cone.outside_fraction,
        }
    )


def margins_frame(report: BoundReport) -> pd.DataFrame:
    return pd.DataFrame(
        {
            "sample": np.arange(len(report.margins)),
            "value": report.values,
            "predictor": report.predictors,
            "margin": report.margins,
        }
    )


def write_json(path: Path, payload: Any) -> Path:
    return atomic_write_text(path, pretty_json(payload) + "\n")


def remove_files(paths: Iterable[Path]) -> int:
    removed = 0
    for p in paths:
        try:
            Path(p).unlink()
            removed += 1
        except FileNotFoundError:
            continue
    return removed
