from __future__ import annotations

import logging
import re
from pathlib import Path
from typing import Any, Dict, Iterator

import numpy as np

from heatlab.core.bounds import KernelWorkbench, apply_derivative
from heatlab.core.discretize import l2_norm
from heatlab.core.io import write_json, write_kernel_slice
from heatlab.core.models import ExperimentConfig, as_complex
from heatlab.core.semigroup import (
    DENSE_LIMIT,
    KernelSlice,
    SliceKind,
    decompose,
    g_tilde_column,
    g_tilde_norm_ladder,
    green_and_relative,
    heat_kernel_column,
    landau_levels,
    laplace_quadrature,
    level_spacing,
    resolvent_column,
)
from heatlab.modules.base import Cell, ExperimentModule

logger = logging.getLogger(__name__)

ISOSPECTRAL_FLOOR = 1e-6


def _slug(text: str) -> str:
    return re.sub(r"[^A-Za-z0-9.]+", "-", text).strip("-")


def _slices(bench: KernelWorkbench, kind: SliceKind, w: int, config: ExperimentConfig) -> Iterator[KernelSlice]:
    kcfg = config.kernel
    if kind is SliceKind.HTILDE:
        for s in kcfg.s_values:
            yield heat_kernel_column(bench.box_tilde, s, w, tol=bench.tol)
    elif kind is SliceKind.H:
        for s in kcfg.s_values:
            yield heat_kernel_column(bench.box, s, w, tol=bench.tol, deflate=bench.deflation)
    elif kind is SliceKind.GTILDE:
        for s in kcfg.s_values:
            yield g_tilde_column(bench.box_tilde, bench.projector, s, w, tol=bench.tol)
    elif kind is SliceKind.SZEGO:
        yield bench.projector.column(w)
    elif kind in (SliceKind.GREEN, SliceKind.R):
        green, rel = green_and_relative(bench.p, bench.tau, bench.grid, w, projector=bench.projector)
        yield green if kind is SliceKind.GREEN else rel
    elif kind is SliceKind.RESOLVENT:
        for lam in kcfg.lambdas:
            out = resolvent_column(bench.box_tilde, lam, w)
            laplace = laplace_quadrature(bench.box_tilde, w, lam, t_max=40.0 / lam, tol=bench.tol)
            out.extras["laplace_residual"] = l2_norm(bench.grid, laplace - out.values) / out.norm()
            yield out


def _spectrum(bench: KernelWorkbench) -> dict[str, Any]:
    tilde = decompose(bench.box_tilde, "full", dense_limit=bench.dense_limit)
    plain = decompose(bench.box, "full", dense_limit=bench.dense_limit)
    cut, gap = tilde.null_split()
    a, b = tilde.eigenvalues, plain.eigenvalues
    a, b = a[a > ISOSPECTRAL_FLOOR], b[b > ISOSPECTRAL_FLOOR]
    if a.size == b.size:
        mismatch = float(np.max(np.abs(a - b))) if a.size else 0.0
    else:
        logger.warning("box spectra above %g differ in size: %d vs %d", ISOSPECTRAL_FLOOR, a.size, b.size)
        mismatch = float("inf")
    out: dict[str, Any] = {
        "lowest": float(tilde.eigenvalues[0]),
        "null_count": int(cut),
        "gap": float(gap),
        "isospectral_mismatch": mismatch,
    }
    if bench.p is not None and bench.tau > 0:
        spacing = level_spacing(bench.p, bench.tau, bench.grid)
        out["level_spacing"] = spacing
        out["landau_levels"] = [c.to_dict() for c in landau_levels(tilde.eigenvalues, spacing)]
    return out


class KernelModule(ExperimentModule):
    @property
    def name(self) -> str:
        return "kernel"

    @property
    def description(self) -> str:
        return "Heat, relative heat, Szego, Green, relative-solution and resolvent kernel slices with diagnostics."

    def run(self, config: ExperimentConfig, cell: Cell, out_dir: Path, **kwargs: Any) -> Dict[str, Any]:
        plot = bool(kwargs.get("plot", config.plot))
        grid = cell.grid.build()
        dense_limit = config.engine.dense_limit or kwargs.get("dense_limit") or DENSE_LIMIT
        bench = KernelWorkbench(
            config.build_polynomial(), cell.tau, grid, tol=config.engine.tol, dense_limit=dense_limit,
            szego_degree=config.engine.szego_degree,
        )
        target = cell.directory(out_dir, self.name)
        files: list[Path] = []
        records: list[dict[str, Any]] = []
        derivatives = [d.spec() for d in config.kernel.derivatives]
        needs_tau = {SliceKind.GTILDE, SliceKind.SZEGO, SliceKind.GREEN, SliceKind.R}

        for point in config.kernel.sources:
            w = grid.nearest(as_complex(point))
            for kind in config.kernel.kinds:
                if kind in needs_tau and bench.projector is None:
                    logger.info("kernel %s: %s skipped at tau=%s", cell.key, kind.value, cell.tau)
                    continue
                for slice_ in _slices(bench, kind, w, config):
                    variants = [("", slice_)]
                    if kind in (SliceKind.H, SliceKind.HTILDE, SliceKind.GTILDE, SliceKind.SZEGO):
                        variants += [(f"_{_slug(d.label)}", apply_derivative(slice_, bench, d)) for d in derivatives]
                    for suffix, item in variants:
                        param = item.param
                        stem = f"{kind.value}_w{w}" + (f"_p{param:g}" if param is not None else "") + suffix
                        files.append(write_kernel_slice(target / f"{stem}.csv", item))
                        if plot:
                            from heatlab.core.plots import slice_heatmap

                            files.append(slice_heatmap(target / f"{stem}.svg", item))
                        records.append(
                            {
                                "file": f"{stem}.csv",
                                "kind": kind.value,
                                "param": param,
                                "source": w,
                                "diagonal": item.diagonal,
                                "norm": item.norm(),
                                "warnings": list(item.warnings),
                                "extras": {k: v for k, v in item.extras.items() if np.isscalar(v) or isinstance(v, str)},
                            }
                        )

        summary: dict[str, Any] = {"tau": cell.tau, "n": grid.n, "L": grid.half_width, "slices": records}
        projector = bench.projector
        if projector is not None:
            w0 = grid.nearest(as_complex(config.kernel.sources[0]))
            inner = np.abs(grid.z) < 0.5 * grid.half_width
            zbar_s = bench.zbar.matrix @ projector.basis
            summary["szego"] = {
                "method": projector.method,
                "rank": projector.rank,
                "orthonormality_defect": float(np.max(np.abs(projector.basis.conj().T @ projector.basis - np.eye(projector.rank)))),
                "zbar_annihilation": float(np.max(np.abs(zbar_s[inner]))) if projector.rank else 0.0,
                "subspace_angle": projector.subspace_angle,
            }
            ladder = np.geomspace(0.25, 4.0, 9)
            norms, rate = g_tilde_norm_ladder(bench.box_tilde, projector, w0, ladder, tol=bench.tol)
            summary["relative_decay"] = {"s": ladder.tolist(), "norms": norms.tolist(), "rate": rate}
        if grid.size <= bench.dense_limit:
            summary["spectrum"] = _spectrum(bench)
            if "relative_decay" in summary:
                gap = summary["spectrum"]["gap"]
                summary["relative_decay"]["gap"] = gap
                summary["relative_decay"]["rate_vs_gap"] = summary["relative_decay"]["rate"] / gap if gap > 0 else None
        files.append(write_json(target / "kernel_report.json", summary))
        logger.info("kernel %s: %d slices", cell.key, len(records))
        return {"status": "success", "failed": False, "summary": {"slices": len(records)}, "output_files": [str(f) for f in files]}
